pub mod covariance;
pub mod data;
pub mod effects;
pub mod error;
pub mod fit;
pub mod hdmr;
pub mod io;
pub mod kernel;
pub mod model;
pub mod model_io;
pub mod quadrature;
pub mod sensitivity;
pub mod sim;
mod optim;

pub use covariance::HyperParams;
pub use data::{Dataset, GridDataset};
pub use error::{FoagpError, Result};
pub use fit::{fit, FitConfig, Optimizer};
pub use kernel::{KernelFamily, KernelSpec, MomentCache};
pub use model::{FittedModel, TrainingData};

/// Environment variable capping the number of threads used by dense linear algebra.
pub const THREADS_ENV: &str = "FOAGP_THREADS";

/// Sets linear-algebra parallelism: `Some(1)` is sequential, `Some(n)` uses `n`
/// threads and `None` reads `FOAGP_THREADS` (all cores when unset).
pub fn set_threads(n: Option<usize>) -> Result<usize> {
    let n = match n {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| FoagpError::InvalidInput(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")))?,
            Err(_) => 0,
        },
    };
    let par = if n == 1 { faer::Par::Seq } else { faer::Par::rayon(n) };
    faer::set_global_parallelism(par);
    Ok(faer::get_global_parallelism().degree())
}

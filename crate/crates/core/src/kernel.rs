//! Base kernels and the empirical orthogonalization transform.
//!
//! Every input kernel used by the model is a squared-exponential kernel
//! recentered against the empirical distribution of its training column:
//!
//! `k~(a, b) = k(a, b) - m(a) m(b) / m_bar`
//!
//! where `m(x) = (1/N) sum_v k(x, x_v)` and `m_bar` is the mean of `m` over the
//! training column. With these plug-in moments the average of `k~(x_u, b)` over
//! the training column vanishes for every `b`, which is what makes the fitted
//! effects exactly zero-mean under the empirical measure.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{FoagpError, Result};

/// Orthogonal kernels refuse to divide by a grand mean below this value.
pub const GRAND_MEAN_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(-(a - b)^2 / (2 theta^2))`
    SquaredExponential,
    /// `exp(-theta^2 sin^2(pi (a - b) / period))`
    Periodic { period: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub theta: f64,
}

impl KernelSpec {
    pub fn squared_exponential(theta: f64) -> Result<Self> {
        let spec = KernelSpec { family: KernelFamily::SquaredExponential, theta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn periodic(theta: f64, period: f64) -> Result<Self> {
        let spec = KernelSpec { family: KernelFamily::Periodic { period }, theta };
        spec.validate()?;
        Ok(spec)
    }

    /// Same family with a different length-scale parameter.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        let spec = KernelSpec { family: self.family, theta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(FoagpError::InvalidInput(format!(
                "kernel parameter theta must be positive and finite, got {}",
                self.theta
            )));
        }
        if let KernelFamily::Periodic { period } = self.family {
            if !(period.is_finite() && period > 0.0) {
                return Err(FoagpError::InvalidInput(format!(
                    "kernel period must be positive and finite, got {period}"
                )));
            }
        }
        Ok(())
    }

    /// Evaluates the base kernel, rejecting non-finite arguments.
    pub fn eval(&self, a: f64, b: f64) -> Result<f64> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(FoagpError::InvalidInput(format!(
                "kernel arguments must be finite, got ({a}, {b})"
            )));
        }
        Ok(self.k(a, b))
    }

    #[inline]
    pub(crate) fn k(&self, a: f64, b: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => {
                let r = (a - b) / self.theta;
                (-0.5 * r * r).exp()
            }
            KernelFamily::Periodic { period } => {
                let s = (std::f64::consts::PI * (a - b) / period).sin();
                (-self.theta * self.theta * s * s).exp()
            }
        }
    }

    /// Kernel value together with its derivative with respect to `log theta`.
    #[inline]
    pub(crate) fn k_and_dlog_theta(&self, a: f64, b: f64) -> (f64, f64) {
        match self.family {
            KernelFamily::SquaredExponential => {
                let r = (a - b) / self.theta;
                let r2 = r * r;
                let k = (-0.5 * r2).exp();
                (k, k * r2)
            }
            KernelFamily::Periodic { period } => {
                let s = (std::f64::consts::PI * (a - b) / period).sin();
                let q = self.theta * self.theta * s * s;
                let k = (-q).exp();
                (k, -2.0 * q * k)
            }
        }
    }
}

/// Empirical kernel moments of one training column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCache {
    pub row_means: Vec<f64>,
    pub grand_mean: f64,
    pub column: Vec<f64>,
}

impl MomentCache {
    pub fn build(spec: &KernelSpec, column: &[f64]) -> Result<Self> {
        spec.validate()?;
        if column.len() < 2 {
            return Err(FoagpError::InsufficientData { needed: 2, got: column.len() });
        }
        if let Some(bad) = column.iter().find(|v| !v.is_finite()) {
            return Err(FoagpError::InvalidInput(format!("non-finite training value {bad}")));
        }
        let row_means: Vec<f64> = column.iter().map(|&x| mean_kernel(spec, column, x)).collect();
        let grand_mean = row_means.iter().sum::<f64>() / row_means.len() as f64;
        Ok(MomentCache { row_means, grand_mean, column: column.to_vec() })
    }

    /// `m(x) = (1/N) sum_v k(x, x_v)` over the cached training column.
    pub fn mean_at(&self, spec: &KernelSpec, x: f64) -> f64 {
        mean_kernel(spec, &self.column, x)
    }

    pub fn len(&self) -> usize {
        self.column.len()
    }

    pub fn is_empty(&self) -> bool {
        self.column.is_empty()
    }

    pub(crate) fn check_nondegenerate(&self) -> Result<()> {
        if !(self.grand_mean >= GRAND_MEAN_FLOOR) {
            return Err(FoagpError::DegenerateKernel {
                grand_mean: self.grand_mean,
                floor: GRAND_MEAN_FLOOR,
            });
        }
        Ok(())
    }
}

#[inline]
fn mean_kernel(spec: &KernelSpec, column: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &v in column {
        acc += spec.k(x, v);
    }
    acc / column.len() as f64
}

/// Orthogonal kernel evaluation `k(a,b) - m(a) m(b) / m_bar`.
pub fn eval_orthogonal(spec: &KernelSpec, cache: &MomentCache, a: f64, b: f64) -> Result<f64> {
    cache.check_nondegenerate()?;
    let kab = spec.eval(a, b)?;
    let ma = cache.mean_at(spec, a);
    let mb = cache.mean_at(spec, b);
    Ok(kab - ma * mb / cache.grand_mean)
}

/// Pairwise kernel matrix; orthogonal when a moment cache is supplied.
pub fn kernel_matrix(
    spec: &KernelSpec,
    cache: Option<&MomentCache>,
    rows: &[f64],
    cols: &[f64],
) -> Result<Mat<f64>> {
    spec.validate()?;
    if let Some(bad) = rows.iter().chain(cols).find(|v| !v.is_finite()) {
        return Err(FoagpError::InvalidInput(format!("non-finite kernel argument {bad}")));
    }
    match cache {
        None => Ok(Mat::from_fn(rows.len(), cols.len(), |i, j| spec.k(rows[i], cols[j]))),
        Some(cache) => {
            cache.check_nondegenerate()?;
            let mr: Vec<f64> = rows.iter().map(|&x| cache.mean_at(spec, x)).collect();
            let mc: Vec<f64> = cols.iter().map(|&x| cache.mean_at(spec, x)).collect();
            let g = cache.grand_mean;
            Ok(Mat::from_fn(rows.len(), cols.len(), |i, j| {
                spec.k(rows[i], cols[j]) - mr[i] * mc[j] / g
            }))
        }
    }
}

/// Orthogonal kernel vector `k~(x, X_i)` against the cached training column.
pub(crate) fn orthogonal_vector(spec: &KernelSpec, cache: &MomentCache, x: f64) -> Vec<f64> {
    let mx = cache.mean_at(spec, x);
    let g = cache.grand_mean;
    cache
        .column
        .iter()
        .zip(&cache.row_means)
        .map(|(&v, &mv)| spec.k(x, v) - mx * mv / g)
        .collect()
}

/// Training Gram matrix of the orthogonal kernel plus the moment cache, and
/// optionally the derivative of the Gram matrix with respect to `log theta`
/// (including the dependence of the moments on theta).
pub(crate) struct TrainingGram {
    pub cache: MomentCache,
    pub gram: Mat<f64>,
    pub dgram: Option<Mat<f64>>,
}

pub(crate) fn orthogonal_training_gram(
    spec: &KernelSpec,
    column: &[f64],
    with_derivative: bool,
) -> Result<TrainingGram> {
    let n = column.len();
    if n < 2 {
        return Err(FoagpError::InsufficientData { needed: 2, got: n });
    }
    let (mut gram, dbase) = base_training_gram(spec, column, with_derivative);
    let nf = n as f64;
    // Column sums of the symmetric matrix, in ascending order like `MomentCache::mean_at`.
    let col_means = |m: &Mat<f64>| -> Vec<f64> {
        (0..n).map(|j| m.col_as_slice(j).iter().fold(0.0, |acc, v| acc + v) / nf).collect()
    };
    let row_means = col_means(&gram);
    let grand_mean = row_means.iter().sum::<f64>() / nf;
    let cache = MomentCache { row_means, grand_mean, column: column.to_vec() };
    cache.check_nondegenerate()?;

    let m = &cache.row_means;
    let g = grand_mean;
    let dgram = dbase.map(|mut db| {
        let dm = col_means(&db);
        let dg = dm.iter().sum::<f64>() / nf;
        for j in 0..n {
            let col = db.col_as_slice_mut(j);
            for (i, v) in col.iter_mut().enumerate() {
                *v += -(dm[i] * m[j] + m[i] * dm[j]) / g + m[i] * m[j] * dg / (g * g);
            }
        }
        db
    });
    for j in 0..n {
        let col = gram.col_as_slice_mut(j);
        for (i, v) in col.iter_mut().enumerate() {
            *v -= m[i] * m[j] / g;
        }
    }
    Ok(TrainingGram { cache, gram, dgram })
}

/// Base-kernel Gram matrix and optional `log theta` derivative.
pub(crate) fn base_training_gram(
    spec: &KernelSpec,
    column: &[f64],
    with_derivative: bool,
) -> (Mat<f64>, Option<Mat<f64>>) {
    let n = column.len();
    let mut base = Mat::<f64>::zeros(n, n);
    let mut dbase = if with_derivative { Some(Mat::<f64>::zeros(n, n)) } else { None };
    for j in 0..n {
        let xj = column[j];
        let col = base.col_as_slice_mut(j);
        match dbase.as_mut() {
            Some(d) => {
                let dcol = d.col_as_slice_mut(j);
                for i in j..n {
                    let (k, dk) = spec.k_and_dlog_theta(column[i], xj);
                    col[i] = k;
                    dcol[i] = dk;
                }
            }
            None => {
                for i in j..n {
                    col[i] = spec.k(column[i], xj);
                }
            }
        }
    }
    mirror_lower(&mut base);
    if let Some(d) = dbase.as_mut() {
        mirror_lower(d);
    }
    (base, dbase)
}

/// Copies the lower triangle onto the upper one.
fn mirror_lower(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 1..n {
        for i in 0..j {
            m[(i, j)] = m[(j, i)];
        }
    }
}

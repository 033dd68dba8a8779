//! The fitted model: training data, frozen moment caches, Gram matrices,
//! factorization and the weight vector `gamma = K^{-1} (y - y_mean)`.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    assemble_dense, assemble_grid, unflatten, DenseFactorization, Factorization, GridFactorization,
    HyperParams,
};
use crate::data::{Dataset, GridDataset};
use crate::error::{FoagpError, Result};
use crate::kernel::{base_training_gram, orthogonal_training_gram, KernelFamily, KernelSpec, MomentCache};

/// Training data for either inference path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum TrainingData {
    Dense(Dataset),
    Grid(GridDataset),
}

impl TrainingData {
    pub fn dims(&self) -> usize {
        match self {
            TrainingData::Dense(d) => d.dims(),
            TrainingData::Grid(g) => g.dims(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TrainingData::Dense(d) => d.len(),
            TrainingData::Grid(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn responses(&self) -> &[f64] {
        match self {
            TrainingData::Dense(d) => d.responses(),
            TrainingData::Grid(g) => g.responses(),
        }
    }

    /// The distinct values of input column `i` that its moment cache is built from.
    pub fn input_column(&self, i: usize) -> &[f64] {
        match self {
            TrainingData::Dense(d) => d.column(i),
            TrainingData::Grid(g) => g.column(i),
        }
    }

    /// Output positions: one per sample (dense) or the `n` grid positions.
    pub fn position_column(&self) -> &[f64] {
        match self {
            TrainingData::Dense(d) => d.positions(),
            TrainingData::Grid(g) => g.positions(),
        }
    }

    pub fn is_grid(&self) -> bool {
        matches!(self, TrainingData::Grid(_))
    }

    /// Dense view; grid data is expanded to position-major long format.
    pub fn to_dense(&self) -> Dataset {
        match self {
            TrainingData::Dense(d) => d.clone(),
            TrainingData::Grid(g) => g.to_long(),
        }
    }
}

impl From<Dataset> for TrainingData {
    fn from(d: Dataset) -> Self {
        TrainingData::Dense(d)
    }
}

impl From<GridDataset> for TrainingData {
    fn from(g: GridDataset) -> Self {
        TrainingData::Grid(g)
    }
}

/// Serializes `f64` with non-finite values as the strings `inf`, `-inf` and `nan`.
pub(crate) mod float_or_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("invalid number {other:?}"))),
            },
        }
    }
}

/// Per-restart optimizer log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartLog {
    pub index: usize,
    #[serde(with = "float_or_string")]
    pub initial_objective: f64,
    #[serde(with = "float_or_string")]
    pub final_objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub path: String,
    #[serde(with = "float_or_string")]
    pub objective: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartLog>,
    pub wall_time_secs: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Immutable fitted model.
#[derive(Debug)]
pub struct FittedModel {
    pub(crate) data: TrainingData,
    pub(crate) input_kernels: Vec<KernelSpec>,
    pub(crate) output_kernel: KernelSpec,
    pub(crate) caches: Vec<MomentCache>,
    pub(crate) params: HyperParams,
    pub(crate) input_grams: Vec<Mat<f64>>,
    pub(crate) output_gram: Mat<f64>,
    pub(crate) factorization: Factorization,
    pub(crate) gamma: Vec<f64>,
    /// Matricized gamma (m x n) for grid models.
    pub(crate) gamma_mat: Option<Mat<f64>>,
    pub(crate) y_mean: f64,
    pub(crate) report: Option<FitReport>,
}

pub(crate) fn output_spec(family: KernelFamily, theta: f64) -> Result<KernelSpec> {
    let spec = KernelSpec { family, theta };
    spec.validate()?;
    Ok(spec)
}

impl FittedModel {
    /// Builds the model at fixed hyperparameters. `params.sigma2` is ignored and
    /// replaced by its profile estimate.
    pub fn with_params(data: impl Into<TrainingData>, output_family: KernelFamily, params: &HyperParams) -> Result<Self> {
        let data = data.into();
        let d = data.dims();
        let mut params = params.clone();
        params.sigma2 = 1.0;
        if let KernelFamily::Periodic { period } = output_family {
            params.period = Some(period);
        } else {
            params.period = None;
        }
        params.validate(d)?;

        let y = data.responses();
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let centered: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

        let mut input_kernels = Vec::with_capacity(d);
        let mut caches = Vec::with_capacity(d);
        let mut input_grams = Vec::with_capacity(d);
        for i in 0..d {
            let spec = KernelSpec::squared_exponential(params.input_theta(i))?;
            let tg = orthogonal_training_gram(&spec, data.input_column(i), false)?;
            input_kernels.push(spec);
            caches.push(tg.cache);
            input_grams.push(tg.gram);
        }
        let output_kernel = output_spec(output_family, params.output_theta())?;
        let (output_gram, _) = base_training_gram(&output_kernel, data.position_column(), false);

        let factorization = match &data {
            TrainingData::Dense(_) => {
                let k = assemble_dense(&input_grams, &output_gram, &params)?;
                Factorization::Dense(DenseFactorization::new(&k)?)
            }
            TrainingData::Grid(_) => {
                let g = assemble_grid(&input_grams, &output_gram, &params)?;
                Factorization::Grid(GridFactorization::new(&g.c_t, &g.c_x, params.nugget().powi(2))?)
            }
        };
        let gamma = factorization.solve(&centered);
        let quad: f64 = centered.iter().zip(&gamma).map(|(a, b)| a * b).sum();
        params.sigma2 = quad / centered.len() as f64;
        let gamma_mat = match &data {
            TrainingData::Grid(g) => Some(unflatten(&gamma, g.m(), g.n())),
            TrainingData::Dense(_) => None,
        };
        Ok(FittedModel {
            data,
            input_kernels,
            output_kernel,
            caches,
            params,
            input_grams,
            output_gram,
            factorization,
            gamma,
            gamma_mat,
            y_mean,
            report: None,
        })
    }

    /// Replaces the weight vector, e.g. with one restored from disk.
    pub(crate) fn set_gamma(&mut self, gamma: Vec<f64>) -> Result<()> {
        if gamma.len() != self.gamma.len() {
            return Err(FoagpError::Shape(format!(
                "weight vector has {} entries, model needs {}",
                gamma.len(),
                self.gamma.len()
            )));
        }
        if let TrainingData::Grid(g) = &self.data {
            self.gamma_mat = Some(unflatten(&gamma, g.m(), g.n()));
        }
        self.gamma = gamma;
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.data.dims()
    }

    pub fn data(&self) -> &TrainingData {
        &self.data
    }

    pub fn params(&self) -> &HyperParams {
        &self.params
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn moment_caches(&self) -> &[MomentCache] {
        &self.caches
    }

    pub fn input_kernels(&self) -> &[KernelSpec] {
        &self.input_kernels
    }

    pub fn output_kernel(&self) -> &KernelSpec {
        &self.output_kernel
    }

    pub fn output_family(&self) -> KernelFamily {
        self.output_kernel.family
    }

    /// Orthogonal input Gram matrices `K_i` (dense) or `R_i` (grid).
    pub fn input_grams(&self) -> &[Mat<f64>] {
        &self.input_grams
    }

    /// Output Gram matrix `K_t` (dense) or `R_t` (grid).
    pub fn output_gram(&self) -> &Mat<f64> {
        &self.output_gram
    }

    pub fn factorization(&self) -> &Factorization {
        &self.factorization
    }

    pub fn is_grid(&self) -> bool {
        self.data.is_grid()
    }

    pub fn report(&self) -> Option<&FitReport> {
        self.report.as_ref()
    }

    pub(crate) fn set_report(&mut self, report: FitReport) {
        self.report = Some(report);
    }

    /// Log determinant of the correlation-scale covariance.
    pub fn log_det(&self) -> f64 {
        self.factorization.log_det()
    }

    /// Profiled objective `N log sigma2 + log|K|` at the stored hyperparameters.
    pub fn objective(&self) -> f64 {
        self.data.len() as f64 * self.params.sigma2.ln() + self.log_det()
    }
}

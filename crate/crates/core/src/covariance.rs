//! Covariance assembly and factorization.
//!
//! The correlation-scale covariance of the model is
//!
//! `K = d0^2 I + dt^2 K_t (.) prod_i (1 1^T + di^2 K_i)`
//!
//! with `(.)` the elementwise product. On grid data the same matrix is
//! `d0^2 I + C_t (x) C_x`, which is factorized through the eigendecompositions
//! of the two small factors instead of a Cholesky factor of the full matrix.

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{FoagpError, Result};

/// Smallest admissible nugget weight `d0`.
pub const NUGGET_DELTA_MIN: f64 = 1e-4;

/// Variance weights, kernel parameters and the profiled process variance.
///
/// `delta = [d0, d1, .., dd, dt]`, `theta = [theta1, .., thetad, thetat]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub delta: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl HyperParams {
    /// Parameters with every weight and length scale set to one.
    pub fn unit(dims: usize) -> Self {
        HyperParams { delta: vec![1.0; dims + 2], theta: vec![1.0; dims + 1], sigma2: 1.0, period: None }
    }

    pub fn dims(&self) -> usize {
        self.theta.len().saturating_sub(1)
    }

    pub fn nugget(&self) -> f64 {
        self.delta[0]
    }

    pub fn input_weight(&self, i: usize) -> f64 {
        self.delta[1 + i]
    }

    pub fn output_weight(&self) -> f64 {
        self.delta[self.dims() + 1]
    }

    pub fn input_theta(&self, i: usize) -> f64 {
        self.theta[i]
    }

    pub fn output_theta(&self) -> f64 {
        self.theta[self.dims()]
    }

    pub(crate) fn check_shape(&self, dims: usize) -> Result<()> {
        if self.theta.len() != dims + 1 || self.delta.len() != dims + 2 {
            return Err(FoagpError::Shape(format!(
                "expected {} weights and {} kernel parameters for {dims} inputs, got {} and {}",
                dims + 2,
                dims + 1,
                self.delta.len(),
                self.theta.len()
            )));
        }
        Ok(())
    }

    /// Checks positivity and the nugget floor.
    pub fn validate(&self, dims: usize) -> Result<()> {
        self.check_shape(dims)?;
        let all = self.delta.iter().chain(&self.theta).chain(std::iter::once(&self.sigma2));
        if let Some(bad) = all.into_iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(FoagpError::InvalidInput(format!(
                "hyperparameters must be positive and finite, found {bad}"
            )));
        }
        if self.nugget() < NUGGET_DELTA_MIN * (1.0 - 1e-12) {
            return Err(FoagpError::InvalidInput(format!(
                "nugget weight {} is below the floor {NUGGET_DELTA_MIN}",
                self.nugget()
            )));
        }
        Ok(())
    }
}

fn check_square(name: &str, m: &Mat<f64>, size: usize) -> Result<()> {
    if m.nrows() != size || m.ncols() != size {
        return Err(FoagpError::Shape(format!(
            "{name} is {}x{}, expected {size}x{size}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Dense Hadamard-form covariance from per-dimension Gram matrices.
pub fn assemble_dense(k_list: &[Mat<f64>], k_t: &Mat<f64>, params: &HyperParams) -> Result<Mat<f64>> {
    params.check_shape(k_list.len())?;
    let n = k_t.nrows();
    check_square("K_t", k_t, n)?;
    for (i, k) in k_list.iter().enumerate() {
        check_square(&format!("K_{}", i + 1), k, n)?;
    }
    let d0sq = params.nugget().powi(2);
    let dtsq = params.output_weight().powi(2);
    let w: Vec<f64> = (0..k_list.len()).map(|i| params.input_weight(i).powi(2)).collect();
    let mut k = Mat::<f64>::zeros(n, n);
    for b in 0..n {
        let out = k.col_as_slice_mut(b);
        for (o, v) in out.iter_mut().zip(k_t.col_as_slice(b)) {
            *o = dtsq * v;
        }
        for (km, wi) in k_list.iter().zip(&w) {
            for (o, v) in out.iter_mut().zip(km.col_as_slice(b)) {
                *o *= 1.0 + wi * v;
            }
        }
        out[b] += d0sq;
    }
    Ok(k)
}

/// The two Kronecker factors of the grid covariance, `C_t` (n x n) and `C_x` (m x m).
#[derive(Clone, Debug)]
pub struct GridCovariance {
    pub c_t: Mat<f64>,
    pub c_x: Mat<f64>,
}

impl GridCovariance {
    /// Dense `nugget2 I + C_t (x) C_x` in position-major order. Test-sized grids only.
    pub fn materialize(&self, nugget2: f64) -> Mat<f64> {
        let m = self.c_x.nrows();
        let n = self.c_t.nrows();
        Mat::from_fn(m * n, m * n, |r, c| {
            let (v, u) = (r / m, r % m);
            let (v2, u2) = (c / m, c % m);
            let val = self.c_t[(v, v2)] * self.c_x[(u, u2)];
            if r == c {
                val + nugget2
            } else {
                val
            }
        })
    }
}

/// `C_t = dt^2 R_t`, `C_x = prod_i (1 1^T + di^2 R_i)`.
pub fn assemble_grid(r_list: &[Mat<f64>], r_t: &Mat<f64>, params: &HyperParams) -> Result<GridCovariance> {
    params.check_shape(r_list.len())?;
    let n = r_t.nrows();
    check_square("R_t", r_t, n)?;
    let m = r_list.first().map(|r| r.nrows()).unwrap_or(0);
    for (i, r) in r_list.iter().enumerate() {
        check_square(&format!("R_{}", i + 1), r, m)?;
    }
    let dtsq = params.output_weight().powi(2);
    let c_t = Mat::from_fn(n, n, |a, b| dtsq * r_t[(a, b)]);
    let w: Vec<f64> = (0..r_list.len()).map(|i| params.input_weight(i).powi(2)).collect();
    let c_x = Mat::from_fn(m, m, |a, b| {
        let mut prod = 1.0;
        for (r, wi) in r_list.iter().zip(&w) {
            prod *= 1.0 + wi * r[(a, b)];
        }
        prod
    });
    Ok(GridCovariance { c_t, c_x })
}

/// Cholesky factorization of a dense covariance with jitter escalation.
#[derive(Debug)]
pub struct DenseFactorization {
    llt: Llt<f64>,
    log_det: f64,
    jitter: f64,
}

impl DenseFactorization {
    /// Factorizes `k`, adding `1e-10 .. 1e-6` times the mean diagonal on failure.
    pub fn new(k: &Mat<f64>) -> Result<Self> {
        let n = k.nrows();
        if k.ncols() != n || n == 0 {
            return Err(FoagpError::Shape(format!("cannot factorize a {}x{} matrix", n, k.ncols())));
        }
        if let Ok(llt) = k.llt(Side::Lower) {
            return Ok(Self::from_llt(llt, 0.0));
        }
        let mean_diag = (0..n).map(|i| k[(i, i)]).sum::<f64>() / n as f64;
        let mut scale = 1e-10;
        while scale <= 1e-6 * (1.0 + 1e-9) {
            let jitter = scale * mean_diag;
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            if let Ok(llt) = kj.llt(Side::Lower) {
                log::debug!("cholesky succeeded after adding jitter {jitter:e}");
                return Ok(Self::from_llt(llt, jitter));
            }
            scale *= 10.0;
        }
        let min_eigenvalue = k
            .self_adjoint_eigenvalues(Side::Lower)
            .ok()
            .and_then(|ev| ev.first().copied())
            .unwrap_or(f64::NAN);
        Err(FoagpError::Numerical {
            message: format!("cholesky factorization of a {n}x{n} covariance failed after maximum jitter"),
            min_eigenvalue,
        })
    }

    fn from_llt(llt: Llt<f64>, jitter: f64) -> Self {
        let l = llt.L();
        let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        DenseFactorization { llt, log_det, jitter }
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Diagonal jitter that had to be added for the factorization to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(y.len(), 1, |i, _| y[i]);
        let x = self.llt.solve(&rhs);
        (0..y.len()).map(|i| x[(i, 0)]).collect()
    }

    pub fn inverse(&self) -> Mat<f64> {
        self.llt.inverse()
    }

    /// `L L^T`, i.e. the factorized matrix including any jitter.
    pub fn reconstruct(&self) -> Mat<f64> {
        self.llt.reconstruct()
    }
}

/// Eigen-based factorization of `nugget2 I + C_t (x) C_x`.
#[derive(Clone, Debug)]
pub struct GridFactorization {
    /// Eigenvectors of `C_t` (n x n).
    pub u: Mat<f64>,
    /// Eigenvalues of `C_t`, clamped at zero.
    pub d: Vec<f64>,
    /// Eigenvectors of `C_x` (m x m).
    pub v: Mat<f64>,
    /// Eigenvalues of `C_x`, clamped at zero.
    pub lambda: Vec<f64>,
    /// Diagonal of `S = nugget2 I + D (x) Lambda` as an m x n matrix: `s[(k, j)] = nugget2 + lambda_k d_j`.
    pub s: Mat<f64>,
    log_det: f64,
}

fn symmetric_eigen(a: &Mat<f64>, name: &str) -> Result<(Mat<f64>, Vec<f64>)> {
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|e| FoagpError::Numerical {
        message: format!("eigendecomposition of {name} failed: {e:?}"),
        min_eigenvalue: f64::NAN,
    })?;
    let vals = evd.S().column_vector().iter().map(|&v| v.max(0.0)).collect();
    Ok((evd.U().to_owned(), vals))
}

impl GridFactorization {
    pub fn new(c_t: &Mat<f64>, c_x: &Mat<f64>, nugget2: f64) -> Result<Self> {
        let (u, d) = symmetric_eigen(c_t, "C_t")?;
        let (v, lambda) = symmetric_eigen(c_x, "C_x")?;
        let (m, n) = (lambda.len(), d.len());
        let s = Mat::from_fn(m, n, |k, j| nugget2 + lambda[k] * d[j]);
        let mut log_det = 0.0;
        let mut min_s = f64::INFINITY;
        for j in 0..n {
            for k in 0..m {
                let sk = s[(k, j)];
                min_s = min_s.min(sk);
                log_det += sk.ln();
            }
        }
        if !(min_s > 0.0) {
            return Err(FoagpError::Numerical {
                message: "grid covariance is singular".into(),
                min_eigenvalue: min_s,
            });
        }
        Ok(GridFactorization { u, d, v, lambda, s, log_det })
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `V^T Y U` for the matricized `y` (m x n, position-major flattening).
    pub fn rotate(&self, y: &[f64]) -> Mat<f64> {
        let ymat = unflatten(y, self.m(), self.n());
        self.v.transpose() * &ymat * &self.u
    }

    /// `K^{-1} y` via `(U (x) V) S^{-1} (U (x) V)^T y`, without forming N x N matrices.
    pub fn apply_inverse(&self, y: &[f64]) -> Vec<f64> {
        flatten(&self.apply_inverse_mat(y))
    }

    /// Matricized `K^{-1} y` (m x n).
    pub fn apply_inverse_mat(&self, y: &[f64]) -> Mat<f64> {
        let z = self.rotate(y);
        let scaled = Mat::from_fn(self.m(), self.n(), |k, j| z[(k, j)] / self.s[(k, j)]);
        &self.v * &scaled * self.u.transpose()
    }
}

/// Column-major `m x n` matrix from a position-major flat vector.
pub fn unflatten(y: &[f64], m: usize, n: usize) -> Mat<f64> {
    debug_assert_eq!(y.len(), m * n);
    Mat::from_fn(m, n, |u, v| y[v * m + u])
}

/// Position-major flattening (`vec`) of an `m x n` matrix.
pub fn flatten(a: &Mat<f64>) -> Vec<f64> {
    let (m, n) = (a.nrows(), a.ncols());
    let mut out = Vec::with_capacity(m * n);
    for v in 0..n {
        for u in 0..m {
            out.push(a[(u, v)]);
        }
    }
    out
}

/// Either inference path's factorization.
#[derive(Debug)]
pub enum Factorization {
    Dense(DenseFactorization),
    Grid(GridFactorization),
}

impl Factorization {
    pub fn log_det(&self) -> f64 {
        match self {
            Factorization::Dense(f) => f.log_det(),
            Factorization::Grid(f) => f.log_det(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Factorization::Dense(f) => f.dim(),
            Factorization::Grid(f) => f.m() * f.n(),
        }
    }

    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Factorization::Dense(f) => f.solve(y),
            Factorization::Grid(f) => f.apply_inverse(y),
        }
    }
}

/// Weight vector `gamma = K^{-1} y`.
pub fn solve_weights(fact: &Factorization, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != fact.dim() {
        return Err(FoagpError::Shape(format!(
            "response has {} entries, factorization is {}-dimensional",
            y.len(),
            fact.dim()
        )));
    }
    Ok(fact.solve(y))
}

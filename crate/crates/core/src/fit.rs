//! Profiled likelihood objective and multistart hyperparameter fitting.
//!
//! Hyperparameters are optimized in log space. The output weight `dt` is held
//! at one: scaling `d0` and `dt` together only rescales `K`, which the profiled
//! variance absorbs, so the objective is flat along that direction.

use std::time::Instant;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    assemble_dense, assemble_grid, DenseFactorization, Factorization, GridFactorization, HyperParams,
    NUGGET_DELTA_MIN,
};
use crate::data::{Dataset, GridDataset};
use crate::error::{FoagpError, Result};
use crate::kernel::{base_training_gram, orthogonal_training_gram, KernelFamily, KernelSpec};
use crate::model::{output_spec, FitReport, FittedModel, RestartLog, TrainingData};
use crate::optim::{lbfgs, nelder_mead, Bounds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Projected L-BFGS on the analytic gradient.
    Lbfgs,
    NelderMead,
    /// Simplex search followed by an L-BFGS polish.
    NelderMeadLbfgs,
}

/// Box constraints. Length-scale bounds are multiples of each column's range;
/// a periodic output kernel uses `theta_factor` as absolute bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub nugget: [f64; 2],
    pub weight: [f64; 2],
    pub theta_factor: [f64; 2],
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig { nugget: [NUGGET_DELTA_MIN, 10.0], weight: [1e-3, 1e3], theta_factor: [1e-3, 1e3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub output_kernel: KernelFamily,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tolerance: f64,
    pub optimizer: Optimizer,
    /// Use the dense path even for grid data.
    pub force_dense: bool,
    pub bounds: BoundsConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            output_kernel: KernelFamily::SquaredExponential,
            restarts: 8,
            seed: 0,
            max_iter: 500,
            tolerance: 1e-8,
            optimizer: Optimizer::Lbfgs,
            force_dense: false,
            bounds: BoundsConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(FoagpError::InvalidInput("at least one restart is required".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(FoagpError::InvalidInput(format!("tolerance must be non-negative, got {}", self.tolerance)));
        }
        let b = &self.bounds;
        for (name, [lo, hi]) in [("nugget", b.nugget), ("weight", b.weight), ("theta_factor", b.theta_factor)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(FoagpError::InvalidInput(format!("invalid {name} bounds [{lo}, {hi}]")));
            }
        }
        if b.nugget[0] < NUGGET_DELTA_MIN * (1.0 - 1e-12) {
            return Err(FoagpError::InvalidInput(format!(
                "nugget lower bound {} is below the floor {NUGGET_DELTA_MIN}",
                b.nugget[0]
            )));
        }
        KernelSpec { family: self.output_kernel, theta: 1.0 }.validate()
    }
}

/// `sigma2 = y^T K^{-1} y / N`.
pub fn profile_sigma2(fact: &Factorization, y: &[f64]) -> Result<f64> {
    if y.len() != fact.dim() {
        return Err(FoagpError::Shape(format!(
            "response has {} entries, factorization is {}-dimensional",
            y.len(),
            fact.dim()
        )));
    }
    if y.iter().all(|v| *v == 0.0) {
        return Err(FoagpError::DegenerateResponse);
    }
    let quad = match fact {
        Factorization::Dense(f) => dot(y, &f.solve(y)),
        Factorization::Grid(f) => {
            let z = f.rotate(y);
            let mut acc = 0.0;
            for j in 0..f.n() {
                for k in 0..f.m() {
                    acc += z[(k, j)] * z[(k, j)] / f.s[(k, j)];
                }
            }
            acc
        }
    };
    Ok(quad / y.len() as f64)
}

/// Objective value and its gradient with respect to `log delta` and `log theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveGradient {
    pub value: f64,
    pub d_log_delta: Vec<f64>,
    pub d_log_theta: Vec<f64>,
}

/// Profiled objective `N log sigma2 + log|K|` on the centered responses.
/// Returns `+inf` (with a warning) when the covariance cannot be factorized.
pub fn objective(data: &TrainingData, output: KernelFamily, params: &HyperParams) -> f64 {
    match evaluate(data, &centered(data.responses()), output, params, false) {
        Ok((v, _)) => v,
        Err(e) => {
            log::warn!("objective evaluation failed: {e}");
            f64::INFINITY
        }
    }
}

/// Objective with its analytic gradient.
pub fn objective_with_gradient(
    data: &TrainingData,
    output: KernelFamily,
    params: &HyperParams,
) -> Result<ObjectiveGradient> {
    let (value, grad) = evaluate(data, &centered(data.responses()), output, params, true)?;
    let (d_log_delta, d_log_theta) = grad.expect("gradient requested");
    Ok(ObjectiveGradient { value, d_log_delta, d_log_theta })
}

type Grad = (Vec<f64>, Vec<f64>);

fn centered(y: &[f64]) -> Vec<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| v - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn evaluate(
    data: &TrainingData,
    y: &[f64],
    output: KernelFamily,
    params: &HyperParams,
    with_grad: bool,
) -> Result<(f64, Option<Grad>)> {
    params.check_shape(data.dims())?;
    match data {
        TrainingData::Dense(d) => dense_eval(d, y, output, params, with_grad),
        TrainingData::Grid(g) => grid_eval(g, y, output, params, with_grad),
    }
}

struct Grams {
    inputs: Vec<Mat<f64>>,
    d_inputs: Vec<Option<Mat<f64>>>,
    output: Mat<f64>,
    d_output: Option<Mat<f64>>,
}

fn build_grams(
    columns: &[Vec<f64>],
    positions: &[f64],
    output: KernelFamily,
    params: &HyperParams,
    with_grad: bool,
) -> Result<Grams> {
    let mut inputs = Vec::with_capacity(columns.len());
    let mut d_inputs = Vec::with_capacity(columns.len());
    for (i, col) in columns.iter().enumerate() {
        let spec = KernelSpec::squared_exponential(params.input_theta(i))?;
        let tg = orthogonal_training_gram(&spec, col, with_grad)?;
        inputs.push(tg.gram);
        d_inputs.push(tg.dgram);
    }
    let spec = output_spec(output, params.output_theta())?;
    let (out, d_out) = base_training_gram(&spec, positions, with_grad);
    Ok(Grams { inputs, d_inputs, output: out, d_output: d_out })
}

fn dense_eval(
    data: &Dataset,
    y: &[f64],
    output: KernelFamily,
    params: &HyperParams,
    with_grad: bool,
) -> Result<(f64, Option<Grad>)> {
    let n = y.len();
    let d = data.dims();
    let grams = build_grams(data.columns(), data.positions(), output, params, with_grad)?;
    let k = assemble_dense(&grams.inputs, &grams.output, params)?;
    let fact = DenseFactorization::new(&k)?;
    drop(k);
    let alpha = fact.solve(y);
    let sigma2 = dot(y, &alpha) / n as f64;
    if !(sigma2 > 0.0) {
        return Err(FoagpError::DegenerateResponse);
    }
    let value = n as f64 * sigma2.ln() + fact.log_det();
    if !with_grad {
        return Ok((value, None));
    }

    let kinv = fact.inverse();
    let d02 = params.nugget().powi(2);
    let dt2 = params.output_weight().powi(2);
    let wts: Vec<f64> = (0..d).map(|i| params.input_weight(i).powi(2)).collect();
    let d_inputs: Vec<&Mat<f64>> = grams.d_inputs.iter().map(|m| m.as_ref().expect("derivative")).collect();
    let d_output = grams.d_output.as_ref().expect("derivative");
    let mut g_delta = vec![0.0; d + 2];
    let mut g_theta = vec![0.0; d + 1];
    let mut f = vec![0.0; d];
    let mut prefix = vec![1.0; d + 1];
    let mut kij = vec![0.0; d];
    for b in 0..n {
        let kinv_col = kinv.col_as_slice(b);
        let kt_col = grams.output.col_as_slice(b);
        let dkt_col = d_output.col_as_slice(b);
        let k_cols: Vec<&[f64]> = grams.inputs.iter().map(|m| m.col_as_slice(b)).collect();
        let dk_cols: Vec<&[f64]> = d_inputs.iter().map(|m| m.col_as_slice(b)).collect();
        let ab = alpha[b] / sigma2;
        for a in b..n {
            let sym = if a == b { 1.0 } else { 2.0 };
            let w = sym * (kinv_col[a] - alpha[a] * ab);
            for i in 0..d {
                kij[i] = k_cols[i][a];
                f[i] = 1.0 + wts[i] * kij[i];
                prefix[i + 1] = prefix[i] * f[i];
            }
            let base = dt2 * kt_col[a];
            let mut suffix = 1.0;
            for i in (0..d).rev() {
                let others = prefix[i] * suffix * base * w;
                g_delta[1 + i] += others * 2.0 * wts[i] * kij[i];
                g_theta[i] += others * wts[i] * dk_cols[i][a];
                suffix *= f[i];
            }
            let p = prefix[d];
            g_delta[d + 1] += w * 2.0 * base * p;
            g_theta[d] += w * dt2 * dkt_col[a] * p;
        }
        g_delta[0] += (kinv_col[b] - alpha[b] * ab) * 2.0 * d02;
    }
    Ok((value, Some((g_delta, g_theta))))
}

/// `diag(Q^T B Q)`.
fn diag_congruence(q: &Mat<f64>, b: &Mat<f64>) -> Vec<f64> {
    let bq = b * q;
    (0..q.ncols()).map(|k| (0..q.nrows()).map(|a| q[(a, k)] * bq[(a, k)]).sum()).collect()
}

fn frobenius_inner(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += a[(i, j)] * b[(i, j)];
        }
    }
    acc
}

fn grid_eval(
    data: &GridDataset,
    y: &[f64],
    output: KernelFamily,
    params: &HyperParams,
    with_grad: bool,
) -> Result<(f64, Option<Grad>)> {
    let (m, n) = (data.m(), data.n());
    let nn = (m * n) as f64;
    let d = data.dims();
    let grams = build_grams(data.columns(), data.positions(), output, params, with_grad)?;
    let cov = assemble_grid(&grams.inputs, &grams.output, params)?;
    let d02 = params.nugget().powi(2);
    let fact = GridFactorization::new(&cov.c_t, &cov.c_x, d02)?;
    let z = fact.rotate(y);
    let zs = Mat::from_fn(m, n, |k, j| z[(k, j)] / fact.s[(k, j)]);
    let sigma2 = frobenius_inner(&z, &zs) / nn;
    if !(sigma2 > 0.0) {
        return Err(FoagpError::DegenerateResponse);
    }
    let value = nn * sigma2.ln() + fact.log_det();
    if !with_grad {
        return Ok((value, None));
    }

    let gamma = &fact.v * &zs * fact.u.transpose();
    // For dK = A (x) B: tr(K^{-1} dK) = sum_kj diag(V^T B V)_k diag(U^T A U)_j / S_kj
    // and alpha^T dK alpha = <Gamma, B Gamma A>.
    let trace = |bdiag: &[f64], adiag: &[f64]| -> f64 {
        let mut acc = 0.0;
        for j in 0..n {
            for k in 0..m {
                acc += bdiag[k] * adiag[j] / fact.s[(k, j)];
            }
        }
        acc
    };
    let gamma_ct = &gamma * &cov.c_t;
    let cx_gamma = &cov.c_x * &gamma;
    let dt2 = params.output_weight().powi(2);
    let wts: Vec<f64> = (0..d).map(|i| params.input_weight(i).powi(2)).collect();

    let mut g_delta = vec![0.0; d + 2];
    let mut g_theta = vec![0.0; d + 1];
    let inv_s_sum: f64 = (0..n).flat_map(|j| (0..m).map(move |k| (k, j))).map(|(k, j)| 1.0 / fact.s[(k, j)]).sum();
    g_delta[0] = 2.0 * d02 * (inv_s_sum - frobenius_inner(&gamma, &gamma) / sigma2);
    g_delta[d + 1] = 2.0 * (trace(&fact.lambda, &fact.d) - frobenius_inner(&cx_gamma, &gamma_ct) / sigma2);

    for i in 0..d {
        let others = Mat::from_fn(m, m, |a, b| {
            let mut p = 1.0;
            for (j, r) in grams.inputs.iter().enumerate() {
                if j != i {
                    p *= 1.0 + wts[j] * r[(a, b)];
                }
            }
            p
        });
        let r = &grams.inputs[i];
        let dr = grams.d_inputs[i].as_ref().expect("derivative");
        let b_delta = Mat::from_fn(m, m, |a, b| others[(a, b)] * 2.0 * wts[i] * r[(a, b)]);
        let b_theta = Mat::from_fn(m, m, |a, b| others[(a, b)] * wts[i] * dr[(a, b)]);
        for (b_mat, slot) in [(b_delta, &mut g_delta[1 + i]), (b_theta, &mut g_theta[i])] {
            let tr = trace(&diag_congruence(&fact.v, &b_mat), &fact.d);
            let quad = frobenius_inner(&gamma, &(&b_mat * &gamma_ct));
            *slot = tr - quad / sigma2;
        }
    }
    let d_rt = grams.d_output.as_ref().expect("derivative");
    let a_theta = Mat::from_fn(n, n, |a, b| dt2 * d_rt[(a, b)]);
    let tr = trace(&fact.lambda, &diag_congruence(&fact.u, &a_theta));
    let quad = frobenius_inner(&gamma, &(&cx_gamma * &a_theta));
    g_theta[d] = tr - quad / sigma2;
    Ok((value, Some((g_delta, g_theta))))
}

fn range_of(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let r = hi - lo;
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

fn std_of(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    let s = var.sqrt();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Log-space search layout: `[log d0, log d1..dd, log theta1..thetad, log thetat]`.
struct Layout {
    dims: usize,
    period: Option<f64>,
}

impl Layout {
    fn params(&self, x: &[f64]) -> HyperParams {
        let d = self.dims;
        let mut delta: Vec<f64> = x[..=d].iter().map(|v| v.exp()).collect();
        delta.push(1.0);
        let theta = x[d + 1..].iter().map(|v| v.exp()).collect();
        HyperParams { delta, theta, sigma2: 1.0, period: self.period }
    }

    fn gradient(&self, g: &ObjectiveGradient) -> Vec<f64> {
        let d = self.dims;
        g.d_log_delta[..=d].iter().chain(&g.d_log_theta).copied().collect()
    }
}

fn search_space(data: &TrainingData, config: &FitConfig) -> (Bounds, Vec<f64>) {
    let d = data.dims();
    let b = &config.bounds;
    let mut lo = vec![b.nugget[0].ln()];
    let mut hi = vec![b.nugget[1].ln()];
    let mut center = vec![1.0f64.clamp(b.nugget[0], b.nugget[1]).ln()];
    for _ in 0..d {
        lo.push(b.weight[0].ln());
        hi.push(b.weight[1].ln());
        center.push(1.0f64.clamp(b.weight[0], b.weight[1]).ln());
    }
    let mut scaled = |col: &[f64], lo: &mut Vec<f64>, hi: &mut Vec<f64>| {
        let r = range_of(col);
        let (l, h) = (b.theta_factor[0] * r, b.theta_factor[1] * r);
        lo.push(l.ln());
        hi.push(h.ln());
        center.push(std_of(col).clamp(l, h).ln());
    };
    for i in 0..d {
        scaled(data.input_column(i), &mut lo, &mut hi);
    }
    match config.output_kernel {
        KernelFamily::SquaredExponential => scaled(data.position_column(), &mut lo, &mut hi),
        KernelFamily::Periodic { .. } => {
            lo.push(b.theta_factor[0].ln());
            hi.push(b.theta_factor[1].ln());
            center.push(1.0f64.clamp(b.theta_factor[0], b.theta_factor[1]).ln());
        }
    }
    (Bounds { lo, hi }, center)
}

fn starting_points(center: &[f64], bounds: &Bounds, restarts: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (0.05f64.ln(), 5.0f64.ln());
    (0..restarts)
        .map(|r| {
            let mut x = center.to_vec();
            if r > 0 {
                for v in x.iter_mut() {
                    *v += rng.random_range(lo..hi);
                }
            }
            bounds.clamp(&mut x);
            x
        })
        .collect()
}

fn is_constant(y: &[f64]) -> bool {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let scale = mean.abs().max(1.0);
    y.iter().all(|v| (v - mean).abs() <= 1e-12 * scale)
}

/// Fits the model by multistart minimization of the profiled objective.
pub fn fit(data: impl Into<TrainingData>, config: &FitConfig) -> Result<FittedModel> {
    config.validate()?;
    let start = Instant::now();
    let mut data = data.into();
    if config.force_dense && data.is_grid() {
        data = TrainingData::Dense(data.to_dense());
    }
    if data.len() < 2 {
        return Err(FoagpError::InsufficientData { needed: 2, got: data.len() });
    }
    let path = if data.is_grid() { "kronecker" } else { "dense" };
    log::info!("fitting {} samples on the {path} path", data.len());
    let layout = Layout {
        dims: data.dims(),
        period: match config.output_kernel {
            KernelFamily::Periodic { period } => Some(period),
            KernelFamily::SquaredExponential => None,
        },
    };
    let (bounds, center) = search_space(&data, config);

    if is_constant(data.responses()) {
        let msg = "response is constant; returning the mean with zero weights".to_string();
        log::warn!("{msg}");
        let mut x = center.clone();
        x[0] = bounds.lo[0];
        let mut model = FittedModel::with_params(data, config.output_kernel, &layout.params(&x))?;
        model.set_gamma(vec![0.0; model.gamma.len()])?;
        model.params.sigma2 = 0.0;
        let objective = f64::NEG_INFINITY;
        model.set_report(FitReport {
            path: path.into(),
            objective,
            best_restart: 0,
            restarts: Vec::new(),
            wall_time_secs: start.elapsed().as_secs_f64(),
            warnings: vec![msg],
        });
        return Ok(model);
    }

    let y = centered(data.responses());
    let family = config.output_kernel;
    let eval_value = |x: &[f64]| -> f64 {
        match evaluate(&data, &y, family, &layout.params(x), false) {
            Ok((v, _)) if v.is_finite() => v,
            Ok(_) => f64::INFINITY,
            Err(e) => {
                log::warn!("objective evaluation failed: {e}");
                f64::INFINITY
            }
        }
    };
    let eval_opt = |x: &[f64]| Some(eval_value(x)).filter(|v| v.is_finite());
    let eval_grad = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        match evaluate(&data, &y, family, &layout.params(x), true) {
            Ok((v, Some((gd, gt)))) => {
                let g = ObjectiveGradient { value: v, d_log_delta: gd, d_log_theta: gt };
                Some((v, layout.gradient(&g)))
            }
            Ok(_) => None,
            Err(e) => {
                log::warn!("objective evaluation failed: {e}");
                None
            }
        }
    };

    let mut logs = Vec::with_capacity(config.restarts);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut failures = Vec::new();
    for (r, x0) in starting_points(&center, &bounds, config.restarts, config.seed).into_iter().enumerate() {
        let initial = eval_value(&x0);
        let result = match config.optimizer {
            Optimizer::Lbfgs => lbfgs(eval_grad, eval_opt, &x0, &bounds, config.max_iter, config.tolerance),
            Optimizer::NelderMead => nelder_mead(eval_value, &x0, &bounds, config.max_iter, config.tolerance),
            Optimizer::NelderMeadLbfgs => {
                let nm = nelder_mead(eval_value, &x0, &bounds, config.max_iter, config.tolerance);
                let mut polished = lbfgs(eval_grad, eval_opt, &nm.x, &bounds, config.max_iter, config.tolerance);
                if !(polished.f <= nm.f) {
                    polished = nm.clone();
                }
                polished.iterations += nm.iterations;
                polished.evaluations += nm.evaluations;
                polished
            }
        };
        let (f, x) = if result.f <= initial { (result.f, result.x) } else { (initial, x0.clone()) };
        let error = if f.is_finite() {
            None
        } else {
            let msg = format!("restart {r}: objective could not be evaluated");
            failures.push(msg.clone());
            Some(msg)
        };
        log::info!("restart {r}: objective {initial:.6} -> {f:.6} in {} iterations", result.iterations);
        logs.push(RestartLog {
            index: r,
            initial_objective: initial,
            final_objective: f,
            iterations: result.iterations,
            evaluations: result.evaluations,
            converged: result.converged,
            error,
        });
        if f.is_finite() && best.as_ref().is_none_or(|(_, bf, _)| f < *bf) {
            best = Some((r, f, x));
        }
    }
    let Some((best_restart, objective, x)) = best else {
        return Err(FoagpError::FitFailure(failures));
    };
    let mut model = FittedModel::with_params(data, family, &layout.params(&x))?;
    model.set_report(FitReport {
        path: path.into(),
        objective,
        best_restart,
        restarts: logs,
        wall_time_secs: start.elapsed().as_secs_f64(),
        warnings: Vec::new(),
    });
    Ok(model)
}

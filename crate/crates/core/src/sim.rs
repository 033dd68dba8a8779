//! Simulation studies, synthetic grid data and their ground truth.
//!
//! Example 1: `f = 1 + 2t + x1 t + 2 x2 t + x1 x2 t` with `(x1, x2, t)` iid
//! standard normal and noise sd 0.1.
//!
//! Example 2: `f = (t + 1) exp(-x1 t) sin(2 pi t / x2)` with `x1 ~ U[1, 2]`,
//! `x2 ~ U[0.9, 1.1]`, `t ~ U[0.2, 2]` and noise sd 0.01. Given `t` the function
//! factors as `(t + 1) A(x1, t) B(x2, t)`, so every effect and variance reduces
//! to one-dimensional moments of `A` and `B`, which are integrated numerically.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, GridDataset};
use crate::error::{FoagpError, Result};
use crate::quadrature::uniform_mean;

/// Absolute tolerance of every ground-truth integral.
pub const QUADRATURE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    Example1,
    Example2,
    SyntheticGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub example: Example,
    /// Sample count for the scattered examples.
    pub n_samples: usize,
    /// Grid inputs and positions for `SyntheticGrid`.
    pub m: usize,
    pub n: usize,
    pub dims: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn example1(n_samples: usize, seed: u64) -> Self {
        SimSpec { example: Example::Example1, n_samples, m: 0, n: 0, dims: 2, noise_sd: 0.1, seed }
    }

    pub fn example2(n_samples: usize, seed: u64) -> Self {
        SimSpec { example: Example::Example2, n_samples, m: 0, n: 0, dims: 2, noise_sd: 0.01, seed }
    }

    pub fn grid(m: usize, n: usize, seed: u64) -> Self {
        SimSpec { example: Example::SyntheticGrid, n_samples: m * n, m, n, dims: 2, noise_sd: 0.05, seed }
    }

    fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(FoagpError::InvalidInput(format!("noise sd must be non-negative, got {}", self.noise_sd)));
        }
        match self.example {
            Example::SyntheticGrid => {
                if self.m < 2 || self.n < 2 {
                    return Err(FoagpError::InsufficientData { needed: 2, got: self.m.min(self.n) });
                }
                if self.dims == 0 {
                    return Err(FoagpError::InvalidInput("grid data needs at least one input".into()));
                }
            }
            _ => {
                if self.n_samples < 2 {
                    return Err(FoagpError::InsufficientData { needed: 2, got: self.n_samples });
                }
            }
        }
        Ok(())
    }
}

/// Generating distribution of one variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputDistribution {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InputDistribution {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            InputDistribution::Normal { mean, sd } => Normal::new(mean, sd).map(|n| n.cdf(x)).unwrap_or(f64::NAN),
            InputDistribution::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// Maps a value into `[-1, 1]` through `2 F(x) - 1`.
    pub fn to_unit(&self, x: f64) -> f64 {
        2.0 * self.cdf(x) - 1.0
    }
}

impl Example {
    /// Distributions of `(x1, x2, t)`, when known.
    pub fn distributions(&self) -> Option<Vec<InputDistribution>> {
        let n = InputDistribution::Normal { mean: 0.0, sd: 1.0 };
        match self {
            Example::Example1 => Some(vec![n, n, n]),
            Example::Example2 => Some(vec![
                InputDistribution::Uniform { lo: 1.0, hi: 2.0 },
                InputDistribution::Uniform { lo: 0.9, hi: 1.1 },
                InputDistribution::Uniform { lo: 0.2, hi: 2.0 },
            ]),
            Example::SyntheticGrid => None,
        }
    }
}

pub fn example1_function(x1: f64, x2: f64, t: f64) -> f64 {
    1.0 + 2.0 * t + x1 * t + 2.0 * x2 * t + x1 * x2 * t
}

pub fn example2_function(x1: f64, x2: f64, t: f64) -> f64 {
    (t + 1.0) * (-x1 * t).exp() * (2.0 * PI * t / x2).sin()
}

/// Smooth test function for grid data; `x` has any length and lies in `[0, 1]^d`.
pub fn grid_function(x: &[f64], t: f64) -> f64 {
    let mut f = (2.0 * PI * t).sin() * (x[0] - 0.5);
    for (i, xi) in x.iter().enumerate() {
        f += (PI * xi * (t + 0.5)).cos() / (i + 1) as f64;
    }
    if x.len() >= 2 {
        f += 2.0 * x[0] * x[1] * t;
    }
    f
}

fn scattered(spec: &SimSpec, draw: impl Fn(&mut ChaCha8Rng) -> [f64; 3], f: fn(f64, f64, f64) -> f64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_samples;
    let (mut x1, mut x2, mut t, mut y) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let [a, b, c] = draw(&mut rng);
        let eps: f64 = rng.sample(StandardNormal);
        x1.push(a);
        x2.push(b);
        t.push(c);
        y.push(f(a, b, c) + spec.noise_sd * eps);
    }
    Dataset::new(vec![x1, x2], t, y)
}

pub fn gen_example1(spec: &SimSpec) -> Result<Dataset> {
    scattered(
        spec,
        |rng| [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)],
        example1_function,
    )
}

pub fn gen_example2(spec: &SimSpec) -> Result<Dataset> {
    scattered(
        spec,
        |rng| {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            let c: f64 = rng.random();
            [1.0 + a, 0.9 + 0.2 * b, 0.2 + 1.8 * c]
        },
        example2_function,
    )
}

/// Latin-hypercube inputs in `[0, 1]^d`, `n` equispaced positions in `[0, 1]`.
pub fn gen_grid(spec: &SimSpec) -> Result<GridDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (m, n) = (spec.m, spec.n);
    let mut columns = Vec::with_capacity(spec.dims);
    for _ in 0..spec.dims {
        let mut strata: Vec<usize> = (0..m).collect();
        strata.shuffle(&mut rng);
        columns.push(strata.iter().map(|&s| (s as f64 + rng.random::<f64>()) / m as f64).collect::<Vec<f64>>());
    }
    let positions: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
    let mut responses = Vec::with_capacity(m * n);
    for &t in &positions {
        for u in 0..m {
            let x: Vec<f64> = columns.iter().map(|c| c[u]).collect();
            let eps: f64 = rng.sample(StandardNormal);
            responses.push(grid_function(&x, t) + spec.noise_sd * eps);
        }
    }
    GridDataset::new(columns, positions, responses)
}

/// Dispatches on `spec.example` for the scattered examples.
pub fn generate(spec: &SimSpec) -> Result<Dataset> {
    match spec.example {
        Example::Example1 => gen_example1(spec),
        Example::Example2 => gen_example2(spec),
        Example::SyntheticGrid => Ok(gen_grid(spec)?.to_long()),
    }
}

/// The 4:1 train/test split (first 80% of rows train).
pub fn train_test_split(data: &Dataset) -> Result<(Dataset, Dataset)> {
    data.split(0.8)
}

/// One-dimensional moments of the two factors of Example 2 at position `t`.
#[derive(Clone, Copy, Debug)]
struct Example2Moments {
    c: f64,
    ea: f64,
    ea2: f64,
    eb: f64,
    eb2: f64,
}

fn example2_moments(t: f64) -> Result<Example2Moments> {
    let tol = QUADRATURE_TOL;
    Ok(Example2Moments {
        c: t + 1.0,
        ea: uniform_mean(|x| (-x * t).exp(), 1.0, 2.0, tol)?,
        ea2: uniform_mean(|x| (-2.0 * x * t).exp(), 1.0, 2.0, tol)?,
        eb: uniform_mean(|x| (2.0 * PI * t / x).sin(), 0.9, 1.1, tol)?,
        eb2: uniform_mean(|x| (2.0 * PI * t / x).sin().powi(2), 0.9, 1.1, tol)?,
    })
}

fn check_subset(subset: &[usize]) -> Result<()> {
    let ok = matches!(subset, [] | [1] | [2] | [1, 2]);
    if ok {
        Ok(())
    } else {
        Err(FoagpError::InvalidSubset { subset: subset.to_vec(), dims: 2 })
    }
}

/// True effect `f_{u|t}` at `(x, t)`; `subset` holds 1-based indices and the
/// empty subset is the mean curve.
pub fn true_effect(example: Example, subset: &[usize], x: &[f64], t: f64) -> Result<f64> {
    check_subset(subset)?;
    if x.len() != 2 {
        return Err(FoagpError::Shape(format!("examples have two inputs, got {}", x.len())));
    }
    match example {
        Example::Example1 => Ok(match subset {
            [] => 1.0 + 2.0 * t,
            [1] => x[0] * t,
            [2] => 2.0 * x[1] * t,
            _ => x[0] * x[1] * t,
        }),
        Example::Example2 => {
            let mo = example2_moments(t)?;
            let a = (-x[0] * t).exp() - mo.ea;
            let b = (2.0 * PI * t / x[1]).sin() - mo.eb;
            Ok(mo.c
                * match subset {
                    [] => mo.ea * mo.eb,
                    [1] => a * mo.eb,
                    [2] => mo.ea * b,
                    _ => a * b,
                })
        }
        Example::SyntheticGrid => Err(FoagpError::Unsupported("no ground truth for synthetic grid data".into())),
    }
}

/// True local variance `V_{u|t}` for a non-empty subset.
pub fn true_local_variance(example: Example, subset: &[usize], t: f64) -> Result<f64> {
    check_subset(subset)?;
    if subset.is_empty() {
        return Ok(0.0);
    }
    match example {
        Example::Example1 => Ok(match subset {
            [2] => 4.0 * t * t,
            _ => t * t,
        }),
        Example::Example2 => {
            let mo = example2_moments(t)?;
            let va = mo.ea2 - mo.ea * mo.ea;
            let vb = mo.eb2 - mo.eb * mo.eb;
            let c2 = mo.c * mo.c;
            Ok(match subset {
                [1] => c2 * va * mo.eb * mo.eb,
                [2] => c2 * mo.ea * mo.ea * vb,
                _ => c2 * va * vb,
            })
        }
        Example::SyntheticGrid => Err(FoagpError::Unsupported("no ground truth for synthetic grid data".into())),
    }
}

/// Effect subsets of the two-input examples, in reporting order.
pub const EXAMPLE_SUBSETS: [&[usize]; 3] = [&[1], &[2], &[1, 2]];

/// True ECV indices `(S1, S2, S12)`.
pub fn true_indices(example: Example) -> Result<[f64; 3]> {
    match example {
        Example::Example1 => Ok([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]),
        Example::Example2 => {
            let mut v = [0.0; 3];
            for (slot, u) in v.iter_mut().zip(EXAMPLE_SUBSETS) {
                let mut failure = None;
                let mean = uniform_mean(
                    |t| match true_local_variance(example, u, t) {
                        Ok(val) => val,
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    },
                    0.2,
                    2.0,
                    QUADRATURE_TOL,
                );
                if let Some(e) = failure {
                    return Err(e);
                }
                *slot = mean?;
            }
            let total: f64 = v.iter().sum();
            Ok(v.map(|x| x / total))
        }
        Example::SyntheticGrid => Err(FoagpError::Unsupported("no ground truth for synthetic grid data".into())),
    }
}

/// Effect values on a rectangular `(x, t)` grid: `values[ix][it]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectSurface {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl EffectSurface {
    /// Root-mean-square difference between `f(x, t)` and the stored values.
    pub fn rmse<F: FnMut(f64, f64) -> Result<f64>>(&self, mut f: F) -> Result<f64> {
        let mut sse = 0.0;
        for (ix, &x) in self.x.iter().enumerate() {
            for (it, &t) in self.t.iter().enumerate() {
                sse += (f(x, t)? - self.values[ix][it]).powi(2);
            }
        }
        Ok((sse / (self.x.len() * self.t.len()) as f64).sqrt())
    }

    /// Largest minus smallest value.
    pub fn range(&self) -> f64 {
        let all = self.values.iter().flatten();
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo
    }
}

/// Ground-truth bundle written next to simulated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub example: Example,
    /// ECV indices keyed by effect name.
    pub indices: BTreeMap<String, f64>,
    /// Rounded literature values the computed indices are checked against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_indices: Option<BTreeMap<String, f64>>,
    pub t_grid: Vec<f64>,
    pub mean_curve: Vec<f64>,
    pub local_variance: BTreeMap<String, Vec<f64>>,
    pub main_effects: BTreeMap<String, EffectSurface>,
}

impl Truth {
    pub fn index(&self, name: &str) -> Option<f64> {
        self.indices.get(name).copied()
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn names() -> [&'static str; 3] {
    ["f1", "f2", "f12"]
}

/// Closed forms (Example 1) or quadrature (Example 2) ground truth.
pub fn theoretical_truth(example: Example) -> Result<Truth> {
    let (t_range, x_ranges, surface_t) = match example {
        Example::Example1 => ((-1.5, 1.5), [(-2.0, 2.0), (-2.0, 2.0)], (-2.0, 2.0)),
        Example::Example2 => ((0.2, 2.0), [(1.0, 2.0), (0.9, 1.1)], (0.2, 2.0)),
        Example::SyntheticGrid => {
            return Err(FoagpError::Unsupported("no ground truth for synthetic grid data".into()))
        }
    };
    let s = true_indices(example)?;
    let indices = names().iter().zip(s).map(|(n, v)| (n.to_string(), v)).collect();
    let reference_indices = match example {
        Example::Example2 => {
            Some(names().iter().zip([0.3251, 0.6027, 0.0722]).map(|(n, v)| (n.to_string(), v)).collect())
        }
        _ => None,
    };
    let t_grid = linspace(t_range.0, t_range.1, 101);
    let mid = [0.5 * (x_ranges[0].0 + x_ranges[0].1), 0.5 * (x_ranges[1].0 + x_ranges[1].1)];
    let mean_curve = t_grid.iter().map(|&t| true_effect(example, &[], &mid, t)).collect::<Result<_>>()?;
    let mut local_variance = BTreeMap::new();
    for (name, u) in names().iter().zip(EXAMPLE_SUBSETS) {
        let curve = t_grid.iter().map(|&t| true_local_variance(example, u, t)).collect::<Result<_>>()?;
        local_variance.insert(name.to_string(), curve);
    }
    let st = linspace(surface_t.0, surface_t.1, 21);
    let mut main_effects = BTreeMap::new();
    for (i, name) in ["f1", "f2"].iter().enumerate() {
        let xs = linspace(x_ranges[i].0, x_ranges[i].1, 21);
        let values = xs
            .iter()
            .map(|&xv| {
                let mut x = mid;
                x[i] = xv;
                st.iter().map(|&t| true_effect(example, &[i + 1], &x, t)).collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        main_effects.insert(name.to_string(), EffectSurface { x: xs, t: st.clone(), values });
    }
    Ok(Truth { example, indices, reference_indices, t_grid, mean_curve, local_variance, main_effects })
}

//! Predictions and orthogonal effect predictions.
//!
//! With `w_a = gamma_a dt^2 k_t(t, t_a)` and `q_{i,a} = di^2 k~_i(x_i, x_ia)`
//! the full prediction is `sum_a w_a prod_i (1 + q_{i,a}) + y_mean` and the
//! effect of subset `u` is `sum_a w_a prod_{i in u} q_{i,a}`. On grid data the
//! sum over samples collapses to a sum over the `m` inputs with
//! `w = dt^2 Gamma k_t(t, tau)`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{FoagpError, Result};
use crate::kernel::orthogonal_vector;
use crate::model::{FittedModel, TrainingData};

/// Largest number of effect subsets `decompose` will enumerate.
pub const MAX_SUBSETS: u128 = 1_000_000;

/// Effect subset as sorted, unique, 1-based input indices. Empty is the mean effect.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EffectIndex(Vec<usize>);

impl EffectIndex {
    pub fn new(mut indices: Vec<usize>, dims: usize) -> Result<Self> {
        let original = indices.clone();
        indices.sort_unstable();
        indices.dedup();
        if indices.len() != original.len() || indices.iter().any(|&i| i == 0 || i > dims) {
            return Err(FoagpError::InvalidSubset { subset: original, dims });
        }
        Ok(EffectIndex(indices))
    }

    pub fn empty() -> Self {
        EffectIndex(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Column name: `f0`, `f1`, `f12`, ...; models with ten or more inputs
    /// separate indices with underscores (`f1_12`).
    pub fn name(&self, dims: usize) -> String {
        if self.0.is_empty() {
            return "f0".into();
        }
        let sep = if dims >= 10 { "_" } else { "" };
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        format!("f{}", parts.join(sep))
    }

    /// Inverse of [`EffectIndex::name`].
    pub fn parse(name: &str, dims: usize) -> Result<Self> {
        let bad = || FoagpError::InvalidInput(format!("cannot parse effect name {name:?}"));
        let body = name.strip_prefix('f').ok_or_else(bad)?;
        if body == "0" {
            return Ok(EffectIndex::empty());
        }
        let indices: Vec<usize> = if dims >= 10 {
            body.split('_').map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?
        } else {
            body.chars().map(|c| c.to_digit(10).map(|v| v as usize).ok_or_else(bad)).collect::<Result<_>>()?
        };
        EffectIndex::new(indices, dims)
    }
}

impl fmt::Display for EffectIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc.saturating_mul(n - j) / (j + 1);
    }
    acc
}

/// Number of subsets with `|u| <= max_order`, including the empty one.
pub fn subset_count(dims: usize, max_order: usize) -> u128 {
    (0..=max_order.min(dims) as u128).fold(0u128, |acc, k| acc.saturating_add(binomial(dims as u128, k)))
}

/// All subsets with `|u| <= max_order`, by order then lexicographically.
pub fn enumerate_subsets(dims: usize, max_order: usize) -> Result<Vec<EffectIndex>> {
    if max_order > dims {
        return Err(FoagpError::InvalidInput(format!("max_order {max_order} exceeds the {dims} inputs")));
    }
    let count = subset_count(dims, max_order);
    if count > MAX_SUBSETS {
        return Err(FoagpError::TooManySubsets { count, limit: MAX_SUBSETS });
    }
    let mut out = vec![EffectIndex::empty()];
    for k in 1..=max_order {
        let mut combo: Vec<usize> = (1..=k).collect();
        loop {
            out.push(EffectIndex(combo.clone()));
            let mut i = k;
            while i > 0 && combo[i - 1] == dims - k + i {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..k {
                combo[j] = combo[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// Default enumeration depth: `min(d, 3)`.
pub fn default_max_order(dims: usize) -> usize {
    dims.min(3)
}

/// Per-point weights and scaled kernel vectors shared by every subset.
struct PointTerms {
    w: Vec<f64>,
    q: Vec<Vec<f64>>,
}

fn check_point(model: &FittedModel, x: &[f64], t: f64) -> Result<()> {
    if x.len() != model.dims() {
        return Err(FoagpError::Shape(format!("point has {} inputs, model has {}", x.len(), model.dims())));
    }
    if let Some(bad) = x.iter().chain(std::iter::once(&t)).find(|v| !v.is_finite()) {
        return Err(FoagpError::InvalidInput(format!("non-finite evaluation coordinate {bad}")));
    }
    Ok(())
}

/// Output-side weights `w` for position `t`.
pub(crate) fn output_weights(model: &FittedModel, t: f64) -> Vec<f64> {
    let dt2 = model.params.output_weight().powi(2);
    let spec = &model.output_kernel;
    match &model.data {
        TrainingData::Dense(d) => {
            model.gamma.iter().zip(d.positions()).map(|(g, &ta)| g * dt2 * spec.k(t, ta)).collect()
        }
        TrainingData::Grid(g) => {
            let gamma = model.gamma_mat.as_ref().expect("grid model stores matricized weights");
            let kt: Vec<f64> = g.positions().iter().map(|&tv| spec.k(t, tv)).collect();
            (0..g.m())
                .map(|u| {
                    let mut acc = 0.0;
                    for (v, k) in kt.iter().enumerate() {
                        acc += gamma[(u, v)] * k;
                    }
                    dt2 * acc
                })
                .collect()
        }
    }
}

/// `di^2 k~_i(x, X_i)` against the training column of input `i` (0-based).
fn input_terms(model: &FittedModel, i: usize, x: f64) -> Vec<f64> {
    let w = model.params.input_weight(i).powi(2);
    orthogonal_vector(&model.input_kernels[i], &model.caches[i], x).into_iter().map(|k| w * k).collect()
}

fn point_terms(model: &FittedModel, x: &[f64], t: f64, dims_needed: &[usize]) -> PointTerms {
    let mut q = vec![Vec::new(); model.dims()];
    for &i in dims_needed {
        q[i] = input_terms(model, i, x[i]);
    }
    PointTerms { w: output_weights(model, t), q }
}

fn effect_from_terms(terms: &PointTerms, u: &EffectIndex) -> f64 {
    let mut acc = 0.0;
    for (a, wa) in terms.w.iter().enumerate() {
        let mut p = *wa;
        for &i in u.indices() {
            p *= terms.q[i - 1][a];
        }
        acc += p;
    }
    acc
}

fn total_from_terms(terms: &PointTerms) -> f64 {
    let mut acc = 0.0;
    for (a, wa) in terms.w.iter().enumerate() {
        let mut p = *wa;
        for qi in &terms.q {
            p *= 1.0 + qi[a];
        }
        acc += p;
    }
    acc
}

/// Full prediction `f(x, t)`.
pub fn predict(model: &FittedModel, x: &[f64], t: f64) -> Result<f64> {
    check_point(model, x, t)?;
    let all: Vec<usize> = (0..model.dims()).collect();
    Ok(total_from_terms(&point_terms(model, x, t, &all)) + model.y_mean)
}

/// Effect prediction `f_{u|t}(x_u)`; `x_u` lists the coordinates of `u` in order.
/// The mean effect includes the subtracted response mean.
pub fn predict_effect(model: &FittedModel, u: &EffectIndex, x_u: &[f64], t: f64) -> Result<f64> {
    let d = model.dims();
    if u.indices().iter().any(|&i| i == 0 || i > d) {
        return Err(FoagpError::InvalidSubset { subset: u.indices().to_vec(), dims: d });
    }
    if x_u.len() != u.len() {
        return Err(FoagpError::Shape(format!("subset {u} needs {} coordinates, got {}", u.len(), x_u.len())));
    }
    let mut x = vec![0.0; d];
    for (&i, &v) in u.indices().iter().zip(x_u) {
        x[i - 1] = v;
    }
    check_point(model, &x, t)?;
    let needed: Vec<usize> = u.indices().iter().map(|i| i - 1).collect();
    let value = effect_from_terms(&point_terms(model, &x, t, &needed), u);
    Ok(if u.is_empty() { value + model.y_mean } else { value })
}

/// Effect predictions for a set of points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub dims: usize,
    pub x: Vec<Vec<f64>>,
    pub t: Vec<f64>,
    pub subsets: Vec<EffectIndex>,
    pub names: Vec<String>,
    /// `values[s][p]`: effect `subsets[s]` at point `p`.
    pub values: Vec<Vec<f64>>,
    /// Full predictions.
    pub total: Vec<f64>,
    /// True when every subset is present, so the effects sum to `total`.
    pub complete: bool,
}

impl EffectTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i].as_slice())
    }

    /// Largest `|total - sum of effects|` over the points.
    pub fn sum_residual(&self) -> f64 {
        (0..self.t.len())
            .map(|p| (self.total[p] - self.values.iter().map(|c| c[p]).sum::<f64>()).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with header `x1..xd,t,<effects>,total`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dims).map(|i| format!("x{i}")).collect();
        header.push("t".into());
        header.extend(self.names.iter().cloned());
        header.push("total".into());
        w.write_record(&header).map_err(csv_err)?;
        for p in 0..self.t.len() {
            let mut rec: Vec<String> = self.x[p].iter().map(|v| v.to_string()).collect();
            rec.push(self.t[p].to_string());
            rec.extend(self.values.iter().map(|c| c[p].to_string()));
            rec.push(self.total[p].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> FoagpError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FoagpError::Io(io),
        other => FoagpError::Format(format!("{other:?}")),
    }
}

/// Effects of every subset with `|u| <= max_order` at each point.
pub fn decompose(model: &FittedModel, x: &[Vec<f64>], t: &[f64], max_order: usize) -> Result<EffectTable> {
    let d = model.dims();
    if x.len() != t.len() {
        return Err(FoagpError::Shape(format!("{} input rows but {} positions", x.len(), t.len())));
    }
    let subsets = enumerate_subsets(d, max_order)?;
    let complete = max_order == d;
    if !complete {
        log::warn!("max_order {max_order} < {d}: effects will not sum to the prediction");
    }
    let all: Vec<usize> = (0..d).collect();
    let mut values = vec![Vec::with_capacity(t.len()); subsets.len()];
    let mut total = Vec::with_capacity(t.len());
    for (xp, &tp) in x.iter().zip(t) {
        check_point(model, xp, tp)?;
        let terms = point_terms(model, xp, tp, &all);
        for (col, u) in values.iter_mut().zip(&subsets) {
            let v = effect_from_terms(&terms, u);
            col.push(if u.is_empty() { v + model.y_mean } else { v });
        }
        total.push(total_from_terms(&terms) + model.y_mean);
    }
    let names = subsets.iter().map(|u| u.name(d)).collect();
    Ok(EffectTable { dims: d, x: x.to_vec(), t: t.to_vec(), subsets, names, values, total, complete })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::HyperParams;
    use crate::data::{Dataset, GridDataset};
    use crate::kernel::KernelFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_model(n: usize, d: usize, seed: u64) -> FittedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..d).map(|_| (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y = (0..n).map(|a| cols[0][a] * t[a] + (cols[d - 1][a] * 2.0).sin() + 0.1 * rng.random::<f64>()).collect();
        let mut p = HyperParams::unit(d);
        p.delta[0] = 0.2;
        for i in 0..d {
            p.delta[1 + i] = 0.8 + 0.3 * i as f64;
            p.theta[i] = 0.6 + 0.2 * i as f64;
        }
        p.theta[d] = 0.5;
        FittedModel::with_params(Dataset::new(cols, t, y).unwrap(), KernelFamily::SquaredExponential, &p).unwrap()
    }

    #[test]
    fn names_and_parsing() {
        assert_eq!(EffectIndex::empty().name(2), "f0");
        assert_eq!(EffectIndex::new(vec![2, 1], 2).unwrap().name(2), "f12");
        assert_eq!(EffectIndex::new(vec![1, 12], 12).unwrap().name(12), "f1_12");
        for (name, d) in [("f0", 3), ("f13", 3), ("f2_11", 11), ("f10", 10)] {
            assert_eq!(EffectIndex::parse(name, d).unwrap().name(d), name);
        }
        assert!(EffectIndex::new(vec![0], 2).is_err());
        assert!(EffectIndex::new(vec![3], 2).is_err());
        assert!(EffectIndex::new(vec![1, 1], 2).is_err());
        assert!(EffectIndex::parse("g1", 2).is_err());
    }

    #[test]
    fn subset_enumeration_counts() {
        let s = enumerate_subsets(2, 2).unwrap();
        let names: Vec<String> = s.iter().map(|u| u.name(2)).collect();
        assert_eq!(names, ["f0", "f1", "f2", "f12"]);
        assert_eq!(enumerate_subsets(10, 1).unwrap().len(), 11);
        assert_eq!(enumerate_subsets(5, 5).unwrap().len(), 32);
        assert_eq!(enumerate_subsets(4, 2).unwrap().len(), 11);
        assert!(matches!(enumerate_subsets(40, 20), Err(FoagpError::TooManySubsets { .. })));
        assert!(enumerate_subsets(2, 3).is_err());
        assert_eq!(default_max_order(10), 3);
        assert_eq!(default_max_order(2), 2);
    }

    #[test]
    fn effects_sum_to_prediction() {
        for d in 1..=3 {
            let model = toy_model(30, d, d as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let xs: Vec<Vec<f64>> = (0..10).map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
            let ts: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            let table = decompose(&model, &xs, &ts, d).unwrap();
            assert!(table.complete);
            let scale = table.total.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            assert!(table.sum_residual() <= 1e-10 * scale);
            for p in 0..10 {
                assert_eq!(table.total[p], predict(&model, &xs[p], ts[p]).unwrap());
            }
        }
    }

    #[test]
    fn effect_ignores_coordinates_outside_subset() {
        let model = toy_model(25, 3, 4);
        let u = EffectIndex::new(vec![1, 3], 3).unwrap();
        let a = predict_effect(&model, &u, &[0.3, -0.2], 0.4).unwrap();
        let table_a = decompose(&model, &[vec![0.3, 0.9, -0.2]], &[0.4], 3).unwrap();
        let table_b = decompose(&model, &[vec![0.3, -0.7, -0.2]], &[0.4], 3).unwrap();
        assert_eq!(table_a.column("f13").unwrap()[0], table_b.column("f13").unwrap()[0]);
        assert_eq!(table_a.column("f13").unwrap()[0], a);
    }

    #[test]
    fn zero_weights_predict_the_mean() {
        let mut model = toy_model(20, 2, 5);
        let n = model.gamma.len();
        model.set_gamma(vec![0.0; n]).unwrap();
        assert_eq!(predict(&model, &[0.1, 0.2], 0.3).unwrap(), model.y_mean());
        assert_eq!(predict_effect(&model, &EffectIndex::empty(), &[], 0.3).unwrap(), model.y_mean());
    }

    #[test]
    fn conditional_zero_mean_over_training_column() {
        let model = toy_model(40, 2, 6);
        let TrainingData::Dense(data) = model.data() else { unreachable!() };
        for t in [0.1, 0.5, 0.93] {
            for i in 1..=2 {
                let u = EffectIndex::new(vec![i], 2).unwrap();
                let vals: Vec<f64> =
                    data.column(i - 1).iter().map(|&x| predict_effect(&model, &u, &[x], t).unwrap()).collect();
                let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                assert!(mean.abs() <= 1e-10 * scale, "{mean} vs {scale}");
            }
        }
    }

    #[test]
    fn grid_and_dense_predictions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (m, n) = (6, 5);
        let cols: Vec<Vec<f64>> = (0..2).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect();
        let pos: Vec<f64> = (0..n).map(|j| j as f64 / 4.0).collect();
        let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let g = GridDataset::from_response_rows(cols, pos, &rows).unwrap();
        let p = HyperParams { delta: vec![0.3, 1.1, 0.7, 1.0], theta: vec![0.4, 0.9, 0.6], sigma2: 1.0, period: None };
        let grid = FittedModel::with_params(g.clone(), KernelFamily::SquaredExponential, &p).unwrap();
        let dense = FittedModel::with_params(g.to_long(), KernelFamily::SquaredExponential, &p).unwrap();
        let xs = vec![vec![0.2, 0.8], vec![0.55, 0.1]];
        let ts = vec![0.3, 0.9];
        let a = decompose(&grid, &xs, &ts, 2).unwrap();
        let b = decompose(&dense, &xs, &ts, 2).unwrap();
        for (ca, cb) in a.values.iter().chain([&a.total]).zip(b.values.iter().chain([&b.total])) {
            for (va, vb) in ca.iter().zip(cb) {
                assert!((va - vb).abs() <= 1e-10 * vb.abs().max(1.0), "{va} vs {vb}");
            }
        }
    }

    #[test]
    fn csv_has_named_columns() {
        let model = toy_model(15, 2, 8);
        let table = decompose(&model, &[vec![0.1, 0.2]], &[0.5], 2).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,x2,t,f0,f1,f2,f12,total\n"));
        let partial = decompose(&model, &[vec![0.1, 0.2]], &[0.5], 1).unwrap();
        assert!(!partial.complete);
        assert_eq!(partial.names, ["f0", "f1", "f2"]);
    }

    #[test]
    fn invalid_queries_are_rejected() {
        let model = toy_model(15, 2, 9);
        assert!(predict(&model, &[0.1], 0.0).is_err());
        assert!(predict(&model, &[0.1, f64::NAN], 0.0).is_err());
        let u = EffectIndex(vec![3]);
        assert!(matches!(predict_effect(&model, &u, &[0.0], 0.0), Err(FoagpError::InvalidSubset { .. })));
    }
}

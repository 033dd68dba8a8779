//! Analytic local and global (ECV) variance estimators and sensitivity indices.
//!
//! Under the empirical input measure, with `M_i = di^4 K_i^2 / N` and
//! `H_u = (.)_{i in u} M_i`:
//!
//! - local variance: `V_{u|t} = dt^4 w^T H_u w`, `w = gamma (.) k_t(t)`;
//! - global variance: `V_u = gamma^T ((dt^4 K_t^2 / N) (.) H_u) gamma`.
//!
//! On grid data `K_i` becomes the `m x m` matrix `R_i`, `w` becomes `Gamma r_t(t)`
//! and the global variance is the trace `<H_u Gamma, Gamma G>` with
//! `G = dt^4 R_t^2 / n`.

use std::io::Write;

use faer::Mat;
use serde::Serialize;

use crate::effects::{csv_err, enumerate_subsets, output_weights, EffectIndex};
use crate::error::{FoagpError, Result};
use crate::model::{FittedModel, TrainingData};

/// Precomputed subset-independent matrices of one model.
pub struct VarianceEngine<'a> {
    model: &'a FittedModel,
    /// `di^4 K_i^2 / N` per input.
    m: Vec<Mat<f64>>,
    /// `dt^4 K_t^2 / N` (dense) or `dt^4 R_t^2 / n` (grid), built lazily.
    g: Option<Mat<f64>>,
}

fn scaled_square(k: &Mat<f64>, scale: f64) -> Mat<f64> {
    let mut sq = k * k;
    for j in 0..sq.ncols() {
        for v in sq.col_as_slice_mut(j) {
            *v *= scale;
        }
    }
    sq
}

fn hadamard_into(acc: &mut Mat<f64>, other: &Mat<f64>) {
    for j in 0..acc.ncols() {
        for (a, b) in acc.col_as_slice_mut(j).iter_mut().zip(other.col_as_slice(j)) {
            *a *= b;
        }
    }
}

fn frobenius(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for (x, y) in a.col_as_slice(j).iter().zip(b.col_as_slice(j)) {
            acc += x * y;
        }
    }
    acc
}

impl<'a> VarianceEngine<'a> {
    pub fn new(model: &'a FittedModel) -> Self {
        let m = model
            .input_grams
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let size = k.nrows() as f64;
                scaled_square(k, model.params.input_weight(i).powi(4) / size)
            })
            .collect();
        VarianceEngine { model, m, g: None }
    }

    fn check(&self, u: &EffectIndex) -> Result<()> {
        let d = self.model.dims();
        if u.indices().iter().any(|&i| i == 0 || i > d) {
            return Err(FoagpError::InvalidSubset { subset: u.indices().to_vec(), dims: d });
        }
        Ok(())
    }

    /// `H_u`; `None` for the empty subset.
    fn h(&self, u: &EffectIndex) -> Option<Mat<f64>> {
        let (first, rest) = u.indices().split_first()?;
        let mut h = self.m[first - 1].clone();
        for &i in rest {
            hadamard_into(&mut h, &self.m[i - 1]);
        }
        Some(h)
    }

    /// Output weight matrix with one column per position.
    fn weights(&self, ts: &[f64]) -> Result<Mat<f64>> {
        if let Some(bad) = ts.iter().find(|v| !v.is_finite()) {
            return Err(FoagpError::InvalidInput(format!("non-finite position {bad}")));
        }
        let cols: Vec<Vec<f64>> = ts.iter().map(|&t| output_weights(self.model, t)).collect();
        let rows = self.m.first().map(|m| m.nrows()).unwrap_or(0);
        Ok(Mat::from_fn(rows, ts.len(), |a, j| cols[j][a]))
    }

    /// `V_{u|t}` at every position in `ts`.
    pub fn local_variances(&self, u: &EffectIndex, ts: &[f64]) -> Result<Vec<f64>> {
        self.check(u)?;
        let Some(h) = self.h(u) else {
            return Ok(vec![0.0; ts.len()]);
        };
        let w = self.weights(ts)?;
        Ok(self.local_from(&h, &w))
    }

    fn local_from(&self, h: &Mat<f64>, w: &Mat<f64>) -> Vec<f64> {
        let hw = h * w;
        (0..w.ncols())
            .map(|j| w.col_as_slice(j).iter().zip(hw.col_as_slice(j)).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn output_moment(&mut self) -> &Mat<f64> {
        if self.g.is_none() {
            let model = self.model;
            let kt = &model.output_gram;
            let scale = model.params.output_weight().powi(4) / kt.nrows() as f64;
            self.g = Some(scaled_square(kt, scale));
        }
        self.g.as_ref().expect("initialized above")
    }

    /// ECV numerator `V_u`.
    pub fn global_variance(&mut self, u: &EffectIndex) -> Result<f64> {
        self.check(u)?;
        let Some(h) = self.h(u) else {
            return Ok(0.0);
        };
        Ok(self.global_from(&h))
    }

    fn global_from(&mut self, h: &Mat<f64>) -> f64 {
        let model = self.model;
        match &model.data {
            TrainingData::Dense(_) => {
                let mut a = self.output_moment().clone();
                hadamard_into(&mut a, h);
                let gamma = Mat::from_fn(model.gamma.len(), 1, |i, _| model.gamma[i]);
                let ag = &a * &gamma;
                model.gamma.iter().zip(ag.col_as_slice(0)).map(|(x, y)| x * y).sum()
            }
            TrainingData::Grid(_) => {
                let gamma = model.gamma_mat.as_ref().expect("grid model stores matricized weights").clone();
                let g = self.output_moment();
                let hg = h * &gamma;
                let gg = &gamma * g;
                frobenius(&hg, &gg)
            }
        }
    }
}

/// Local variance `V_{u|t}`; zero for the empty subset.
pub fn local_variance(model: &FittedModel, u: &EffectIndex, t: f64) -> Result<f64> {
    Ok(VarianceEngine::new(model).local_variances(u, &[t])?[0])
}

/// Global (ECV) variance `V_u`; zero for the empty subset.
pub fn global_variance(model: &FittedModel, u: &EffectIndex) -> Result<f64> {
    VarianceEngine::new(model).global_variance(u)
}

/// Sensitivity results for one effect subset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectSensitivity {
    pub name: String,
    pub subset: EffectIndex,
    pub local_variance: Vec<f64>,
    /// `NaN` (serialized as null) where the total local variance vanishes.
    pub local_sobol: Vec<f64>,
    pub global_variance: f64,
    pub ecv_index: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub t_grid: Vec<f64>,
    pub effects: Vec<EffectSensitivity>,
    pub total_local_variance: Vec<f64>,
    pub total_global_variance: f64,
    /// True when every non-empty subset is included.
    pub complete: bool,
    pub warnings: Vec<String>,
}

impl SensitivityReport {
    pub fn effect(&self, name: &str) -> Option<&EffectSensitivity> {
        self.effects.iter().find(|e| e.name == name)
    }

    /// ECV indices in report order.
    pub fn ecv(&self) -> Vec<(String, f64)> {
        self.effects.iter().map(|e| (e.name.clone(), e.ecv_index)).collect()
    }

    /// Curves CSV: one row per position with local variance and local index columns.
    pub fn write_curves_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(self.effects.iter().map(|e| format!("V_{}", e.name)));
        header.extend(self.effects.iter().map(|e| format!("S_{}", e.name)));
        header.push("V_total".into());
        w.write_record(&header).map_err(csv_err)?;
        for (j, t) in self.t_grid.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.effects.iter().map(|e| e.local_variance[j].to_string()));
            rec.extend(self.effects.iter().map(|e| e.local_sobol[j].to_string()));
            rec.push(self.total_local_variance[j].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Clamps values above `-1e-12 * scale` to zero; returns a warning for any
/// value below that.
fn clamp_nonnegative(values: &mut [f64], scale: f64, what: &str, warnings: &mut Vec<String>) {
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-12 * scale {
                warnings.push(format!("{what} {v:e} is negative beyond rounding (scale {scale:e}); clamped to 0"));
            }
            *v = 0.0;
        }
    }
}

fn normalize(values: &[f64], total: f64, scale: f64) -> Vec<f64> {
    if total < 1e-14 * scale || !(total > 0.0) {
        vec![f64::NAN; values.len()]
    } else {
        values.iter().map(|v| v / total).collect()
    }
}

/// Local curves and ECV indices for every non-empty subset with `|u| <= max_order`.
pub fn sensitivity_report(model: &FittedModel, max_order: usize, t_grid: &[f64]) -> Result<SensitivityReport> {
    let d = model.dims();
    if max_order == 0 {
        return Err(FoagpError::InvalidInput("max_order must be at least 1".into()));
    }
    let subsets: Vec<EffectIndex> = enumerate_subsets(d, max_order)?.into_iter().filter(|u| !u.is_empty()).collect();
    let mut engine = VarianceEngine::new(model);
    let w = engine.weights(t_grid)?;
    let mut warnings = Vec::new();
    let mut local = Vec::with_capacity(subsets.len());
    let mut global = Vec::with_capacity(subsets.len());
    for u in &subsets {
        let h = engine.h(u).expect("non-empty subset");
        local.push(engine.local_from(&h, &w));
        global.push(engine.global_from(&h));
    }
    let local_scale = local.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let global_scale = global.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for curve in local.iter_mut() {
        clamp_nonnegative(curve, local_scale, "local variance", &mut warnings);
    }
    clamp_nonnegative(&mut global, global_scale, "global variance", &mut warnings);

    let total_local: Vec<f64> = (0..t_grid.len()).map(|j| local.iter().map(|c| c[j]).sum()).collect();
    let total_global: f64 = global.iter().sum();
    let total_scale = total_local.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut sobol = vec![Vec::with_capacity(t_grid.len()); subsets.len()];
    let mut degenerate = 0;
    for (j, &tot) in total_local.iter().enumerate() {
        let col: Vec<f64> = local.iter().map(|c| c[j]).collect();
        let idx = normalize(&col, tot, total_scale);
        if idx.first().is_some_and(|v| v.is_nan()) {
            degenerate += 1;
        }
        for (s, v) in sobol.iter_mut().zip(idx) {
            s.push(v);
        }
    }
    if degenerate > 0 {
        warnings.push(format!("total local variance vanishes at {degenerate} position(s); local indices set to NaN"));
    }
    let ecv = normalize(&global, total_global, global_scale);
    if ecv.first().is_some_and(|v| v.is_nan()) {
        warnings.push("total global variance vanishes; ECV indices set to NaN".into());
    }
    for msg in &warnings {
        log::warn!("{msg}");
    }
    let effects = subsets
        .into_iter()
        .zip(local)
        .zip(sobol)
        .zip(global.iter().zip(&ecv))
        .map(|(((u, lv), ls), (&gv, &e))| EffectSensitivity {
            name: u.name(d),
            subset: u,
            local_variance: lv,
            local_sobol: ls,
            global_variance: gv,
            ecv_index: e,
        })
        .collect();
    Ok(SensitivityReport {
        t_grid: t_grid.to_vec(),
        effects,
        total_local_variance: total_local,
        total_global_variance: total_global,
        complete: max_order == d,
        warnings,
    })
}

/// Normalized local indices `S_{u|t}` over `t_grid`.
pub fn local_sobol(model: &FittedModel, max_order: usize, t_grid: &[f64]) -> Result<Vec<(EffectIndex, Vec<f64>)>> {
    let r = sensitivity_report(model, max_order, t_grid)?;
    Ok(r.effects.into_iter().map(|e| (e.subset, e.local_sobol)).collect())
}

/// ECV indices `S_u`.
pub fn ecv_indices(model: &FittedModel, max_order: usize) -> Result<Vec<(EffectIndex, f64)>> {
    let r = sensitivity_report(model, max_order, &[])?;
    Ok(r.effects.into_iter().map(|e| (e.subset, e.ecv_index)).collect())
}

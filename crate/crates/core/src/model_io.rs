//! Model files: a JSON envelope plus a little-endian binary sidecar.
//!
//! The sidecar holds the training data and `gamma`. Loading rebuilds the Gram
//! matrices and factorization from the stored data and hyperparameters, then
//! restores `gamma` verbatim, so predictions are bit-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::HyperParams;
use crate::data::{Dataset, GridDataset};
use crate::error::{FoagpError, Result};
use crate::kernel::KernelFamily;
use crate::model::{FitReport, FittedModel, TrainingData};

pub const FORMAT_NAME: &str = "foagp-model";
pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FOAGPBIN";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub format: String,
    pub version: u32,
    /// `dense` or `grid`.
    pub layout: String,
    pub dims: usize,
    /// Samples (dense) or grid inputs `m` (grid).
    pub rows: usize,
    pub positions: usize,
    pub output_kernel: KernelFamily,
    pub params: HyperParams,
    pub y_mean: f64,
    /// Grand means of the per-input moment caches.
    pub grand_means: Vec<f64>,
    /// SHA-256 of the training-data section of the sidecar.
    pub data_fingerprint: String,
    /// Sidecar file name, relative to the envelope.
    pub sidecar: String,
    pub sidecar_sha256: String,
    #[serde(default)]
    pub report: Option<FitReport>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn data_bytes(data: &TrainingData) -> Vec<u8> {
    let (columns, positions, responses) = match data {
        TrainingData::Dense(d) => (d.columns(), d.positions(), d.responses()),
        TrainingData::Grid(g) => (g.columns(), g.positions(), g.responses()),
    };
    let mut buf = Vec::new();
    for c in columns {
        push_f64s(&mut buf, c);
    }
    push_f64s(&mut buf, positions);
    push_f64s(&mut buf, responses);
    buf
}

/// SHA-256 of the training data in sidecar byte order, as hex.
pub fn data_fingerprint(data: &TrainingData) -> String {
    hex(&Sha256::digest(data_bytes(data)))
}

fn sidecar_path(envelope_path: &Path, name: &str) -> PathBuf {
    envelope_path.parent().unwrap_or(Path::new("")).join(name)
}

/// Writes `path` (JSON) and a sidecar next to it with extension `bin`.
pub fn save_model(model: &FittedModel, path: &Path) -> Result<()> {
    let data = model.data();
    let (layout, rows, positions) = match data {
        TrainingData::Dense(d) => ("dense", d.len(), d.len()),
        TrainingData::Grid(g) => ("grid", g.m(), g.n()),
    };
    let body = data_bytes(data);
    let mut bin = Vec::with_capacity(body.len() + 8 * model.gamma().len() + 44);
    bin.extend_from_slice(MAGIC);
    bin.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [model.dims(), rows, positions, model.gamma().len()] {
        bin.extend_from_slice(&(v as u64).to_le_bytes());
    }
    bin.extend_from_slice(&body);
    push_f64s(&mut bin, model.gamma());

    let sidecar_file = path.with_extension("bin");
    let sidecar = sidecar_file
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| FoagpError::InvalidInput(format!("bad model path {}", path.display())))?
        .to_string();
    let envelope = Envelope {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        layout: layout.into(),
        dims: model.dims(),
        rows,
        positions,
        output_kernel: model.output_family(),
        params: model.params().clone(),
        y_mean: model.y_mean(),
        grand_means: model.moment_caches().iter().map(|c| c.grand_mean).collect(),
        data_fingerprint: hex(&Sha256::digest(&body)),
        sidecar,
        sidecar_sha256: hex(&Sha256::digest(&bin)),
        report: model.report().cloned(),
    };
    fs::write(&sidecar_file, &bin)?;
    fs::write(path, serde_json::to_string_pretty(&envelope)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| FoagpError::Format("model sidecar is truncated".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| FoagpError::Format("model sidecar size overflow".into()))?;
        let b = self.take(len)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn format_err(msg: impl Into<String>) -> FoagpError {
    FoagpError::Format(msg.into())
}

/// Reads a model written by [`save_model`] and re-factorizes it.
pub fn load_model(path: &Path) -> Result<FittedModel> {
    let text = fs::read_to_string(path)?;
    let env: Envelope = serde_json::from_str(&text)?;
    if env.format != FORMAT_NAME {
        return Err(format_err(format!("not a model file (format {:?})", env.format)));
    }
    if env.version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported model version {}", env.version)));
    }
    let bin = fs::read(sidecar_path(path, &env.sidecar))?;
    if hex(&Sha256::digest(&bin)) != env.sidecar_sha256 {
        return Err(format_err("model sidecar checksum mismatch"));
    }
    let mut r = Reader { bytes: &bin, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(format_err("model sidecar has the wrong magic bytes"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported sidecar version {version}")));
    }
    let (dims, rows, positions, gamma_len) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    if (dims, rows, positions) != (env.dims, env.rows, env.positions) {
        return Err(format_err("sidecar shape does not match the envelope"));
    }
    let body_start = r.at;
    let columns = (0..dims).map(|_| r.f64s(rows)).collect::<Result<Vec<_>>>()?;
    let pos = r.f64s(positions)?;
    let responses = match env.layout.as_str() {
        "dense" => r.f64s(rows)?,
        "grid" => r.f64s(rows.checked_mul(positions).ok_or_else(|| format_err("grid size overflow"))?)?,
        other => return Err(format_err(format!("unknown layout {other:?}"))),
    };
    if hex(&Sha256::digest(&bin[body_start..r.at])) != env.data_fingerprint {
        return Err(format_err("training data fingerprint mismatch"));
    }
    let gamma = r.f64s(gamma_len)?;
    if r.at != bin.len() {
        return Err(format_err("model sidecar has trailing bytes"));
    }
    let data: TrainingData = if env.layout == "grid" {
        GridDataset::new(columns, pos, responses)?.into()
    } else {
        Dataset::new(columns, pos, responses)?.into()
    };
    let mut model = FittedModel::with_params(data, env.output_kernel, &env.params)?;
    let caches_match = model.moment_caches().len() == env.grand_means.len()
        && model.moment_caches().iter().zip(&env.grand_means).all(|(c, g)| c.grand_mean.to_bits() == g.to_bits());
    if !caches_match || model.y_mean().to_bits() != env.y_mean.to_bits() {
        return Err(format_err("rebuilt moment caches do not match the stored model"));
    }
    model.set_gamma(gamma)?;
    model.params.sigma2 = env.params.sigma2;
    if let Some(report) = env.report {
        model.set_report(report);
    }
    Ok(model)
}

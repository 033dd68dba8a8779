//! Scattered and grid-structured training data.

use serde::{Deserialize, Serialize};

use crate::error::{FoagpError, Result};

/// Scattered samples `(x, t, y)`; inputs are stored column by column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    positions: Vec<f64>,
    responses: Vec<f64>,
}

impl Dataset {
    pub fn new(columns: Vec<Vec<f64>>, positions: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        let n = responses.len();
        if n < 2 {
            return Err(FoagpError::InsufficientData { needed: 2, got: n });
        }
        if columns.is_empty() {
            return Err(FoagpError::InvalidInput("dataset needs at least one input column".into()));
        }
        if positions.len() != n || columns.iter().any(|c| c.len() != n) {
            return Err(FoagpError::Shape(format!(
                "inputs, positions and responses must all have {n} rows"
            )));
        }
        let all = columns.iter().flatten().chain(&positions).chain(&responses);
        if let Some(bad) = all.into_iter().find(|v| !v.is_finite()) {
            return Err(FoagpError::InvalidInput(format!("non-finite value {bad} in dataset")));
        }
        Ok(Dataset { columns, positions, responses })
    }

    /// Builds a dataset from row-major input vectors.
    pub fn from_rows(rows: &[Vec<f64>], positions: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(FoagpError::Shape("ragged input rows".into()));
        }
        let columns = (0..d).map(|i| rows.iter().map(|r| r[i]).collect()).collect();
        Dataset::new(columns, positions, responses)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[r]).collect()
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Result<Dataset> {
        Dataset::new(
            self.columns.iter().map(|c| c[start..end].to_vec()).collect(),
            self.positions[start..end].to_vec(),
            self.responses[start..end].to_vec(),
        )
    }

    /// Train/test split keeping the first `train_fraction` of rows for training.
    pub fn split(&self, train_fraction: f64) -> Result<(Dataset, Dataset)> {
        let n_train = (self.len() as f64 * train_fraction).round() as usize;
        Ok((self.slice(0, n_train)?, self.slice(n_train, self.len())?))
    }

    /// Rows in the given order (indices may repeat).
    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.columns.iter().map(|c| idx.iter().map(|&r| c[r]).collect()).collect(),
            idx.iter().map(|&r| self.positions[r]).collect(),
            idx.iter().map(|&r| self.responses[r]).collect(),
        )
    }
}

/// Grid data: `m` input settings each observed at the same `n` positions.
///
/// Responses are stored position-major: entry `v * m + u` holds the response of
/// input `u` at position `v`, i.e. the column-major layout of the `m x n`
/// response matrix `Y`, so the flat vector is `vec(Y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDataset {
    columns: Vec<Vec<f64>>,
    positions: Vec<f64>,
    responses: Vec<f64>,
}

impl GridDataset {
    /// `responses` is the flattened `vec(Y)` (position-major).
    pub fn new(columns: Vec<Vec<f64>>, positions: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        let m = columns.first().map(|c| c.len()).unwrap_or(0);
        let n = positions.len();
        if columns.is_empty() {
            return Err(FoagpError::InvalidInput("grid dataset needs at least one input column".into()));
        }
        if m < 2 || n < 2 {
            return Err(FoagpError::InsufficientData { needed: 2, got: m.min(n) });
        }
        if columns.iter().any(|c| c.len() != m) {
            return Err(FoagpError::Shape("ragged grid input columns".into()));
        }
        if responses.len() != m * n {
            return Err(FoagpError::Shape(format!(
                "grid responses must have m*n = {} entries, got {}",
                m * n,
                responses.len()
            )));
        }
        let all = columns.iter().flatten().chain(&positions).chain(&responses);
        if let Some(bad) = all.into_iter().find(|v| !v.is_finite()) {
            return Err(FoagpError::InvalidInput(format!("non-finite value {bad} in grid dataset")));
        }
        Ok(GridDataset { columns, positions, responses })
    }

    /// Builds from the `m x n` response matrix given as `m` rows of `n` values.
    pub fn from_response_rows(
        columns: Vec<Vec<f64>>,
        positions: Vec<f64>,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let n = positions.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(FoagpError::Shape(format!("every response row must have {n} values")));
        }
        let m = rows.len();
        let mut flat = vec![0.0; m * n];
        for (u, row) in rows.iter().enumerate() {
            for (v, &y) in row.iter().enumerate() {
                flat[v * m + u] = y;
            }
        }
        GridDataset::new(columns, positions, flat)
    }

    pub fn m(&self) -> usize {
        self.columns[0].len()
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Flattened `vec(Y)`.
    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn response(&self, input: usize, position: usize) -> f64 {
        self.responses[position * self.m() + input]
    }

    /// Long-format view with rows ordered position-major, matching `vec(Y)`.
    pub fn to_long(&self) -> Dataset {
        let (m, n) = (self.m(), self.n());
        let columns = self
            .columns
            .iter()
            .map(|c| (0..n).flat_map(|_| c.iter().copied()).collect())
            .collect();
        let positions = (0..n).flat_map(|v| std::iter::repeat_n(self.positions[v], m)).collect();
        Dataset { columns, positions, responses: self.responses.clone() }
    }
}

//! CSV dataset files.
//!
//! Long format: header `x1,..,xd,t,y`, one sample per row. Grid format: three
//! files in one directory, `inputs.csv` (header `x1..xd`, `m` rows),
//! `positions.csv` (header `t`, `n` rows) and `responses.csv` (headerless,
//! `m` rows of `n` values).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{Dataset, GridDataset};
use crate::effects::csv_err;
use crate::error::{FoagpError, Result};

pub const GRID_INPUTS: &str = "inputs.csv";
pub const GRID_POSITIONS: &str = "positions.csv";
pub const GRID_RESPONSES: &str = "responses.csv";

fn fmt(v: f64) -> String {
    v.to_string()
}

fn parse_row(record: &csv::StringRecord, source: &str) -> Result<Vec<f64>> {
    let line = record.position().map(|p| p.line()).unwrap_or(0);
    record
        .iter()
        .enumerate()
        .map(|(col, field)| {
            let v: f64 = field.trim().parse().map_err(|_| {
                FoagpError::Format(format!("{source}:{line}: column {} is not a number: {field:?}", col + 1))
            })?;
            if !v.is_finite() {
                return Err(FoagpError::Format(format!("{source}:{line}: non-finite value in column {}", col + 1)));
            }
            Ok(v)
        })
        .collect()
}

fn read_records<R: Read>(reader: R, has_header: bool, source: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(has_header).flexible(false).from_reader(reader);
    let header = if has_header {
        rdr.headers().map_err(|e| located(e, source))?.iter().map(|h| h.trim().to_string()).collect()
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| located(e, source))?;
        rows.push(parse_row(&rec, source)?);
    }
    Ok((header, rows))
}

fn located(e: csv::Error, source: &str) -> FoagpError {
    let line = e.position().map(|p| p.line());
    match (csv_err(e), line) {
        (FoagpError::Format(msg), Some(l)) => FoagpError::Format(format!("{source}:{l}: {msg}")),
        (FoagpError::Format(msg), None) => FoagpError::Format(format!("{source}: {msg}")),
        (other, _) => other,
    }
}

fn expect_header(header: &[String], expected: &[String], source: &str) -> Result<()> {
    if header != expected {
        return Err(FoagpError::Format(format!(
            "{source}:1: expected header {:?}, found {:?}",
            expected.join(","),
            header.join(",")
        )));
    }
    Ok(())
}

fn input_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

/// Parses a long-format dataset.
pub fn read_long<R: Read>(reader: R, source: &str) -> Result<Dataset> {
    let (header, rows) = read_records(reader, true, source)?;
    if header.len() < 3 {
        return Err(FoagpError::Format(format!("{source}:1: need columns x1..xd,t,y, found {:?}", header.join(","))));
    }
    let d = header.len() - 2;
    let mut expected = input_names(d);
    expected.extend(["t".to_string(), "y".to_string()]);
    expect_header(&header, &expected, source)?;
    let mut columns = vec![Vec::with_capacity(rows.len()); d];
    let mut t = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for row in rows {
        for (c, v) in columns.iter_mut().zip(&row) {
            c.push(*v);
        }
        t.push(row[d]);
        y.push(row[d + 1]);
    }
    Dataset::new(columns, t, y)
}

pub fn read_long_file(path: &Path) -> Result<Dataset> {
    read_long(File::open(path)?, &path.display().to_string())
}

pub fn write_long<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = input_names(data.dims());
    header.extend(["t".to_string(), "y".to_string()]);
    w.write_record(&header).map_err(csv_err)?;
    for r in 0..data.len() {
        let mut rec: Vec<String> = data.row(r).into_iter().map(fmt).collect();
        rec.push(fmt(data.positions()[r]));
        rec.push(fmt(data.responses()[r]));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_long_file(data: &Dataset, path: &Path) -> Result<()> {
    write_long(data, File::create(path)?)
}

/// True when `path` is a directory holding the three grid files.
pub fn is_grid_dir(path: &Path) -> bool {
    path.is_dir() && [GRID_INPUTS, GRID_POSITIONS, GRID_RESPONSES].iter().all(|f| path.join(f).is_file())
}

pub fn read_grid_dir(dir: &Path) -> Result<GridDataset> {
    let src = |f: &str| dir.join(f).display().to_string();
    let (h, inputs) = read_records(File::open(dir.join(GRID_INPUTS))?, true, &src(GRID_INPUTS))?;
    expect_header(&h, &input_names(h.len().max(1)), &src(GRID_INPUTS))?;
    let (h, positions) = read_records(File::open(dir.join(GRID_POSITIONS))?, true, &src(GRID_POSITIONS))?;
    expect_header(&h, &["t".to_string()], &src(GRID_POSITIONS))?;
    let (_, rows) = read_records(File::open(dir.join(GRID_RESPONSES))?, false, &src(GRID_RESPONSES))?;
    let d = inputs.first().map(|r| r.len()).unwrap_or(0);
    let columns = (0..d).map(|i| inputs.iter().map(|r| r[i]).collect()).collect();
    let positions = positions.into_iter().map(|r| r[0]).collect();
    if rows.len() != inputs.len() {
        return Err(FoagpError::Format(format!(
            "{}: {} response rows for {} inputs",
            src(GRID_RESPONSES),
            rows.len(),
            inputs.len()
        )));
    }
    GridDataset::from_response_rows(columns, positions, &rows)
}

pub fn write_grid_dir(data: &GridDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(GRID_INPUTS)).map_err(csv_err)?;
    w.write_record(input_names(data.dims())).map_err(csv_err)?;
    for u in 0..data.m() {
        w.write_record(data.columns().iter().map(|c| fmt(c[u]))).map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(GRID_POSITIONS)).map_err(csv_err)?;
    w.write_record(["t"]).map_err(csv_err)?;
    for &t in data.positions() {
        w.write_record([fmt(t)]).map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(GRID_RESPONSES)).map_err(csv_err)?;
    for u in 0..data.m() {
        w.write_record((0..data.n()).map(|v| fmt(data.response(u, v)))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a grid directory or a long-format file.
pub fn read_any(path: &Path) -> Result<crate::model::TrainingData> {
    if path.is_dir() {
        if !is_grid_dir(path) {
            return Err(FoagpError::InvalidInput(format!(
                "{} is a directory without {GRID_INPUTS}, {GRID_POSITIONS} and {GRID_RESPONSES}",
                path.display()
            )));
        }
        Ok(read_grid_dir(path)?.into())
    } else {
        Ok(read_long_file(path)?.into())
    }
}

/// Regroups long-format data that covers a full inputs x positions product
/// into grid form. Inputs keep first-appearance order; positions are sorted.
pub fn long_to_grid(data: &Dataset) -> Result<GridDataset> {
    let d = data.dims();
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut positions: Vec<f64> = data.positions().to_vec();
    positions.sort_by(f64::total_cmp);
    positions.dedup();
    let mut row_of = Vec::with_capacity(data.len());
    for r in 0..data.len() {
        let x = data.row(r);
        let u = match inputs.iter().position(|v| *v == x) {
            Some(u) => u,
            None => {
                inputs.push(x);
                inputs.len() - 1
            }
        };
        row_of.push(u);
    }
    let (m, n) = (inputs.len(), positions.len());
    if m * n != data.len() {
        return Err(FoagpError::Shape(format!(
            "{} samples do not form a full grid of {m} inputs x {n} positions",
            data.len()
        )));
    }
    let mut rows = vec![vec![f64::NAN; n]; m];
    for (r, &u) in row_of.iter().enumerate() {
        let v = positions.binary_search_by(|p| p.total_cmp(&data.positions()[r])).expect("position present");
        if !rows[u][v].is_nan() {
            return Err(FoagpError::Shape(format!("duplicate sample at input {} position {}", u + 1, v + 1)));
        }
        rows[u][v] = data.responses()[r];
    }
    let columns = (0..d).map(|i| inputs.iter().map(|x| x[i]).collect()).collect();
    GridDataset::from_response_rows(columns, positions, &rows)
}

//! Final-accuracy and forgetting metrics over a run's accuracy matrix, and
//! the headerless CSV form the matrix is persisted in.

use std::path::Path;

use crate::{Error, Result};

/// Accuracy bookkeeping for one run: `rows[l][i]` is test accuracy on task
/// `i` after training through task `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultMatrix {
    pub rows: Vec<Vec<f64>>,
    pub seed: u64,
    pub method: String,
}

impl ResultMatrix {
    pub fn new(rows: Vec<Vec<f64>>, seed: u64, method: impl Into<String>) -> Self {
        ResultMatrix {
            rows,
            seed,
            method: method.into(),
        }
    }

    fn checked_size(&self) -> Result<usize> {
        let t = self.rows.len();
        if t == 0 {
            return Err(Error::Empty("result matrix".into()));
        }
        for (l, row) in self.rows.iter().enumerate() {
            if row.len() != t {
                return Err(Error::Config(format!(
                    "result matrix incomplete: row {l} has {} of {t} entries",
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "result matrix row {l} holds non-finite accuracy {bad}"
                )));
            }
        }
        Ok(t)
    }
}

/// Mean accuracy over all tasks after the final task was learned (mean of
/// the last row).
pub fn acc_metric(matrix: &ResultMatrix) -> Result<f64> {
    let t = matrix.checked_size()?;
    let last = &matrix.rows[t - 1];
    Ok(last.iter().sum::<f64>() / t as f64)
}

/// Backward transfer: for each non-final task, how far its final accuracy
/// sits below its best accuracy at any point from when it was learned
/// onwards, averaged and negated (so forgetting is negative).
pub fn bwt_metric(matrix: &ResultMatrix) -> Result<f64> {
    let t = matrix.checked_size()?;
    if t < 2 {
        return Err(Error::Config(
            "backward transfer needs at least two tasks".into(),
        ));
    }
    let final_row = &matrix.rows[t - 1];
    let mut total = 0.0f64;
    for i in 0..t - 1 {
        let max_gap = (i..t - 1)
            .map(|l| matrix.rows[l][i] - final_row[i])
            .fold(f64::NEG_INFINITY, f64::max);
        total -= max_gap;
    }
    Ok(total / (t - 1) as f64)
}

/// Serialize accuracy rows as headerless CSV with shortest-roundtrip floats.
pub fn matrix_to_csv(rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for row in rows {
        let record: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writer.write_record(&record)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Parse(format!("csv buffer: {e}")))
}

/// Parse headerless CSV into accuracy rows: every row must parse as floats
/// and all rows must share one width.
pub fn parse_result_matrix(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: Vec<f64> = record
            .iter()
            .map(|field| {
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad accuracy '{field}': {e}")))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "ragged matrix: expected {} columns, found {}",
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("result matrix csv".into()));
    }
    Ok(rows)
}

pub fn write_result_matrix(rows: &[Vec<f64>], path: &Path) -> Result<()> {
    let bytes = matrix_to_csv(rows)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_result_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_result_matrix(&bytes)
}

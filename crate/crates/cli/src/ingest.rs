//! Returns ingestion from a headed CSV file.

use std::path::Path;

use rabc::harness::standardize;

use crate::error::{CliError, CliResult};

enum Layout {
    Returns(usize),
    OpenClose(usize, usize),
}

/// Raw returns: the `return` column if present, else `ln(close / open)`.
pub fn read_returns(path: &Path) -> CliResult<Vec<f64>> {
    let err = |line: usize, msg: String| CliError::Ingest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(0, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(err(1, "empty file".into()));
    }
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let layout = match (col("return"), col("open"), col("close")) {
        (Some(r), _, _) => Layout::Returns(r),
        (None, Some(o), Some(c)) => Layout::OpenClose(o, c),
        _ => {
            return Err(err(
                1,
                "header needs a `return` column or `open` and `close` columns".into(),
            ))
        }
    };

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        let num = |j: usize, name: &str| -> CliResult<f64> {
            let cell = rec.get(j).unwrap_or("");
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("non-numeric {name} value {cell:?}")))
        };
        let r = match layout {
            Layout::Returns(j) => num(j, "return")?,
            Layout::OpenClose(o, c) => {
                let (open, close) = (num(o, "open")?, num(c, "close")?);
                if !(open > 0.0 && close > 0.0) {
                    return Err(err(line, "open and close prices must be positive".into()));
                }
                (close / open).ln()
            }
        };
        out.push(r);
    }
    if out.is_empty() {
        return Err(err(1, "no data rows".into()));
    }
    Ok(out)
}

/// Reads returns and standardizes them.
pub fn ingest_returns(path: &Path) -> CliResult<Vec<f64>> {
    Ok(standardize(&read_returns(path)?)?)
}

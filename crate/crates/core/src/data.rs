//! Plain-text observation files: one decimal number per line. Blank lines and
//! lines starting with `#` are skipped.

use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_observations(text: &str) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::MalformedData {
            line: idx + 1,
            message: format!("`{line}` is not a decimal number"),
        })?;
        if !v.is_finite() {
            return Err(Error::MalformedData { line: idx + 1, message: format!("`{line}` is not finite") });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("no observations in input".into()));
    }
    Ok(values)
}

pub fn read_observations(path: &Path) -> Result<Vec<f64>> {
    parse_observations(&std::fs::read_to_string(path)?)
}

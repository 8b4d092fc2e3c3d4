//! CSV sample dumps. Floats are written in shortest round-trip form, so a
//! dump reads back bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use fav_core::numeric::Batch;

use crate::error::{CliError, Result};

pub fn write_csv(path: &Path, header: &[&str], batch: &Batch) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for row in batch.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

/// Reads a CSV of floats; returns the header and the rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Batch)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = match lines.next() {
        Some(h) if !h.trim().is_empty() => h.split(',').map(|s| s.trim().to_string()).collect(),
        _ => return Err(CliError::parse(path, "missing header")),
    };
    let dim = header.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim {
            return Err(CliError::parse(path, format!("line {}: expected {dim} fields", i + 2)));
        }
        for c in cells {
            let v: f64 = c
                .trim()
                .parse()
                .map_err(|_| CliError::parse(path, format!("line {}: bad number {c:?}", i + 2)))?;
            data.push(v);
        }
        rows += 1;
    }
    Ok((header, Batch::from_vec(rows, dim, data)?))
}

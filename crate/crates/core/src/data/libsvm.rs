//! Sparse `label idx:val ...` text with 1-based, strictly increasing indices.

use std::path::Path;

use nalgebra::DMatrix;

use super::Dataset;
use crate::{Error, Result};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses libsvm text into a dense dataset whose width is the largest index.
pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad label {label_tok:?}")))?;
        if label.fract() != 0.0 || !label.is_finite() {
            return Err(parse_err(line_no, format!("label {label_tok:?} is not an integer")));
        }
        let mut row = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, format!("malformed token {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad index in {tok:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad value in {tok:?}")))?;
            if idx == 0 {
                return Err(parse_err(line_no, "indices are 1-based"));
            }
            if idx <= last {
                return Err(parse_err(line_no, format!("index {idx} does not increase")));
            }
            if !val.is_finite() {
                return Err(parse_err(line_no, format!("non-finite value in {tok:?}")));
            }
            last = idx;
            row.push((idx - 1, val));
        }
        d = d.max(last);
        rows.push(row);
        labels.push(label as i64);
    }
    let mut features = DMatrix::zeros(rows.len(), d.max(1));
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            features[(i, j)] = v;
        }
    }
    Dataset::new(features, labels)
}

pub fn load_libsvm(path: &Path) -> Result<Dataset> {
    parse_libsvm(&std::fs::read_to_string(path)?)
}

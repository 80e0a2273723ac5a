//! Comma-separated numeric matrices: first column label, remaining columns
//! features. A header row is optional on input and always written on output.

use std::path::Path;

use nalgebra::DMatrix;

use super::Dataset;
use crate::{Error, Result};

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() < 2 {
            return Err(Error::Parse {
                line,
                message: "need a label and at least one feature".into(),
            });
        }
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", width.unwrap(), rec.len()),
            });
        }
        let mut fields = rec.iter().map(|f| {
            f.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("not a number: {f:?}"),
            })
        });
        let label = fields.next().unwrap()?;
        if label.fract() != 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("label {label} is not an integer"),
            });
        }
        labels.push(label as i64);
        for f in fields {
            values.push(f?);
        }
    }
    let d = width.map_or(0, |w| w - 1);
    Dataset::new(DMatrix::from_row_slice(labels.len(), d, &values), labels)
}

pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((1..=ds.d()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut row = vec![ds.labels[i].to_string()];
        row.extend(ds.features.row(i).iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

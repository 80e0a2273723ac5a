//! CSV export. Floats are written with 17 significant digits so values
//! round-trip exactly.

use std::path::Path;

use super::runs::{Checkpoint, Curve, RunRecord};
use super::variant::VariantName;
use crate::{Error, Result};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub const RUNS_HEADER: [&str; 7] = ["run_id", "variant", "seed", "epoch", "t", "k", "sq_error"];
pub const CURVE_HEADER: [&str; 4] = ["variant", "epoch", "mean", "std"];

pub fn write_runs_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUNS_HEADER)?;
    for r in records {
        for c in &r.checkpoints {
            w.write_record([
                r.run_id.to_string(),
                r.variant.to_string(),
                r.seed.to_string(),
                fmt_f64(c.epoch),
                c.t.to_string(),
                c.k.to_string(),
                fmt_f64(c.sq_error),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves_csv(curves: &[Curve], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER)?;
    for c in curves {
        for p in &c.points {
            w.write_record([c.variant.to_string(), fmt_f64(p.epoch), fmt_f64(p.mean), fmt_f64(p.std)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
        line,
        message: format!("bad field {i}"),
    })
}

/// Reads a file written by [`write_runs_csv`], grouping rows by run id in
/// file order.
pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out: Vec<RunRecord> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let run_id: usize = field(&rec, 0, line)?;
        let variant: VariantName = rec.get(1).unwrap_or("").parse()?;
        let cp = Checkpoint {
            epoch: field(&rec, 3, line)?,
            t: field(&rec, 4, line)?,
            k: field(&rec, 5, line)?,
            sq_error: field(&rec, 6, line)?,
        };
        match out.last_mut() {
            Some(r) if r.run_id == run_id => r.checkpoints.push(cp),
            _ => out.push(RunRecord {
                run_id,
                variant,
                seed: field(&rec, 2, line)?,
                checkpoints: vec![cp],
            }),
        }
    }
    Ok(out)
}

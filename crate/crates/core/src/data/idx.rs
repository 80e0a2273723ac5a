//! IDX (MNIST) binary format: big-endian magic, big-endian u32 sizes, then
//! unsigned bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use super::Dataset;
use crate::error::invalid;
use crate::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;
const PIXEL_SCALE: f64 = 255.0;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_u32(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    r.read_u32::<BigEndian>()
        .map_err(|_| format_err(path, format!("truncated header ({what})")))
}

fn read_body(r: &mut impl Read, path: &Path, len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(len);
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(format_err(
            path,
            format!("truncated file: expected {len} data bytes, found {}", buf.len()),
        ));
    }
    Ok(buf)
}

/// Reads an image/label pair; pixels are scaled to `[0, 1]` and each image is
/// flattened row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(images_path)?);
    let magic = read_u32(&mut r, images_path, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(
            images_path,
            format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = read_u32(&mut r, images_path, "count")? as usize;
    let rows = read_u32(&mut r, images_path, "rows")? as usize;
    let cols = read_u32(&mut r, images_path, "cols")? as usize;
    let pixels = read_body(&mut r, images_path, n * rows * cols)?;

    let mut r = BufReader::new(File::open(labels_path)?);
    let magic = read_u32(&mut r, labels_path, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(format_err(
            labels_path,
            format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let n_labels = read_u32(&mut r, labels_path, "count")? as usize;
    if n_labels != n {
        return Err(format_err(labels_path, format!("{n_labels} labels for {n} images")));
    }
    let labels = read_body(&mut r, labels_path, n)?;

    let d = rows * cols;
    let features = DMatrix::from_fn(n, d, |i, j| pixels[i * d + j] as f64 / PIXEL_SCALE);
    let ds = Dataset {
        features,
        labels: labels.into_iter().map(i64::from).collect(),
        feature_scale: PIXEL_SCALE,
        image_shape: Some((rows, cols)),
    };
    ds.validate()?;
    Ok(ds)
}

/// Inverse of [`load_idx`]. Features are multiplied back by the dataset's
/// scale and rounded; labels must fit in a byte.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (rows, cols) = ds.image_shape.unwrap_or((1, ds.d()));
    if rows * cols != ds.d() {
        return Err(invalid(format!(
            "image shape {rows}×{cols} does not match {} features",
            ds.d()
        )));
    }
    let mut w = BufWriter::new(File::create(images_path)?);
    w.write_u32::<BigEndian>(IMAGES_MAGIC)?;
    for s in [ds.n(), rows, cols] {
        w.write_u32::<BigEndian>(s as u32)?;
    }
    let mut body = Vec::with_capacity(ds.n() * ds.d());
    for i in 0..ds.n() {
        for j in 0..ds.d() {
            let v = (ds.features[(i, j)] * ds.feature_scale).round();
            if !(0.0..=255.0).contains(&v) {
                return Err(invalid(format!("pixel value {v} at ({i}, {j}) does not fit in a byte")));
            }
            body.push(v as u8);
        }
    }
    w.write_all(&body)?;
    w.flush()?;

    let mut w = BufWriter::new(File::create(labels_path)?);
    w.write_u32::<BigEndian>(LABELS_MAGIC)?;
    w.write_u32::<BigEndian>(ds.n() as u32)?;
    for &l in &ds.labels {
        let b = u8::try_from(l).map_err(|_| invalid(format!("label {l} does not fit in a byte")))?;
        w.write_u8(b)?;
    }
    w.flush()?;
    Ok(())
}

//! DMAT: little-endian binary container for one matrix plus an optional image index.
//!
//! ```text
//! "DMAT" | u32 version=1 | u64 rows | u64 cols | rows*cols f64 (row-major)
//! u8 has_images | [u64 image_count | image_count * (u64 start, u64 len, i64 label)]
//! ```
//! A label of -1 marks an unlabeled image.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use super::{FeatureMatrix, ImageEntry, ImageSet};
use crate::error::{Error, Result};
use crate::Scalar;

pub const DMAT_MAGIC: &[u8; 4] = b"DMAT";
pub const DMAT_VERSION: u32 = 1;

fn read_array<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("truncated while reading {what}"))
        }
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    read_array::<8>(r, what).map(u64::from_le_bytes)
}

/// Writes `u64 rows | u64 cols | f64 values row-major`.
pub fn write_matrix_block<T: Scalar>(w: &mut impl Write, m: ArrayView2<'_, T>) -> Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for row in m.rows() {
        for &v in row {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix_block<T: Scalar>(r: &mut impl Read) -> Result<Array2<T>> {
    let rows = read_u64(r, "row count")?;
    let cols = read_u64(r, "column count")?;
    let n = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format(format!("matrix size {rows}x{cols} overflows")))?;
    // Grows with the data actually present, so a corrupt header cannot force a huge allocation.
    let mut bytes = Vec::new();
    r.take(n).read_to_end(&mut bytes)?;
    if bytes.len() as u64 != n {
        return Err(Error::Format(format!(
            "truncated matrix payload: expected {n} bytes, found {}",
            bytes.len()
        )));
    }
    let values: Vec<T> = bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    Array2::from_shape_vec((rows as usize, cols as usize), values)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn write_dmat<T: Scalar>(
    w: &mut impl Write,
    matrix: &FeatureMatrix<T>,
    images: Option<&ImageSet>,
) -> Result<()> {
    w.write_all(DMAT_MAGIC)?;
    w.write_all(&DMAT_VERSION.to_le_bytes())?;
    write_matrix_block(w, matrix.values())?;
    match images {
        None => w.write_all(&[0u8])?,
        Some(set) => {
            if set.feature_count() != matrix.count() {
                return Err(Error::Consistency(format!(
                    "image index covers {} features, matrix has {}",
                    set.feature_count(),
                    matrix.count()
                )));
            }
            w.write_all(&[1u8])?;
            w.write_all(&(set.len() as u64).to_le_bytes())?;
            for img in set.images() {
                w.write_all(&(img.start as u64).to_le_bytes())?;
                w.write_all(&(img.len as u64).to_le_bytes())?;
                let label = img.label.map_or(-1i64, |l| l as i64);
                w.write_all(&label.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_dmat<T: Scalar>(r: &mut impl Read) -> Result<(FeatureMatrix<T>, Option<ImageSet>)> {
    let magic = read_array::<4>(r, "magic")?;
    if &magic != DMAT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"DMAT\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = u32::from_le_bytes(read_array::<4>(r, "version")?);
    if version != DMAT_VERSION {
        return Err(Error::Format(format!("unsupported DMAT version {version}")));
    }
    let values = read_matrix_block::<T>(r)?;
    let matrix = FeatureMatrix::new(values).map_err(|e| Error::Format(e.to_string()))?;

    let images = match read_array::<1>(r, "image flag")?[0] {
        0 => None,
        1 => {
            let count = read_u64(r, "image count")?;
            let mut images = Vec::new();
            for _ in 0..count {
                let start = read_u64(r, "image start")? as usize;
                let len = read_u64(r, "image length")? as usize;
                let label = i64::from_le_bytes(read_array::<8>(r, "image label")?);
                let label = match label {
                    -1 => None,
                    l if l >= 0 => Some(l as usize),
                    l => return Err(Error::Format(format!("invalid label {l}"))),
                };
                images.push(ImageEntry { start, len, label });
            }
            Some(ImageSet::new(images, matrix.count())?)
        }
        f => return Err(Error::Format(format!("invalid image flag {f}"))),
    };

    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after image index".into()));
    }
    Ok((matrix, images))
}

pub fn save_features<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    images: Option<&ImageSet>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dmat(&mut w, matrix, images)?;
    w.flush()?;
    Ok(())
}

pub fn load_features<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(FeatureMatrix<T>, Option<ImageSet>)> {
    let mut r = BufReader::new(File::open(path)?);
    read_dmat(&mut r)
}

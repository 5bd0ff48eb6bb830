//! The `.mlt` binary tensor format.
//!
//! ```text
//! bytes 0..4   magic "MLT1"
//! byte  4      dtype code: 1 = float32, 2 = float64
//! byte  5      rank r
//! then         r little-endian u64 dimensions
//! then         payload, row-major, little-endian
//! ```
//!
//! Float32 payloads are widened to `f64` on read, which is exact.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"MLT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::format("dtype", format!("unsupported dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn encode(t: &Tensor, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.rank() + dtype.width() * t.len());
    out.extend_from_slice(MAGIC);
    out.push(dtype as u8);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F32 => t
            .values()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => t
            .values()
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format("magic", "expected \"MLT1\""));
    }
    if bytes.len() < 6 {
        return Err(Error::format("header", "truncated before dtype/rank"));
    }
    let dtype = Dtype::from_code(bytes[4])?;
    let rank = bytes[5] as usize;
    let dims_end = 6 + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::format(
            "dims",
            format!("header declares rank {rank} but ends after {} bytes", bytes.len()),
        ));
    }
    let mut shape = Vec::with_capacity(rank);
    for chunk in bytes[6..dims_end].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        let d = usize::try_from(d).map_err(|_| Error::format("dims", format!("dimension {d} too large")))?;
        if d == 0 {
            return Err(Error::format("dims", "zero-sized dimension"));
        }
        shape.push(d);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("dims", "element count overflows"))?;
    let payload = &bytes[dims_end..];
    let expected = count
        .checked_mul(dtype.width())
        .ok_or_else(|| Error::format("dims", "payload size overflows"))?;
    if payload.len() != expected {
        return Err(Error::format(
            "payload",
            format!(
                "shape {shape:?} needs {expected} payload bytes, found {}",
                payload.len()
            ),
        ));
    }
    let values: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("payload", "non-finite value"));
    }
    Tensor::new(shape, values)
}

pub fn write_tensor_file(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_tensor_file_as(t, path, Dtype::F64)
}

pub fn write_tensor_file_as(t: &Tensor, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t, dtype)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Sidecar holding the class names of an embedding bank: same stem, `.txt`.
pub fn bank_names_path(bank: &Path) -> PathBuf {
    bank.with_extension("txt")
}

/// Writes an `N × d` class-embedding bank plus its class-name sidecar.
pub fn write_bank(path: impl AsRef<Path>, bank: &Tensor, names: &[String]) -> Result<()> {
    let path = path.as_ref();
    let (rows, _) = bank.matrix_dims()?;
    if rows != names.len() {
        return Err(Error::Shape(format!(
            "bank has {rows} rows but {} class names",
            names.len()
        )));
    }
    write_tensor_file(bank, path)?;
    let sidecar = bank_names_path(path);
    let mut text = names.join("\n");
    text.push('\n');
    fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
}

/// Reads a bank and, when present, its class-name sidecar.
pub fn read_bank(path: impl AsRef<Path>) -> Result<(Tensor, Option<Vec<String>>)> {
    let path = path.as_ref();
    let bank = read_tensor_file(path)?;
    let (rows, _) = bank.matrix_dims()?;
    let sidecar = bank_names_path(path);
    if !sidecar.exists() {
        return Ok((bank, None));
    }
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let names: Vec<String> = text.lines().map(str::to_owned).collect();
    if names.len() != rows {
        return Err(Error::Shape(format!(
            "{}: {} names for a bank of {rows} rows",
            sidecar.display(),
            names.len()
        )));
    }
    Ok((bank, Some(names)))
}

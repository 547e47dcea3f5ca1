//! Binary noise-vector file.
//!
//! Layout (little-endian): magic `T2SN`, `u32` version (1), `u32` length `n`,
//! then `n` IEEE-754 `f64` values.

use std::fs;
use std::path::Path;

use t2smark::NoiseVector;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"T2SN";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

pub fn encode(noise: &NoiseVector) -> Vec<u8> {
    let values = noise.as_slice();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> CliResult<NoiseVector> {
    let bad = |msg: String| CliError::Data(format!("invalid noise file: {msg}"));
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 8 * n {
        return Err(bad(format!(
            "header declares {n} values but payload has {} bytes",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    NoiseVector::new(values).map_err(|e| bad(e.to_string()))
}

pub fn write(path: &Path, noise: &NoiseVector) -> CliResult<()> {
    fs::write(path, encode(noise)).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> CliResult<NoiseVector> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

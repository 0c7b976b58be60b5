//! `FLPV` parameter files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"FLPV" | version: u32 = 1 | count: u64 | count x f64 | count: u64
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::ParamVector;

const MAGIC: &[u8; 4] = b"FLPV";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum ParamFileError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not an FLPV file (magic {found:?})")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported FLPV version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated FLPV data: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("FLPV trailer count {trailer} does not match header count {header}")]
    TrailerMismatch { header: u64, trailer: u64 },
    #[error("non-finite parameter at index {index}")]
    NonFinite { index: usize },
}

pub fn encode_params(params: &ParamVector) -> Vec<u8> {
    let count = params.len() as u64;
    let mut out = Vec::with_capacity(HEADER_LEN + params.len() * 8 + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for v in params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&count.to_le_bytes());
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamVector, ParamFileError> {
    let truncated = |expected: u64| ParamFileError::Truncated {
        expected,
        found: bytes.len() as u64,
    };
    if bytes.len() < 4 {
        return Err(truncated(HEADER_LEN as u64));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(ParamFileError::BadMagic { found: magic });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN as u64));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ParamFileError::UnsupportedVersion(version));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(HEADER_LEN as u64 + 8))
        .ok_or_else(|| truncated(u64::MAX))?;
    if (bytes.len() as u64) < expected {
        return Err(truncated(expected));
    }
    let body_end = HEADER_LEN + count as usize * 8;
    let trailer = u64::from_le_bytes(bytes[body_end..body_end + 8].try_into().unwrap());
    if trailer != count {
        return Err(ParamFileError::TrailerMismatch {
            header: count,
            trailer,
        });
    }
    let values: Vec<f64> = bytes[HEADER_LEN..body_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParamVector::new(values).map_err(|e| match e {
        super::NumericsError::NonFinite { index } => ParamFileError::NonFinite { index },
        _ => unreachable!("ParamVector::new only fails on non-finite values"),
    })
}

pub fn write_params(path: impl AsRef<Path>, params: &ParamVector) -> Result<(), ParamFileError> {
    let path = path.as_ref();
    fs::write(path, encode_params(params)).map_err(|source| ParamFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_params(path: impl AsRef<Path>) -> Result<ParamVector, ParamFileError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ParamFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_params(&bytes)
}

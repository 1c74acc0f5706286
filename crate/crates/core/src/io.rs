//! Binary arrays (`EITB`) and per-vertex CSV export.
//!
//! Layout: magic `EITB`, format version (`u32` LE), element count (`u64` LE),
//! then the values as little-endian `f64`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{EitError, Result};

pub const ARRAY_MAGIC: &[u8; 4] = b"EITB";
pub const ARRAY_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_array(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(ARRAY_MAGIC);
    out.extend_from_slice(&ARRAY_VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_array(bytes: &[u8]) -> std::result::Result<Vec<f64>, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[0..4] != ARRAY_MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ARRAY_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len.checked_mul(8).ok_or("length overflow")? {
        return Err(format!("header declares {len} values, payload holds {} bytes", payload.len()));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_array(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    std::fs::write(path, encode_array(values))?;
    Ok(())
}

pub fn read_array(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_array(&bytes).map_err(|reason| EitError::Malformed {
        path: path.display().to_string(),
        reason,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Writes `vertex_index,value` rows.
pub fn write_vertex_csv(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["vertex_index", "value"]).map_err(csv_err)?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), format_f64(*v)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vertex_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let malformed = |reason: String| EitError::Malformed {
        path: path.display().to_string(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["vertex_index", "value"] {
        return Err(malformed(format!("unexpected headers {headers:?}")));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let idx: usize = rec[0].parse().map_err(|e| malformed(format!("row {row}: {e}")))?;
        if idx != row {
            return Err(malformed(format!("row {row} has vertex index {idx}")));
        }
        out.push(rec[1].parse().map_err(|e| malformed(format!("row {row}: {e}")))?);
    }
    Ok(out)
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

pub(crate) fn csv_err(e: csv::Error) -> EitError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => EitError::Io(io),
        other => EitError::InvalidInput(format!("csv: {other:?}")),
    }
}

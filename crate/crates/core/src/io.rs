//! File helpers: atomic writes, checksums and the "JSON header line +
//! little-endian f64 payload" container used by map and model files.

use crate::{Error, Result};
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

/// Writes `bytes` to `path` through a sibling temp file and a rename, so an
/// interrupted write never leaves a partial artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Encodes a header as one compact JSON line followed by the raw payload.
pub fn encode_framed<H: Serialize>(header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    out.reserve(payload.len() * 8);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Splits a framed file into its header and payload. The payload length is
/// validated against `expected_len(&header)`.
pub fn decode_framed<H: DeserializeOwned>(
    bytes: &[u8],
    expected_len: impl FnOnce(&H) -> usize,
) -> Result<(H, Vec<f64>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("header", "missing header terminator"))?;
    let header: H = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::format("header", e.to_string()))?;
    let body = &bytes[nl + 1..];
    let want = expected_len(&header);
    if body.len() != want * 8 {
        return Err(Error::format(
            "payload",
            format!("expected {} bytes, found {}", want * 8, body.len()),
        ));
    }
    let payload = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

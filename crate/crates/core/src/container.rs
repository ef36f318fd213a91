//! Binary container shared by datasets and checkpoints.
//!
//! Layout: 8 magic bytes, a little-endian `u64` manifest length, the JSON
//! manifest, a `u64` payload length (in values), then the payload as
//! little-endian `f64`. Writes go to a temporary sibling file that is renamed
//! into place.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write<M: Serialize>(path: &Path, magic: &[u8; 8], manifest: &M, payload: &[f64]) -> Result<()> {
    let json = serde_json::to_vec(manifest)?;
    let mut buf = Vec::with_capacity(24 + json.len() + payload.len() * 8);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read<M: DeserializeOwned>(path: &Path, magic: &[u8; 8]) -> Result<(M, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |what: &str| Error::Checkpoint(format!("{}: {what}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(bad("wrong magic bytes"));
    }
    let take_u64 = |at: usize| -> Result<u64> {
        bytes
            .get(at..at + 8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| bad("truncated header"))
    };
    let mlen = take_u64(8)? as usize;
    let mend = 16usize.checked_add(mlen).ok_or_else(|| bad("manifest length overflow"))?;
    let manifest_bytes = bytes.get(16..mend).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: M = serde_json::from_slice(manifest_bytes)?;
    let n = take_u64(mend)? as usize;
    let start = mend + 8;
    if bytes.len() != start + n * 8 {
        return Err(bad("payload length mismatch"));
    }
    let payload = bytes[start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((manifest, payload))
}

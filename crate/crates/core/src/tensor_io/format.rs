use std::io::{Read, Write};

use super::ActivationMatrix;
use crate::error::{Error, Result};

pub const GMIA_MAGIC: &[u8; 4] = b"GMIA";
pub const GMIA_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;

/// Writes `magic | version u32 | layer u32 | n_rows u64 | n_cols u64 |
/// row-major f32 payload`, all little-endian. The row binding is not stored.
pub fn write_activations<W: Write>(m: &ActivationMatrix, mut sink: W) -> Result<()> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(GMIA_MAGIC);
    header.extend_from_slice(&GMIA_VERSION.to_le_bytes());
    header.extend_from_slice(&m.layer().to_le_bytes());
    header.extend_from_slice(&(m.n_rows() as u64).to_le_bytes());
    header.extend_from_slice(&(m.n_cols() as u64).to_le_bytes());
    sink.write_all(&header)?;
    let mut payload = Vec::with_capacity(m.values().len() * 4);
    for v in m.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&payload)?;
    sink.flush()?;
    Ok(())
}

pub fn read_activations<R: Read>(mut source: R) -> Result<ActivationMatrix> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "header too short: {} bytes",
            bytes.len()
        )));
    }
    let (header, payload) = bytes.split_at(HEADER_LEN);
    if &header[0..4] != GMIA_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&header[0..4])
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != GMIA_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let layer = u32_at(8);
    let n_rows = u64_at(12);
    let n_cols = u64_at(20);
    let expected = n_rows
        .checked_mul(n_cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("shape {n_rows} x {n_cols} overflows")))?;
    let found = payload.len() as u64;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            found - expected
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ActivationMatrix::new(layer, n_rows as usize, n_cols as usize, values)
}

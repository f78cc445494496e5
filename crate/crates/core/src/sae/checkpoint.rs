use std::io::{Read, Write};

use super::{Sae, SaeModel};
use crate::error::{Error, Result};

pub const GMIS_MAGIC: &[u8; 4] = b"GMIS";
pub const GMIS_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8;

/// `magic | version u32 | input_dim u64 | latent_dim u64 | k u64 | pre_bias |
/// encoder_bias | encoder (latent x input) | decoder (input x latent)`, all
/// little-endian f32 after the header.
pub fn write_model<W: Write>(m: &SaeModel, mut sink: W) -> Result<()> {
    let mut buf =
        Vec::with_capacity(HEADER_LEN + 4 * (2 * m.encoder.len() + m.latent_dim + m.input_dim));
    buf.extend_from_slice(GMIS_MAGIC);
    buf.extend_from_slice(&GMIS_VERSION.to_le_bytes());
    for v in [m.input_dim, m.latent_dim, m.k] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let decoder = m.decoder_weights();
    for block in [&m.pre_bias, &m.encoder_bias, &m.encoder, &decoder] {
        for v in block.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut source: R) -> Result<SaeModel> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "checkpoint header too short: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != GMIS_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != GMIS_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (input_dim, latent_dim, k) = (u64_at(8), u64_at(16), u64_at(24));
    let weights = input_dim
        .checked_mul(latent_dim)
        .and_then(|w| w.checked_mul(2))
        .and_then(|w| w.checked_add(input_dim + latent_dim))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("checkpoint dimensions overflow".into()))?;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < weights {
        return Err(Error::Truncated {
            expected: weights,
            found,
        });
    }
    if found > weights {
        return Err(Error::Format(format!(
            "{} trailing bytes in checkpoint",
            found - weights
        )));
    }
    let floats: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (d, l) = (input_dim as usize, latent_dim as usize);
    let (pre_bias, rest) = floats.split_at(d);
    let (encoder_bias, rest) = rest.split_at(l);
    let (encoder, decoder) = rest.split_at(d * l);
    Sae::from_parts(
        k as usize,
        encoder.to_vec(),
        encoder_bias.to_vec(),
        decoder.to_vec(),
        pre_bias.to_vec(),
    )
}

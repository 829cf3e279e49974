//! `MSM1` model files: magic, `u32` layer count, `(u32 in, u32 out)` per
//! layer, then every parameter as a little-endian `f64`.

use super::{ModelError, ToyModel};

const MAGIC: &[u8; 4] = b"MSM1";

pub(super) fn encode(model: &ToyModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + model.layer_shapes.len() * 8 + model.params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(model.layer_shapes.len() as u32).to_le_bytes());
    for &(i, o) in &model.layer_shapes {
        out.extend_from_slice(&(i as u32).to_le_bytes());
        out.extend_from_slice(&(o as u32).to_le_bytes());
    }
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub(super) fn decode(bytes: &[u8]) -> Result<ToyModel, ModelError> {
    let fail = |m: &str| ModelError::Format(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(fail("missing MSM1 header"));
    }
    let u32_at = |at: usize| -> Result<u32, ModelError> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| fail("truncated shape table"))
    };
    let layers = u32_at(4)? as usize;
    if layers == 0 || layers > 1024 {
        return Err(fail("implausible layer count"));
    }
    let mut shapes = Vec::with_capacity(layers);
    for l in 0..layers {
        shapes.push((u32_at(8 + l * 8)? as usize, u32_at(12 + l * 8)? as usize));
    }
    let body = &bytes[8 + layers * 8..];
    if !body.len().is_multiple_of(8) {
        return Err(fail("parameter block is not a whole number of f64s"));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ToyModel::from_params(shapes, params)
}

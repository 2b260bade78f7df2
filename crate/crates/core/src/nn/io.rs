//! `MWNET1` model files: one JSON header line, then little-endian f32 blobs
//! (per layer: weights row-major `[out x in]`, then biases).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::model::{HeadKind, MlpModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &str = "MWNET1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    magic: String,
    head_kind: HeadKind,
    layer_dims: Vec<usize>,
    leaky_slope: f64,
    seed: u64,
    profile: String,
    payload_bytes: usize,
}

fn payload_len(dims: &[usize]) -> Option<usize> {
    dims.windows(2).try_fold(0usize, |acc, w| {
        let n = w[0].checked_mul(w[1])?.checked_add(w[1])?;
        acc.checked_add(n.checked_mul(4)?)
    })
}

/// Serializes `model` into the `MWNET1` byte layout.
pub fn encode_model(model: &MlpModel) -> Result<Vec<u8>> {
    model.validate()?;
    let payload_bytes = payload_len(&model.layer_dims).expect("validated widths");
    let header = Header {
        magic: MODEL_MAGIC.into(),
        head_kind: model.head,
        layer_dims: model.layer_dims.clone(),
        leaky_slope: model.leaky_slope,
        seed: model.seed,
        profile: model.profile.clone(),
        payload_bytes,
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(payload_bytes);
    for (w, b) in model.weights.iter().zip(&model.biases) {
        for v in w.iter().chain(b.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<MlpModel> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptHeader("no header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::CorruptHeader(format!("header JSON: {e}")))?;
    if header.magic != MODEL_MAGIC {
        return Err(Error::CorruptHeader(format!("magic {:?}, expected {MODEL_MAGIC}", header.magic)));
    }
    let dims = &header.layer_dims;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::DimensionMismatch(format!("invalid layer widths {dims:?}")));
    }
    let expected = payload_len(dims).ok_or_else(|| Error::DimensionMismatch("layer widths overflow".into()))?;
    if expected != header.payload_bytes {
        return Err(Error::DimensionMismatch(format!(
            "widths {dims:?} need {expected} payload bytes, header declares {}",
            header.payload_bytes
        )));
    }
    let payload = &bytes[nl + 1..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after the declared payload",
            payload.len() - expected
        )));
    }

    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")));
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let wv: Vec<f32> = floats.by_ref().take(fan_in * fan_out).collect();
        weights.push(Array2::from_shape_vec((fan_out, fan_in), wv).expect("sized by header"));
        biases.push(Array1::from_iter(floats.by_ref().take(fan_out)));
    }
    let model = MlpModel {
        head: header.head_kind,
        layer_dims: header.layer_dims,
        leaky_slope: header.leaky_slope,
        weights,
        biases,
        seed: header.seed,
        profile: header.profile,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_model(&bytes)
}

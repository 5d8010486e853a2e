//! Model file: the 8-byte magic `GSTRNN01`, a little-endian `u32` header
//! length, a UTF-8 JSON header, then every tensor as little-endian `f32`
//! in manifest order. Manifest offsets are bytes from the start of the
//! tensor data.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CellKind, Model, ModelConfig, NnError, Weights, TENSOR_NAMES};
use crate::preprocess::Standardizer;

pub const MAGIC: &[u8; 8] = b"GSTRNN01";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    cell: CellKind,
    hidden: usize,
    input_channels: usize,
    time_steps: usize,
    classes: usize,
    seed: u64,
    standardizer: Standardizer,
    tensors: Vec<TensorEntry>,
}

pub fn write_model(model: &Model, mut out: impl Write) -> Result<(), NnError> {
    let cfg = &model.config;
    let mut offset = 0;
    let tensors = TENSOR_NAMES
        .iter()
        .zip(Weights::shapes(cfg))
        .map(|(name, shape)| {
            let entry = TensorEntry { name: name.to_string(), offset, shape };
            offset += 4 * entry.shape.iter().product::<usize>();
            entry
        })
        .collect();
    let header = Header {
        cell: cfg.cell,
        hidden: cfg.hidden,
        input_channels: cfg.input_channels,
        time_steps: cfg.time_steps,
        classes: cfg.classes,
        seed: cfg.seed,
        standardizer: model.standardizer,
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| NnError::Header(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut data = Vec::with_capacity(offset);
    for v in model.weights.iter() {
        data.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&data)?;
    out.flush()?;
    Ok(())
}

pub fn read_model(bytes: &[u8]) -> Result<Model, NnError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NnError::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    let len_bytes: [u8; 4] =
        rest.get(..4).and_then(|b| b.try_into().ok()).ok_or_else(|| NnError::Truncated("header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let json = rest.get(4..4 + header_len).ok_or_else(|| NnError::Truncated("header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| NnError::Header(e.to_string()))?;
    let data = &rest[4 + header_len..];

    let config = ModelConfig {
        cell: header.cell,
        hidden: header.hidden,
        input_channels: header.input_channels,
        time_steps: header.time_steps,
        classes: header.classes,
        seed: header.seed,
    };
    config.validate()?;
    let shapes = Weights::shapes(&config);
    if header.tensors.len() != shapes.len() {
        return Err(NnError::Header(format!("expected {} tensors, found {}", shapes.len(), header.tensors.len())));
    }
    let mut weights = Weights::zeros(&config);
    for ((entry, expected), (name, dst)) in
        header.tensors.iter().zip(&shapes).zip(TENSOR_NAMES.iter().zip(weights.tensors_mut()))
    {
        if entry.name != *name || &entry.shape != expected {
            return Err(NnError::Header(format!("unexpected tensor {} {:?}", entry.name, entry.shape)));
        }
        let raw = data
            .get(entry.offset..entry.offset + 4 * dst.len())
            .ok_or_else(|| NnError::Truncated(format!("tensor {}", entry.name)))?;
        for (v, b) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
    }
    if !weights.all_finite() {
        return Err(NnError::NonFinite("stored weights"));
    }
    Model::new(config, weights, header.standardizer)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<(), NnError> {
    let file = File::create(path)?;
    write_model(model, BufWriter::new(file))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, NnError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_model(&bytes)
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_model(self, &mut out).expect("writing to memory cannot fail");
        out
    }
}

//! `DLTW` weight files.
//!
//! Layout: the magic bytes `DLTW`, a little-endian `u32` version (1), a
//! little-endian `u64` header length, a UTF-8 JSON header, then the raw
//! little-endian `f32` payload. The header maps every tensor name to
//! `{shape, dtype, offset}` with `offset` counted in bytes from the start of
//! the payload. The model hyperparameters travel under `__metadata__`
//! because the query-head count cannot be recovered from shapes alone.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use delta_core::{LayerWeights, Matrix, ModelConfig, WeightSet32};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const MAGIC: &[u8; 4] = b"DLTW";
pub const VERSION: u32 = 1;
const METADATA: &str = "__metadata__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Metadata {
    num_layers: usize,
    hidden_dim: usize,
    num_query_heads: usize,
    num_kv_groups: usize,
    ffn_dim: usize,
    vocab_size: usize,
    rope_base: f64,
}

impl From<ModelConfig> for Metadata {
    fn from(c: ModelConfig) -> Self {
        Self {
            num_layers: c.num_layers,
            hidden_dim: c.hidden_dim,
            num_query_heads: c.num_query_heads,
            num_kv_groups: c.num_kv_groups,
            ffn_dim: c.ffn_dim,
            vocab_size: c.vocab_size,
            rope_base: c.rope_base,
        }
    }
}

impl From<Metadata> for ModelConfig {
    fn from(m: Metadata) -> Self {
        Self {
            num_layers: m.num_layers,
            hidden_dim: m.hidden_dim,
            num_query_heads: m.num_query_heads,
            num_kv_groups: m.num_kv_groups,
            ffn_dim: m.ffn_dim,
            vocab_size: m.vocab_size,
            rope_base: m.rope_base,
        }
    }
}

/// Tensors in payload order.
fn named_tensors(w: &WeightSet32) -> Vec<(String, &Matrix<f32>)> {
    let mut out = vec![("embedding".to_string(), &w.embedding)];
    for (i, l) in w.layers.iter().enumerate() {
        for (suffix, m) in [("Wq", &l.w_q), ("Wk", &l.w_k), ("Wv", &l.w_v), ("Wo", &l.w_o), ("W1", &l.w_1), ("W2", &l.w_2)]
        {
            out.push((format!("L{i}.{suffix}"), m));
        }
    }
    out.push(("unembedding".to_string(), &w.unembedding));
    out
}

pub fn encode(w: &WeightSet32) -> Result<Vec<u8>> {
    let tensors = named_tensors(w);
    let mut header = Map::new();
    header.insert(METADATA.into(), serde_json::to_value(Metadata::from(w.config))?);
    let mut offset = 0u64;
    for (name, m) in &tensors {
        let entry = TensorEntry { shape: vec![m.rows(), m.cols()], dtype: "f32".into(), offset };
        header.insert(name.clone(), serde_json::to_value(entry)?);
        offset += 4 * m.as_slice().len() as u64;
    }
    let header = serde_json::to_vec(&Value::Object(header))?;

    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, m) in &tensors {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<WeightSet32> {
    ensure!(bytes.len() >= 16, "file too short for a weight header");
    ensure!(&bytes[..4] == MAGIC, "bad magic bytes {:?}", &bytes[..4]);
    let version = u32::from_le_bytes(bytes[4..8].try_into()?);
    ensure!(version == VERSION, "unsupported weight file version {version}");
    let header_len = u64::from_le_bytes(bytes[8..16].try_into()?) as usize;
    let payload_start = 16usize.checked_add(header_len).context("header length overflows")?;
    ensure!(bytes.len() >= payload_start, "header length {header_len} exceeds file size");
    let mut header: Map<String, Value> =
        serde_json::from_slice(&bytes[16..payload_start]).context("weight header is not a JSON object")?;
    let payload = &bytes[payload_start..];

    let meta: Metadata = serde_json::from_value(header.remove(METADATA).context("header lacks __metadata__")?)
        .context("malformed __metadata__")?;
    let config = ModelConfig::from(meta);
    config.validate()?;

    let mut take = |name: &str| -> Result<Matrix<f32>> {
        let entry: TensorEntry = serde_json::from_value(
            header.remove(name).with_context(|| format!("missing tensor {name}"))?,
        )
        .with_context(|| format!("malformed entry for {name}"))?;
        ensure!(entry.dtype == "f32", "tensor {name} has dtype {}, expected f32", entry.dtype);
        let [rows, cols] = entry.shape[..] else {
            bail!("tensor {name} has rank {}, expected 2", entry.shape.len());
        };
        let n = rows.checked_mul(cols).context("shape overflows")?;
        let start = entry.offset as usize;
        let end = n.checked_mul(4).and_then(|b| b.checked_add(start)).context("offset overflows")?;
        ensure!(end <= payload.len(), "tensor {name} runs past the payload");
        let data = payload[start..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Matrix::new(rows, cols, data)?)
    };

    let embedding = take("embedding")?;
    let mut layers = Vec::with_capacity(config.num_layers);
    for i in 0..config.num_layers {
        layers.push(LayerWeights {
            w_q: take(&format!("L{i}.Wq"))?,
            w_k: take(&format!("L{i}.Wk"))?,
            w_v: take(&format!("L{i}.Wv"))?,
            w_o: take(&format!("L{i}.Wo"))?,
            w_1: take(&format!("L{i}.W1"))?,
            w_2: take(&format!("L{i}.W2"))?,
        });
    }
    let unembedding = take("unembedding")?;
    if let Some(extra) = header.keys().next() {
        bail!("unexpected tensor {extra}");
    }
    Ok(WeightSet32::new(config, embedding, layers, unembedding)?)
}

pub fn write_weights(path: &Path, w: &WeightSet32) -> Result<()> {
    fs::write(path, encode(w)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_weights(path: &Path) -> Result<WeightSet32> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// Seeded random weights written to `path`.
pub fn gen_model(config: ModelConfig, seed: u64, path: &Path) -> Result<WeightSet32> {
    let w = WeightSet32::random(config, seed)?;
    write_weights(path, &w)?;
    Ok(w)
}

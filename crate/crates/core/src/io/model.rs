//! `VMDL` model container: magic, `u32` version, `u32` header length, a UTF-8
//! JSON header, then raw little-endian f32 blocks in the order the header
//! lists them.
//!
//! Header shape:
//!
//! ```json
//! {"kind":"gmm","params":{"K":2,"dim":3},
//!  "blocks":[{"name":"means","shape":[2,3]},{"name":"variances","shape":[2,3]},
//!            {"name":"priors","shape":[2]}]}
//! ```
//!
//! Each kind has a fixed set of required params and blocks whose shapes must
//! agree with the params.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{atomic_write, write_f32s, BinReader, ReadOptions, FORMAT_VERSION};
use crate::error::{check_finite, Error, Result};

pub const MAGIC: &[u8; 4] = b"VMDL";
const MAX_HEADER_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pca,
    Gmm,
    Kmeans,
    Pq,
    Linsvm,
    Ksvm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Pca => "pca",
            ModelKind::Gmm => "gmm",
            ModelKind::Kmeans => "kmeans",
            ModelKind::Pq => "pq",
            ModelKind::Linsvm => "linsvm",
            ModelKind::Ksvm => "ksvm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl FloatBlock {
    pub fn new(name: &str, shape: Vec<usize>, data: Vec<f32>) -> Self {
        FloatBlock {
            name: name.to_string(),
            shape,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub params: Map<String, Value>,
    pub blocks: Vec<FloatBlock>,
}

#[derive(Serialize, Deserialize)]
struct BlockDecl {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    params: Map<String, Value>,
    blocks: Vec<BlockDecl>,
}

impl ModelFile {
    pub fn new(kind: ModelKind, params: Map<String, Value>, blocks: Vec<FloatBlock>) -> Self {
        ModelFile { kind, params, blocks }
    }

    pub fn block(&self, name: &str) -> Result<&FloatBlock> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("{} model has no block {name:?}", self.kind.as_str())))
    }

    pub fn take_block(&mut self, name: &str) -> Result<Vec<f32>> {
        let i = self
            .blocks
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("{} model has no block {name:?}", self.kind.as_str())))?;
        Ok(std::mem::take(&mut self.blocks[i].data))
    }

    pub fn param(&self, key: &str) -> Result<&Value> {
        self.params
            .get(key)
            .ok_or_else(|| Error::Format(format!("{} header missing field {key:?}", self.kind.as_str())))
    }

    pub fn usize_param(&self, key: &str) -> Result<usize> {
        self.param(key)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::Format(format!("field {key:?} must be a non-negative integer")))
    }

    pub fn f64_param(&self, key: &str) -> Result<f64> {
        self.param(key)?
            .as_f64()
            .ok_or_else(|| Error::Format(format!("field {key:?} must be a number")))
    }

    pub fn bool_param(&self, key: &str) -> Result<bool> {
        self.param(key)?
            .as_bool()
            .ok_or_else(|| Error::Format(format!("field {key:?} must be a boolean")))
    }

    pub fn str_param(&self, key: &str) -> Result<&str> {
        self.param(key)?
            .as_str()
            .ok_or_else(|| Error::Format(format!("field {key:?} must be a string")))
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a {} model, found {}",
                kind.as_str(),
                self.kind.as_str()
            )));
        }
        Ok(())
    }

    /// Check required params and that block shapes match params and data.
    pub fn validate(&self) -> Result<()> {
        for b in &self.blocks {
            let n: usize = b.shape.iter().product();
            if n != b.data.len() {
                return Err(Error::Format(format!(
                    "block {:?} declares shape {:?} ({n} values) but holds {}",
                    b.name,
                    b.shape,
                    b.data.len()
                )));
            }
        }
        let expected = self.expected_blocks()?;
        if expected.len() != self.blocks.len() {
            return Err(Error::Format(format!(
                "{} model must have {} blocks, found {}",
                self.kind.as_str(),
                expected.len(),
                self.blocks.len()
            )));
        }
        for ((name, shape), b) in expected.iter().zip(&self.blocks) {
            if b.name != *name || b.shape != *shape {
                return Err(Error::Format(format!(
                    "block {:?} {:?} does not match expected {name:?} {shape:?}",
                    b.name, b.shape
                )));
            }
        }
        Ok(())
    }

    fn expected_blocks(&self) -> Result<Vec<(&'static str, Vec<usize>)>> {
        Ok(match self.kind {
            ModelKind::Pca => {
                let d = self.usize_param("input_dim")?;
                let d_out = self.usize_param("output_dim")?;
                self.bool_param("whiten")?;
                self.f64_param("eps")?;
                let ev = self
                    .param("eigenvalues")?
                    .as_array()
                    .ok_or_else(|| Error::Format("eigenvalues must be an array".into()))?;
                if ev.len() != d_out {
                    return Err(Error::Format(format!(
                        "{} eigenvalues for output_dim {d_out}",
                        ev.len()
                    )));
                }
                vec![("mean", vec![d]), ("projection", vec![d, d_out])]
            }
            ModelKind::Kmeans => {
                let k = self.usize_param("K")?;
                let d = self.usize_param("dim")?;
                vec![("centers", vec![k, d])]
            }
            ModelKind::Gmm => {
                let k = self.usize_param("K")?;
                let d = self.usize_param("dim")?;
                vec![("means", vec![k, d]), ("variances", vec![k, d]), ("priors", vec![k])]
            }
            ModelKind::Pq => {
                let d = self.usize_param("dim")?;
                let b = self.usize_param("B")?;
                let m = self.usize_param("m")?;
                if b == 0 || d % b != 0 || !(1..=16).contains(&m) {
                    return Err(Error::Format(format!("invalid pq params dim={d} B={b} m={m}")));
                }
                vec![("codebooks", vec![d / b, 1 << m, b])]
            }
            ModelKind::Linsvm => {
                let d = self.usize_param("dim")?;
                self.f64_param("C")?;
                self.f64_param("bias")?;
                vec![("w", vec![d])]
            }
            ModelKind::Ksvm => {
                self.str_param("kernel")?;
                for k in ["sigma", "A", "C", "bias"] {
                    self.f64_param(k)?;
                }
                let d = self.usize_param("dim")?;
                let n = self.usize_param("n_sv")?;
                vec![("support_vectors", vec![n, d]), ("dual_coefs", vec![n])]
            }
        })
    }
}

/// Serialize a model to its exact on-disk bytes.
pub fn encode_model(model: &ModelFile) -> Result<Vec<u8>> {
    model.validate()?;
    for b in &model.blocks {
        check_finite(&b.data)?;
    }
    let header = Header {
        kind: model.kind,
        params: model.params.clone(),
        blocks: model
            .blocks
            .iter()
            .map(|b| BlockDecl {
                name: b.name.clone(),
                shape: b.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + model.blocks.iter().map(|b| b.data.len() * 4).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for b in &model.blocks {
        write_f32s(&mut out, &b.data).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    let bytes = encode_model(model)?;
    atomic_write(path.as_ref(), |w| w.write_all(&bytes))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let opts = ReadOptions::default();
    let mut r = BinReader::open(path, MAGIC)?;
    let header_len = r.u32()? as u64;
    if header_len > MAX_HEADER_BYTES {
        return Err(Error::Format(format!("header length {header_len} too large")));
    }
    let raw = r.bytes(header_len, &opts)?;
    let header: Header = serde_json::from_slice(&raw)
        .map_err(|e| Error::Format(format!("{}: bad model header: {e}", path.display())))?;
    let total: u64 = header
        .blocks
        .iter()
        .map(|b| b.shape.iter().map(|&d| d as u64).product::<u64>())
        .sum();
    if total.saturating_mul(4) != r.remaining() {
        if total.saturating_mul(4) > r.remaining() {
            return Err(Error::Corruption(format!(
                "{}: header declares {total} floats but only {} bytes remain",
                path.display(),
                r.remaining()
            )));
        }
        return Err(Error::Corruption(format!("{}: trailing bytes after blocks", path.display())));
    }
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for decl in header.blocks {
        let n: u64 = decl.shape.iter().map(|&d| d as u64).product();
        let data = r.f32s(n, &opts)?;
        blocks.push(FloatBlock {
            name: decl.name,
            shape: decl.shape,
            data,
        });
    }
    r.expect_end()?;
    let model = ModelFile {
        kind: header.kind,
        params: header.params,
        blocks,
    };
    model.validate()?;
    Ok(model)
}

/// Parse a model from in-memory bytes (used by tests and tools).
pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut tmp = tempfile::NamedTempFile::new().map_err(|e| Error::io("<tmp>", e))?;
    tmp.write_all(bytes).map_err(|e| Error::io("<tmp>", e))?;
    read_model(tmp.path())
}

//! Binary checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "MNMTCKPT"
//! 8       4     format version, u32 little-endian
//! 12      8     header length H, u64 little-endian
//! 20      H     header, UTF-8 JSON (config, train state, provenance,
//!               tensor index, optimizer step)
//! 20+H    8·N   tensor data, f64 little-endian, row-major, in index order:
//!               parameters, then Adam first moments, then second moments
//! end−32  32    SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::hex;
use super::train::TrainState;
use super::{PipelineError, Result};
use crate::model::{AdamState, Mat, TransformerConfig, TransformerModel};

pub const MAGIC: &[u8; 8] = b"MNMTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub corpus_hashes: Vec<String>,
}

impl Provenance {
    pub fn new(config: &TransformerConfig, corpus_hashes: Vec<String>) -> Self {
        Provenance {
            config_hash: config_hash(config),
            corpus_hashes,
        }
    }
}

pub fn config_hash(config: &TransformerConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex(&Sha256::digest(json))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TransformerModel,
    pub optimizer: Option<AdamState>,
    pub state: TrainState,
    pub provenance: Provenance,
}

impl Checkpoint {
    /// A checkpoint of an untrained model.
    pub fn fresh(model: TransformerModel, seed: u64) -> Self {
        let provenance = Provenance::new(model.config(), vec![]);
        Checkpoint {
            model,
            optimizer: None,
            state: TrainState::new(seed),
            provenance,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TransformerConfig,
    state: TrainState,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
    optimizer_step: Option<u64>,
}

fn encode(ck: &Checkpoint) -> Vec<u8> {
    let m = &ck.model;
    let header = Header {
        config: m.config().clone(),
        state: ck.state.clone(),
        provenance: ck.provenance.clone(),
        tensors: m
            .param_names()
            .iter()
            .zip(m.params())
            .map(|(n, p)| TensorEntry {
                name: n.clone(),
                rows: p.nrows(),
                cols: p.ncols(),
            })
            .collect(),
        optimizer_step: ck.optimizer.as_ref().map(|o| o.step),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let mut tensors: Vec<&Mat> = m.params().iter().collect();
    if let Some(o) = &ck.optimizer {
        tensors.extend(&o.m);
        tensors.extend(&o.v);
    }
    for t in tensors {
        for x in t.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(ck)).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Option<Mat> {
        let bytes = self.take(rows.checked_mul(cols)?.checked_mul(8)?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Mat::from_shape_vec((rows, cols), data).ok()
    }
}

fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let corrupt = |reason: &str| PipelineError::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < MAGIC.len() + 4 + 8 + 32 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic or truncated"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(PipelineError::VersionMismatch {
            path: path.to_path_buf(),
            reason: format!("format version {version}, expected {FORMAT_VERSION}"),
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let hlen = u64::from_le_bytes(r.take(8).unwrap().try_into().unwrap());
    let header_bytes = r
        .take(usize::try_from(hlen).map_err(|_| corrupt("header length"))?)
        .ok_or_else(|| corrupt("header truncated"))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| corrupt(&format!("header: {e}")))?;
    if header.provenance.config_hash != config_hash(&header.config) {
        return Err(corrupt("config hash does not match config"));
    }
    let mut named = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let m = r.matrix(t.rows, t.cols).ok_or_else(|| corrupt("tensor data truncated"))?;
        named.push((t.name.clone(), m));
    }
    let optimizer = match header.optimizer_step {
        Some(step) => {
            let read_all = |r: &mut Reader| {
                header
                    .tensors
                    .iter()
                    .map(|t| r.matrix(t.rows, t.cols).ok_or_else(|| corrupt("optimizer data truncated")))
                    .collect::<Result<Vec<Mat>>>()
            };
            let m = read_all(&mut r)?;
            let v = read_all(&mut r)?;
            Some(AdamState { step, m, v })
        }
        None => None,
    };
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    let model =
        TransformerModel::from_params(header.config, named).map_err(|e| corrupt(&format!("parameters: {e}")))?;
    Ok(Checkpoint {
        model,
        optimizer,
        state: header.state,
        provenance: header.provenance,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes, path)
}

/// Loads a checkpoint and requires its model configuration to equal
/// `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &TransformerConfig) -> Result<Checkpoint> {
    let path = path.as_ref();
    let ck = load_checkpoint(path)?;
    if ck.model.config() != expected {
        return Err(PipelineError::VersionMismatch {
            path: path.to_path_buf(),
            reason: format!(
                "checkpoint config {} differs from expected {}",
                ck.provenance.config_hash,
                config_hash(expected)
            ),
        });
    }
    Ok(ck)
}

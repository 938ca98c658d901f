//! Checkpoint files: magic "DOMIXT01", a one-line JSON manifest, a one-line
//! JSON name/shape index, then row-major f32 little-endian tensor blocks in
//! index order.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nncore::Real;

use super::model::{HyperParams, ModelParams, Seq2Seq};

pub const MAGIC: &[u8; 8] = b"DOMIXT01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint file {path}: {reason}")]
    BadFile { path: String, reason: String },
}

/// The three checkpoints the paper self-ensembles at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckpointTag {
    #[serde(rename = "best-dev-loss")]
    BestDevLoss,
    #[serde(rename = "best-dev-bleu")]
    BestDevBleu,
    #[serde(rename = "final")]
    Final,
}

impl CheckpointTag {
    pub const ALL: [CheckpointTag; 3] = [
        CheckpointTag::BestDevLoss,
        CheckpointTag::BestDevBleu,
        CheckpointTag::Final,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CheckpointTag::BestDevLoss => "best-dev-loss",
            CheckpointTag::BestDevBleu => "best-dev-bleu",
            CheckpointTag::Final => "final",
        }
    }
}

impl fmt::Display for CheckpointTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    hyperparams: HyperParams,
    tag: CheckpointTag,
    epoch: usize,
    dev_loss: f64,
    dev_bleu: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// A model snapshot plus the epoch and dev metrics it was taken at.
#[derive(Debug, Clone)]
pub struct Checkpoint<R: Real> {
    pub model: Seq2Seq<R>,
    pub tag: CheckpointTag,
    pub epoch: usize,
    pub dev_loss: f64,
    pub dev_bleu: f64,
}

impl<R: Real> Checkpoint<R> {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let manifest = Manifest {
            hyperparams: self.model.hp,
            tag: self.tag,
            epoch: self.epoch,
            dev_loss: self.dev_loss,
            dev_bleu: self.dev_bleu,
        };
        let index: Vec<IndexEntry> = self
            .model
            .params
            .tensors
            .iter()
            .map(|(name, t)| IndexEntry {
                name: name.clone(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect();
        let mut f = fs::File::create(path).map_err(io_err)?;
        f.write_all(MAGIC).map_err(io_err)?;
        f.write_all(b"\n").map_err(io_err)?;
        serde_json::to_writer(&mut f, &manifest).map_err(|e| CheckpointError::BadFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        f.write_all(b"\n").map_err(io_err)?;
        serde_json::to_writer(&mut f, &index).map_err(|e| CheckpointError::BadFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        f.write_all(b"\n").map_err(io_err)?;
        let mut buf = Vec::new();
        for t in self.model.params.tensors.values() {
            for &x in t.iter() {
                buf.extend_from_slice(&x.to_f32().to_le_bytes());
            }
        }
        f.write_all(&buf).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let io_err = |e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let bad = |reason: &str| CheckpointError::BadFile {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        let mut f = fs::File::open(path).map_err(io_err)?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes).map_err(io_err)?;

        let mut lines = bytes.splitn(4, |&b| b == b'\n');
        let magic = lines.next().ok_or_else(|| bad("missing magic"))?;
        if magic != MAGIC {
            return Err(bad("wrong magic"));
        }
        let manifest: Manifest =
            serde_json::from_slice(lines.next().ok_or_else(|| bad("missing manifest"))?)
                .map_err(|e| bad(&format!("manifest: {e}")))?;
        let index: Vec<IndexEntry> =
            serde_json::from_slice(lines.next().ok_or_else(|| bad("missing index"))?)
                .map_err(|e| bad(&format!("index: {e}")))?;
        let blocks = lines.next().ok_or_else(|| bad("missing tensor blocks"))?;

        let expected: usize = index.iter().map(|e| e.rows * e.cols * 4).sum();
        if blocks.len() != expected {
            return Err(bad(&format!(
                "tensor block length {} != expected {expected}",
                blocks.len()
            )));
        }
        let mut tensors = IndexMap::new();
        let mut off = 0;
        for e in &index {
            let n = e.rows * e.cols;
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let b = &blocks[off + 4 * i..off + 4 * i + 4];
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                data.push(crate::nncore::real::<R>(v as f64));
            }
            off += 4 * n;
            let t = Array2::from_shape_vec((e.rows, e.cols), data)
                .map_err(|e| bad(&format!("shape: {e}")))?;
            tensors.insert(e.name.clone(), t);
        }
        Ok(Checkpoint {
            model: Seq2Seq {
                hp: manifest.hyperparams,
                params: ModelParams { tensors },
            },
            tag: manifest.tag,
            epoch: manifest.epoch,
            dev_loss: manifest.dev_loss,
            dev_bleu: manifest.dev_bleu,
        })
    }
}

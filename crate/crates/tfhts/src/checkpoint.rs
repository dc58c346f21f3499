//! Binary checkpoint file.
//!
//! ```text
//! "TFHC"  u16 version=1
//! u32 config_len  config JSON {"model": ModelConfig, "train": TrainConfig, "seed": u64}
//! u32 n_params
//! per parameter:  u16 name_len  name  u8 rank  rank × u32 dims  numel × f64
//! u64 adam_steps
//! per parameter:  numel × f64 first moment, numel × f64 second moment
//! u32 epochs_run  u32 best_epoch  u32 n_val  n_val × f64 validation losses
//! ```
//!
//! Little-endian throughout. Parameters appear in model registration order,
//! and loading rebuilds the model from the config before checking every
//! name and shape against it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tfhts_core::model::{Model, ModelConfig};
use tfhts_core::params::ParamStore;
use tfhts_core::train::{AdamState, Checkpoint, TrainConfig};
use tfhts_core::Tensor;

use crate::bytes::{Reader, Truncated};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TFHC";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("config block: {0}")]
    Config(String),
    #[error("parameters do not match the configured model: {0}")]
    Mismatch(String),
    #[error("inconsistent training history: {0}")]
    History(String),
    #[error("{0} does not fit the file's integer fields")]
    TooLarge(&'static str),
}

impl From<Truncated> for CheckpointError {
    fn from(t: Truncated) -> Self {
        CheckpointError::Truncated(t.0)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigBlock {
    model: ModelConfig,
    train: TrainConfig,
    seed: u64,
}

fn u32_of(n: usize, what: &'static str) -> Result<[u8; 4], CheckpointError> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| CheckpointError::TooLarge(what))
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    let block = ConfigBlock {
        model: ck.model.cfg,
        train: ck.train_cfg,
        seed: ck.train_cfg.seed,
    };
    let json = serde_json::to_vec(&block).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(json.len(), "config block")?);
    out.extend_from_slice(&json);
    let store = &ck.model.store;
    out.extend_from_slice(&u32_of(store.len(), "parameter count")?);
    for (_, name, t) in store.iter() {
        let len = u16::try_from(name.len()).map_err(|_| CheckpointError::TooLarge("parameter name"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::try_from(t.rank()).map_err(|_| CheckpointError::TooLarge("rank"))?);
        for &d in t.shape() {
            out.extend_from_slice(&u32_of(d, "dimension")?);
        }
        put_f64s(&mut out, t.data());
    }
    out.extend_from_slice(&ck.adam.t.to_le_bytes());
    for (m, v) in ck.adam.m.iter().zip(&ck.adam.v) {
        put_f64s(&mut out, m.data());
        put_f64s(&mut out, v.data());
    }
    out.extend_from_slice(&u32_of(ck.epoch, "epoch")?);
    out.extend_from_slice(&u32_of(ck.best_epoch, "best epoch")?);
    out.extend_from_slice(&u32_of(ck.val_history.len(), "history length")?);
    put_f64s(&mut out, &ck.val_history);
    Ok(out)
}

fn read_f64s(r: &mut Reader<'_>, n: usize, what: &'static str) -> Result<Vec<f64>, CheckpointError> {
    let n_bytes = n.checked_mul(8).ok_or(CheckpointError::Truncated(what))?;
    let raw = r.take(n_bytes, what)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn read_tensor(r: &mut Reader<'_>, shape: &[usize], what: &'static str) -> Result<Tensor, CheckpointError> {
    let numel = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or(CheckpointError::Truncated(what))?;
    let data = read_f64s(r, numel, what)?;
    Tensor::new(shape, data).map_err(|e| CheckpointError::Mismatch(e.to_string()))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.array("magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let json_len = r.u32("config length")? as usize;
    let json = r.take(json_len, "config block")?;
    let mut block: ConfigBlock = serde_json::from_slice(json).map_err(|e| CheckpointError::Config(e.to_string()))?;
    block.train.seed = block.seed;
    block
        .train
        .validate()
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    let mut model = Model::new(block.model, 0).map_err(|e| CheckpointError::Config(e.to_string()))?;

    let n_params = r.u32("parameter count")? as usize;
    if n_params != model.store.len() {
        return Err(CheckpointError::Mismatch(format!(
            "file has {n_params} tensors, model has {}",
            model.store.len()
        )));
    }
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let len = r.u16("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "parameter name")?)
            .map_err(|_| CheckpointError::Mismatch("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let expected = model.store.find(&name).map(|id| model.store.get(id).shape());
        if expected != Some(shape.as_slice()) {
            return Err(CheckpointError::Mismatch(format!("`{name}` with shape {shape:?}")));
        }
        let t = read_tensor(&mut r, &shape, "parameter values")?;
        store.push(name, t);
    }
    model.store.load_from(&store).map_err(CheckpointError::Mismatch)?;

    let t = r.u64("adam step count")?;
    let mut m = Vec::with_capacity(n_params);
    let mut v = Vec::with_capacity(n_params);
    for p in model.store.tensors() {
        m.push(read_tensor(&mut r, p.shape(), "first moment")?);
        v.push(read_tensor(&mut r, p.shape(), "second moment")?);
    }
    let epoch = r.u32("epoch")? as usize;
    let best_epoch = r.u32("best epoch")? as usize;
    let n_hist = r.u32("history length")? as usize;
    let val_history = read_f64s(&mut r, n_hist, "validation history")?;
    if r.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }
    if epoch != n_hist || best_epoch == 0 || best_epoch > n_hist {
        return Err(CheckpointError::History(format!(
            "epoch {epoch}, best epoch {best_epoch}, {n_hist} validation losses"
        )));
    }
    Ok(Checkpoint {
        model,
        train_cfg: block.train,
        adam: AdamState { m, v, t },
        epoch,
        val_history,
        best_epoch,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

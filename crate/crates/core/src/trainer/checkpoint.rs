//! Checkpoint files.
//!
//! ```text
//! "AVSF" | u32 version | u32 len, config text
//! u32 n_tensors, per tensor: u32 len, name | u32 rank | u64 dims[rank] | f64 data[..]
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::TrainConfig;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVSF";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamStore, config: &TrainConfig) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.str(&config.render());
    w.u32(params.len() as u32);
    for p in params.iter() {
        w.str(&p.name);
        w.u32(p.value.rank() as u32);
        for &d in p.value.shape() {
            w.u64(d as u64);
        }
        w.f64s(p.value.data());
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamStore, TrainConfig)> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected AVSF"));
    }
    let at = r.offset();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            at,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let at = r.offset();
    let text = r.str("config")?;
    let config = TrainConfig::parse(&text)
        .map_err(|e| Error::format(at, format!("embedded config: {e}")))?;
    let n = r.u32("tensor count")? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let name = r.str("tensor name")?;
        let at = r.offset();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::format(
                at,
                format!("implausible rank {rank} for `{name}`"),
            ));
        }
        let at = r.offset();
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dims")? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::format(at, format!("invalid shape {shape:?} for `{name}`")))?;
        let data = r.f64s(len, "tensor data")?;
        params.add(name, Tensor::new(&shape, data)?);
    }
    if !r.is_at_end() {
        return Err(Error::format(r.offset(), "trailing bytes after checkpoint"));
    }
    Ok((params, config))
}

pub fn save_checkpoint(params: &ParamStore, config: &TrainConfig, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(params, config))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, TrainConfig)> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads a checkpoint and rebuilds its model.
pub fn load_model(path: &Path) -> Result<(Model, TrainConfig)> {
    let (params, config) = load_checkpoint(path)?;
    Ok((Model::from_params(config.model.clone(), params)?, config))
}

//! Binary checkpoints: magic, version, JSON header, then little-endian f64 data.
//!
//! Layout: `b"XGCK"`, `u32` format version, `u64` header length, header JSON,
//! parameter values in header order, then Adam first and second moments in the
//! same order when present.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use xgrasp_autodiff::{Adam, AdamState, Array};

use super::config::ModelConfig;
use super::model::GraspModel;
use super::train::{EpochMetrics, TrainConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"XGCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    pub params: Vec<ParamEntry>,
    pub adam: Option<AdamMeta>,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: GraspModel,
    pub adam: Option<Adam>,
}

fn push_array(buf: &mut Vec<u8>, a: &Array) {
    for x in a.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn save_checkpoint(
    path: &Path,
    model: &GraspModel,
    adam: Option<&Adam>,
    epoch: usize,
    metrics: &[EpochMetrics],
    train: Option<&TrainConfig>,
) -> Result<()> {
    let params: Vec<ParamEntry> = model
        .store
        .iter()
        .map(|(_, name, a)| ParamEntry {
            name: name.to_string(),
            rows: a.rows(),
            cols: a.cols(),
        })
        .collect();
    let adam = adam.filter(|a| !a.state().m.is_empty());
    let header = CheckpointHeader {
        model: model.config.clone(),
        train: train.cloned(),
        epoch,
        metrics: metrics.to_vec(),
        params,
        adam: adam.map(|a| AdamMeta {
            step: a.state().step,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + model.store.num_scalars() * 24);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, _, a) in model.store.iter() {
        push_array(&mut buf, a);
    }
    if let Some(a) = adam {
        for m in &a.state().m {
            push_array(&mut buf, m);
        }
        for v in &a.state().v {
            push_array(&mut buf, v);
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array(&mut self, rows: usize, cols: usize) -> Result<Array> {
        let raw = self.take(rows * cols * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Array::from_vec(rows, cols, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(len)?)?;
    let mut model = GraspModel::new(header.model.clone())?;
    if model.store.len() != header.params.len() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint has {} parameters, model has {}",
            header.params.len(),
            model.store.len()
        )));
    }
    let expected: Vec<(String, (usize, usize))> =
        model.store.iter().map(|(_, n, a)| (n.to_string(), a.shape())).collect();
    for (entry, (name, shape)) in header.params.iter().zip(&expected) {
        if &entry.name != name || (entry.rows, entry.cols) != *shape {
            return Err(Error::ConfigMismatch(format!(
                "parameter {} {}x{} does not match {} {}x{}",
                entry.name, entry.rows, entry.cols, name, shape.0, shape.1
            )));
        }
    }
    let ids: Vec<_> = model.store.ids().collect();
    for (id, e) in ids.iter().zip(&header.params) {
        let a = r.array(e.rows, e.cols)?;
        model.store.set(*id, a)?;
    }
    let adam = match &header.adam {
        Some(meta) => {
            let mut m = Vec::with_capacity(header.params.len());
            for e in &header.params {
                m.push(r.array(e.rows, e.cols)?);
            }
            let mut v = Vec::with_capacity(header.params.len());
            for e in &header.params {
                v.push(r.array(e.rows, e.cols)?);
            }
            let mut adam = Adam::with_betas(meta.lr, meta.beta1, meta.beta2, meta.eps);
            adam.set_state(AdamState { step: meta.step, m, v });
            Some(adam)
        }
        None => None,
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { header, model, adam })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_params_and_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut cfg = ModelConfig::small();
        cfg.seed = 3;
        let model = GraspModel::new(cfg).unwrap();
        let mut adam = Adam::new(0.01);
        let n = model.store.len();
        adam.set_state(AdamState {
            step: 7,
            m: model.store.iter().map(|(_, _, a)| a.map(|x| x * 2.0)).collect(),
            v: model.store.iter().map(|(_, _, a)| a.map(|x| x * x)).collect(),
        });
        save_checkpoint(&path, &model, Some(&adam), 4, &[], None).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.header.epoch, 4);
        assert_eq!(ck.model.store, model.store);
        let back = ck.adam.unwrap();
        assert_eq!(back.state().step, 7);
        assert_eq!(back.state().m.len(), n);
        assert_eq!(back, adam);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        let model = GraspModel::new(ModelConfig::small()).unwrap();
        save_checkpoint(&path, &model, None, 0, &[], None).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}

//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LRPTN" | version u32 | meta_len u64 | meta (JSON) | count u64 |
//! count x ( name_len u32 | name | rank u32 | dims u64 x rank | f64 payload )
//! ```
//!
//! Tensor names are `param.<name>`, `buffer.<name>` and
//! `optim.<slot>.<name>`, with `<name>` as produced by the model visitors.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng, RngState};
use crate::optim::{Optimizer, PlateauSchedule};

use super::config::TrainConfig;
use super::model::{build_model, Model};

pub const MAGIC: &[u8; 5] = b"LRPTN";
pub const FORMAT_VERSION: u32 = 1;

/// Run state stored next to the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub update: u64,
    pub epoch: u64,
    pub lr: f64,
    pub optimizer_steps: u64,
    pub shuffle_rng: Option<RngState>,
    pub dropout_rng: Option<RngState>,
    pub schedule: Option<PlateauSchedule>,
    pub best_valid: Option<f64>,
    pub skipped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Matrix)>,
}

/// Collects the tensors of a model and, optionally, its optimizer.
pub fn collect_tensors(model: &Model, optimizer: Option<&Optimizer>) -> Vec<(String, Matrix)> {
    let mut names = Vec::new();
    let mut out = Vec::new();
    model.visit(&mut |name, m| {
        names.push(name.clone());
        out.push((format!("param.{name}"), m.clone()));
    });
    model.visit_buffers(&mut |name, m| out.push((format!("buffer.{name}"), m.clone())));
    if let Some(opt) = optimizer {
        for (slot, mats) in opt.slots() {
            for (name, m) in names.iter().zip(mats) {
                out.push((format!("optim.{slot}.{name}"), m.clone()));
            }
        }
    }
    out
}

fn encode(meta: &CheckpointMeta, tensors: &[(String, Matrix)]) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(meta).map_err(|e| Error::Config(e.to_string()))?;
    let payload: usize = tensors.iter().map(|(n, m)| 4 + n.len() + 4 + 16 + 8 * m.len()).sum();
    let mut buf = Vec::with_capacity(5 + 4 + 8 + meta.len() + 8 + payload);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, m) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    model: &Model,
    optimizer: Option<&Optimizer>,
) -> Result<()> {
    let bytes = encode(meta, &collect_tensors(model, optimizer))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    location: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                &self.location,
                format!("truncated while reading {field} at byte {}", self.pos),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, field: &str) -> Result<usize> {
        let v = self.u64(field)?;
        usize::try_from(v).map_err(|_| Error::format(&self.location, format!("{field} {v} too large")))
    }
}

pub fn decode_checkpoint(bytes: &[u8], location: &str) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, location: location.to_string() };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::format(location, "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            location,
            format!("version {version} unsupported, expected {FORMAT_VERSION}"),
        ));
    }
    let meta_len = r.len("meta length")?;
    let meta_bytes = r.take(meta_len, "meta")?;
    let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
        .map_err(|e| Error::format(location, format!("meta: {e}")))?;
    let count = r.len("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let name_len = r.u32(&format!("tensor {i} name length"))? as usize;
        let name = std::str::from_utf8(r.take(name_len, &format!("tensor {i} name"))?)
            .map_err(|_| Error::format(location, format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u32(&format!("{name} rank"))?;
        if rank != 2 {
            return Err(Error::format(location, format!("{name}: rank {rank}, expected 2")));
        }
        let rows = r.len(&format!("{name} dims"))?;
        let cols = r.len(&format!("{name} dims"))?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format(location, format!("{name}: dims {rows}x{cols} overflow")))?;
        let raw = r.take(n, &format!("{name} payload"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Matrix::new(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(location, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { meta, tensors })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    fn fill(&self, prefix: &str, name: &str, target: &mut Matrix) -> Result<()> {
        let key = format!("{prefix}.{name}");
        let m = self
            .tensor(&key)
            .ok_or_else(|| Error::format(&key, "missing from checkpoint"))?;
        if m.shape() != target.shape() {
            return Err(Error::format(
                &key,
                format!("shape {:?} does not match the model's {:?}", m.shape(), target.shape()),
            ));
        }
        *target = m.clone();
        Ok(())
    }

    /// Rebuilds the model described by the stored config and loads every
    /// parameter and buffer. Missing or mis-shaped tensors are errors.
    pub fn restore_model(&self) -> Result<Model> {
        let cfg = &self.meta.config;
        let mut model = build_model(&cfg.model, &cfg.task, &mut Rng::new(0))?;
        self.load_into(&mut model)?;
        Ok(model)
    }

    /// Overwrites the parameters and buffers of `model`.
    pub fn load_into(&self, model: &mut Model) -> Result<()> {
        let mut err = None;
        model.visit_mut(&mut |name, m| {
            if err.is_none() {
                err = self.fill("param", &name, m).err();
            }
        });
        model.visit_buffers_mut(&mut |name, m| {
            if err.is_none() {
                err = self.fill("buffer", &name, m).err();
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Optimizer with the stored accumulators for `model`.
    pub fn restore_optimizer(&self, model: &Model) -> Result<Optimizer> {
        let params: Vec<Matrix> = model.params().into_iter().map(|(_, m)| m).collect();
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        let cfg = &self.meta.config;
        let mut opt = Optimizer::new(cfg.optim.kind, &params, self.meta.lr);
        opt.set_step_count(self.meta.optimizer_steps);
        for (slot, mats) in opt.slots_mut() {
            for (name, m) in names.iter().zip(mats.iter_mut()) {
                self.fill(&format!("optim.{slot}"), name, m)?;
            }
        }
        Ok(opt)
    }
}

//! Checkpoint files.
//!
//! Layout: magic `b"FLCK"`, version (u32 LE), header length (u64 LE), JSON
//! header, then the parameter vector as little-endian f64 and, when the
//! header says so, the two Adam moment vectors of the same length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::autodiff::{ParamVector, Registry};
use crate::error::{Error, Result};
use crate::io::*;
use crate::spectral::Grid;
use crate::training::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FLCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub grid: Grid,
    pub params: ParamVector,
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer: Option<AdamState>,
    /// Free-form run metadata.
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    grid: Grid,
    registry: Registry,
    epoch: usize,
    optimizer_step: Option<u64>,
    #[serde(default)]
    meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: &Model, params: ParamVector) -> Self {
        Checkpoint {
            model: model.config().clone(),
            grid: model.grid(),
            params,
            epoch: 0,
            optimizer: None,
            meta: serde_json::Value::Null,
        }
    }

    /// Rebuilds the model and checks the stored layout against it.
    pub fn model(&self) -> Result<Model> {
        let m = Model::new(self.model.clone(), self.grid)?;
        if m.registry() != self.params.registry() {
            return Err(Error::Format("checkpoint parameter layout does not match its model config".into()));
        }
        Ok(m)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != self.params.len() || opt.v.len() != self.params.len() {
                return Err(Error::config("optimizer moments do not match parameter length"));
            }
        }
        let header = Header {
            model: self.model.clone(),
            grid: self.grid,
            registry: self.params.registry().clone(),
            epoch: self.epoch,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u32(w, VERSION)?;
        write_u64(w, json.len() as u64)?;
        w.write_all(&json)?;
        write_f64_slice(w, self.params.values())?;
        if let Some(opt) = &self.optimizer {
            write_f64_slice(w, &opt.m)?;
            write_f64_slice(w, &opt.v)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        read_magic(r, CHECKPOINT_MAGIC)?;
        let version = read_u32(r, "version")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u64(r, "header length")? as usize;
        if len > 1 << 30 {
            return Err(Error::Format(format!("implausible checkpoint header length {len}")));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| Error::Format("truncated checkpoint header".into()))?;
        let h: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let n = h.registry.total();
        let values = read_f64_vec(r, n, "checkpoint parameters")?;
        let params = ParamVector::from_values(h.registry, values)?;
        let optimizer = match h.optimizer_step {
            Some(step) => Some(AdamState {
                m: read_f64_vec(r, n, "checkpoint first moments")?,
                v: read_f64_vec(r, n, "checkpoint second moments")?,
                step,
            }),
            None => None,
        };
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        Ok(Checkpoint { model: h.model, grid: h.grid, params, epoch: h.epoch, optimizer, meta: h.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}

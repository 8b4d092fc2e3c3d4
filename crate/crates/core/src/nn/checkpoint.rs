//! Binary parameter checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   b"FAVCKPT1"
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (`CheckpointHeader`)
//! params       for each entry of `header.nets`, in order,
//!              `param_count` f64 values: per layer the weight matrix
//!              (fan_out × fan_in, row-major) followed by the bias vector
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Mlp, MlpConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FAVCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetEntry {
    pub name: String,
    pub config: MlpConfig,
    pub param_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    pub step: u64,
    pub nets: Vec<NetEntry>,
    /// Free-form model settings (latent dims, loss constants, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub seed: u64,
    pub step: u64,
    pub meta: serde_json::Value,
    pub nets: Vec<(String, Mlp)>,
}

impl Checkpoint {
    pub fn net(&self, name: &str) -> Result<&Mlp> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no net named {name:?}")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            version: 1,
            kind: self.kind.clone(),
            seed: self.seed,
            step: self.step,
            nets: self
                .nets
                .iter()
                .map(|(name, m)| NetEntry {
                    name: name.clone(),
                    config: m.config().clone(),
                    param_count: m.param_count(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, m) in &self.nets {
            for p in m.params() {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if header.version != 1 {
            return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
        }
        let mut nets = Vec::with_capacity(header.nets.len());
        for entry in header.nets {
            if entry.param_count != entry.config.param_count() {
                return Err(Error::Checkpoint(format!(
                    "net {:?} declares {} params but its config needs {}",
                    entry.name,
                    entry.param_count,
                    entry.config.param_count()
                )));
            }
            let mut params = vec![0.0; entry.param_count];
            let mut buf = [0u8; 8];
            for p in params.iter_mut() {
                r.read_exact(&mut buf)?;
                *p = f64::from_le_bytes(buf);
            }
            nets.push((entry.name, Mlp::from_params(entry.config, params)?));
        }
        Ok(Self {
            kind: header.kind,
            seed: header.seed,
            step: header.step,
            meta: header.meta,
            nets,
        })
    }
}

//! Binary checkpoint: every parameter plus both memory banks.
//!
//! ```text
//! "MTMD" | u32 version | u32 count
//! count × { u32 name_len | name | u32 rank | rank × u64 dim | f64 payload }
//! u64 trailer_len | JSON trailer
//! ```
//!
//! Integers and floats are little-endian. The trailer echoes the configs
//! and the metrics of the saved epoch.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::concepts::Stage;
use crate::error::{MtmdError, Result};
use crate::memory::MemoryBank;
use crate::model::{MemoryBanks, Model, ModelConfig, BANK_HIDDEN, BANK_PREDEFINED};
use crate::numerics::Tensor;
use crate::params::ParameterSet;

const MAGIC: &[u8; 4] = b"MTMD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub valid_ic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: Model, train: Option<TrainConfig>) -> Self {
        let meta = CheckpointMeta {
            model: model.config.clone(),
            train,
            epoch: None,
            valid_ic: None,
        };
        Checkpoint { model, meta }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(&str, &Tensor)> = self.model.params.iter().map(|(k, v)| (k.as_str(), v)).collect();
        tensors.push((BANK_PREDEFINED, self.model.banks.predefined.items()));
        tensors.push((BANK_HIDDEN, self.model.banks.hidden.items()));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let trailer = serde_json::to_vec(&self.meta).map_err(|e| MtmdError::Checkpoint(e.to_string()))?;
        out.extend_from_slice(&(trailer.len() as u64).to_le_bytes());
        out.extend_from_slice(&trailer);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(MtmdError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(MtmdError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| MtmdError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| MtmdError::Checkpoint(format!("`{name}`: shape overflows")))?;
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, data).map_err(|e| MtmdError::Checkpoint(format!("`{name}`: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(MtmdError::Checkpoint(format!("duplicate tensor `{name}`")));
            }
        }
        let trailer_len = r.u64()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(trailer_len)?).map_err(|e| MtmdError::Checkpoint(e.to_string()))?;
        if r.pos != bytes.len() {
            return Err(MtmdError::Checkpoint("trailing bytes".into()));
        }

        let bank = |tensors: &mut BTreeMap<String, Tensor>, name: &str, stage| -> Result<MemoryBank> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| MtmdError::Checkpoint(format!("missing `{name}`")))?;
            MemoryBank::from_items(t, stage)
        };
        let banks = MemoryBanks {
            predefined: bank(&mut tensors, BANK_PREDEFINED, Stage::Predefined)?,
            hidden: bank(&mut tensors, BANK_HIDDEN, Stage::Hidden)?,
        };
        let params = ParameterSet::from_map(tensors);
        check_against_config(&params, &meta.model)?;
        Ok(Checkpoint {
            model: Model {
                config: meta.model.clone(),
                params,
                banks,
            },
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// The stored tensors must match the echoed config name for name and shape.
fn check_against_config(params: &ParameterSet, config: &ModelConfig) -> Result<()> {
    let expected = crate::model::init_params(config);
    for (name, t) in expected.iter() {
        let got = params
            .get(name)
            .map_err(|_| MtmdError::Checkpoint(format!("missing `{name}`")))?;
        if got.shape() != t.shape() {
            return Err(MtmdError::Checkpoint(format!(
                "`{name}` has shape {:?}, config implies {:?}",
                got.shape(),
                t.shape()
            )));
        }
    }
    if let Some(extra) = params.names().find(|n| !expected.contains(n)) {
        return Err(MtmdError::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| MtmdError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes   "BMSCKPT1"
//! len      u64 LE    byte length of the header
//! header   len bytes UTF-8 JSON (CheckpointHeader)
//! payload  f64 LE    sections concatenated in header order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Architecture, Mlp};
use super::{DriftField, OutputScaling};
use crate::error::{BmsError, Result};
use crate::schedules::{NoiseSchedule, ScheduleKind};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BMSCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub len: usize,
}

/// Optimizer and RNG position needed to resume training bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub outer_step: u64,
    pub adam_step: u64,
    pub rng_seed: u64,
    pub rng_stream: u64,
    /// ChaCha word position, as a decimal string.
    pub rng_word_pos: String,
    pub last_finite_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub heads: usize,
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub horizon: f64,
    /// Output reparameterization cutoff; absent when the field is unscaled.
    pub t_cut: Option<f64>,
    pub sections: Vec<SectionInfo>,
    #[serde(default)]
    pub training: Option<TrainingState>,
    /// Experiment configuration the field was trained under.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub sections: Vec<Vec<f64>>,
}

impl Checkpoint {
    /// Checkpoint holding a field's parameters in a `params` section.
    pub fn from_field(field: &DriftField, schedule: &NoiseSchedule, seed: u64) -> Self {
        let params = field.params().to_vec();
        Checkpoint {
            header: CheckpointHeader {
                architecture: field.network().architecture().clone(),
                heads: field.heads(),
                seed,
                schedule: *schedule.kind(),
                horizon: schedule.horizon(),
                t_cut: field.scaling().map(|s| s.t_cut),
                sections: vec![SectionInfo { name: "params".into(), len: params.len() }],
                training: None,
                config: None,
            },
            sections: vec![params],
        }
    }

    pub fn push_section(&mut self, name: &str, data: Vec<f64>) {
        self.header.sections.push(SectionInfo { name: name.into(), len: data.len() });
        self.sections.push(data);
    }

    pub fn section(&self, name: &str) -> Option<&[f64]> {
        self.header.sections.iter().position(|s| s.name == name).map(|i| self.sections[i].as_slice())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.header.schedule, self.header.horizon)
    }

    /// Rebuilds the field stored in the `params` section.
    pub fn field(&self) -> Result<DriftField> {
        let params = self.section("params").ok_or_else(|| BmsError::Checkpoint("missing params section".into()))?;
        let arch = self.header.architecture.clone();
        let expected = arch.n_params();
        let net = Mlp::from_params(arch, params.to_vec()).ok_or_else(|| {
            BmsError::Checkpoint(format!("architecture expects {expected} parameters, found {}", params.len()))
        })?;
        if net.architecture().out_dim != net.architecture().state_dim * self.header.heads {
            return Err(BmsError::Checkpoint("output width does not match head count".into()));
        }
        let scaling = match self.header.t_cut {
            Some(t_cut) => Some(OutputScaling { schedule: self.schedule()?, t_cut }),
            None => None,
        };
        Ok(DriftField::from_mlp(net, self.header.heads, scaling))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.sections.iter().map(Vec::len).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for s in &self.sections {
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(BmsError::Checkpoint("not a checkpoint file".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| BmsError::Checkpoint("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let mut offset = 16 + len;
        let mut sections = Vec::with_capacity(header.sections.len());
        for info in &header.sections {
            let end = offset + 8 * info.len;
            let raw = bytes
                .get(offset..end)
                .ok_or_else(|| BmsError::Checkpoint(format!("truncated section {}", info.name)))?;
            sections.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
            offset = end;
        }
        if offset != bytes.len() {
            return Err(BmsError::Checkpoint(format!("{} trailing bytes", bytes.len() - offset)));
        }
        Ok(Checkpoint { header, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

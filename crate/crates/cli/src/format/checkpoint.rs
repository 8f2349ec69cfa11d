//! Checkpoint container (schema `persearch-checkpoint/1`).
//!
//! ```json
//! {
//!   "schema": "persearch-checkpoint/1",
//!   "architecture": {
//!     "name": "conv3x3-relu-avgpool2-conv3x3-relu-avgpool2-linear-l2norm",
//!     "encoder": { "dim": 128, "roi_height": 16, ... },
//!     "param_count": 34288,
//!     "param_order": ["conv1.weight[o][ky][kx][i]", ...]
//!   },
//!   "checkpoint": { "state": { "online": [...], "average": [...], "momentum": 0.999 },
//!                   "bank": {...}, "table": null, "iterations": 6000, ... }
//! }
//! ```
//!
//! The descriptor is checked against the stored parameters on load, and the
//! memory bank is re-validated entry by entry.

use std::path::Path;

use persearch_core::ema::DualEncoderState;
use persearch_core::harness::Checkpoint;
use persearch_core::memory::MemoryBank;
use persearch_core::model::{Encoder, EncoderConfig};
use serde::{Deserialize, Serialize};

use super::{read_json, write_json};
use crate::error::{CliError, Result};

pub const SCHEMA: &str = "persearch-checkpoint/1";
pub const ARCHITECTURE: &str = "conv3x3-relu-avgpool2-conv3x3-relu-avgpool2-linear-l2norm";
pub const PARAM_ORDER: [&str; 6] = [
    "conv1.weight[o][ky][kx][i]",
    "conv1.bias[o]",
    "conv2.weight[o][ky][kx][i]",
    "conv2.bias[o]",
    "proj.weight[r][y][x][c]",
    "proj.bias[r]",
];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub name: String,
    pub encoder: EncoderConfig,
    pub param_count: usize,
    pub param_order: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    schema: String,
    architecture: Architecture,
    checkpoint: Checkpoint,
}

pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let encoder =
        Encoder::new(checkpoint.encoder.clone()).map_err(|e| CliError::format(path, e))?;
    let file = CheckpointFile {
        schema: SCHEMA.to_string(),
        architecture: Architecture {
            name: ARCHITECTURE.to_string(),
            encoder: checkpoint.encoder.clone(),
            param_count: encoder.param_count(),
            param_order: PARAM_ORDER.iter().map(|s| s.to_string()).collect(),
        },
        checkpoint: checkpoint.clone(),
    };
    write_json(path, &file)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file: CheckpointFile = read_json(path)?;
    let bad = |reason: String| CliError::format(path, reason);
    if file.schema != SCHEMA {
        return Err(bad(format!(
            "schema `{}`, expected `{SCHEMA}`",
            file.schema
        )));
    }
    let arch = &file.architecture;
    if arch.name != ARCHITECTURE {
        return Err(bad(format!("unknown architecture `{}`", arch.name)));
    }
    let mut ck = file.checkpoint;
    if arch.encoder != ck.encoder {
        return Err(bad(
            "architecture descriptor disagrees with the stored encoder".into(),
        ));
    }
    let encoder = Encoder::new(ck.encoder.clone()).map_err(|e| bad(e.to_string()))?;
    if encoder.param_count() != arch.param_count || ck.state.online().len() != arch.param_count {
        return Err(bad(format!(
            "descriptor expects {} parameters, found {}",
            encoder.param_count(),
            ck.state.online().len()
        )));
    }
    ck.state = DualEncoderState::from_parts(
        ck.state.online().clone(),
        ck.state.average().clone(),
        ck.state.momentum(),
    )
    .map_err(|e| bad(e.to_string()))?;
    if !ck
        .state
        .online()
        .as_slice()
        .iter()
        .chain(ck.state.average().as_slice())
        .all(|v| v.is_finite())
    {
        return Err(bad("non-finite parameter".into()));
    }
    ck.bank = revalidate(&ck.bank).map_err(|e| bad(e.to_string()))?;
    if ck.bank.dim() != ck.encoder.dim {
        return Err(bad(
            "memory dimension differs from the encoder output".into()
        ));
    }
    Ok(ck)
}

fn revalidate(bank: &MemoryBank) -> Result<MemoryBank, String> {
    if bank.labeled().len() > bank.labeled_capacity()
        || bank.unlabeled().len() > bank.unlabeled_capacity()
    {
        return Err("memory queue longer than its capacity".into());
    }
    if bank.labeled().any(|e| e.identity.is_none())
        || bank.unlabeled().any(|e| e.identity.is_some())
    {
        return Err("memory entry stored in the wrong queue".into());
    }
    let mut fresh = MemoryBank::new(
        bank.dim(),
        bank.labeled_capacity(),
        bank.unlabeled_capacity(),
    );
    fresh
        .enqueue(bank.labeled().chain(bank.unlabeled()).cloned())
        .map_err(|e| e.to_string())?;
    Ok(fresh)
}

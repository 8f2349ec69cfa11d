//! Run configuration.
//!
//! A config file is TOML with four optional sections; every key falls back to
//! its default, and unknown keys are rejected:
//!
//! ```toml
//! out_dir = "runs"
//!
//! [dataset]            # synthetic dataset (identities, scenes, noise, seed)
//! n_identities = 250
//! appearance_noise = 0.5
//!
//! [train]              # queues, momentum, loss, optimizer, schedule
//! labeled_queue = 256
//! unlabeled_queue = 256
//! momentum = 0.999
//! loss = "pairwise"    # or "oim"
//! [train.schedule]
//! warmup_target = 0.02
//! milestones = [27, 37]
//!
//! [eval]               # protocol, detector noise, gallery sampler seed
//! [eval.protocol]
//! gallery_sizes = [10, 20, 50, 100]
//!
//! [ablation]
//! seeds = [0, 1, 2]
//! [ablation.grid]
//! momentum = [0.0, 0.9, 0.99, 0.999]
//! ```
//!
//! Overrides use dotted paths, `train.momentum=0.9` or
//! `ablation.grid.unlabeled_queue=[0,64,256]`. Values are parsed as TOML and
//! fall back to plain strings.

use std::fs;
use std::path::{Path, PathBuf};

use persearch_core::data::DatasetSpec;
use persearch_core::harness::{AblationGrid, EvalSetup, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "PERSEARCH_OUT_DIR";

const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub eval: EvalSetup,
    pub ablation: AblationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub grid: AblationGrid,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            seeds: vec![0, 1, 2],
            grid: AblationGrid::default(),
        }
    }
}

impl Config {
    /// Reads `path` (defaults when `None`) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |what: &str, e: persearch_core::Error| CliError::Config(format!("{what}: {e}"));
        self.dataset.validate().map_err(|e| wrap("dataset", e))?;
        self.train.validate().map_err(|e| wrap("train", e))?;
        self.eval
            .protocol
            .validate()
            .map_err(|e| wrap("eval.protocol", e))?;
        self.eval
            .detections
            .validate()
            .map_err(|e| wrap("eval.detections", e))?;
        if self.ablation.seeds.is_empty() {
            return Err(CliError::Config("ablation.seeds must not be empty".into()));
        }
        Ok(())
    }

    /// `flag`, then the environment variable, then the config file, then `runs`.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is representable as TOML")
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{path}`")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = table;
    for key in parents {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}` in `{path}` is not a section")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use persearch_core::harness::LossKind;

    #[test]
    fn overrides_are_typed() {
        let c = Config::load(
            None,
            &[
                "train.momentum=0.5".into(),
                "train.loss=oim".into(),
                "ablation.grid.unlabeled_queue=[0, 64]".into(),
                "train.schedule.milestones=[3,4]".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.momentum, 0.5);
        assert_eq!(c.train.loss, LossKind::Oim);
        assert_eq!(c.ablation.grid.unlabeled_queue, vec![0, 64]);
        assert_eq!(c.train.schedule.milestones, vec![3, 4]);
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        assert!(Config::load(None, &["train.momentun=0.5".into()]).is_err());
        assert!(Config::load(None, &["train.momentum".into()]).is_err());
        assert!(Config::load(None, &["train.momentum=2.0".into()]).is_err());
        assert!(Config::load(None, &["train.momentum.x=1".into()]).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = Config::default();
        let text = c.to_toml();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, text).unwrap();
        assert_eq!(Config::load(Some(&path), &[]).unwrap(), c);
    }
}

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{train_and_evaluate, EvalSetup, LossKind, RunRecord, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Values swept for each ablation axis. An empty axis keeps the base
/// config's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub labeled_queue: Vec<usize>,
    pub unlabeled_queue: Vec<usize>,
    pub momentum: Vec<f64>,
    pub loss: Vec<LossKind>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub labeled_queue: usize,
    pub unlabeled_queue: usize,
    pub momentum: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl CellKey {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            labeled_queue: self.labeled_queue,
            unlabeled_queue: self.unlabeled_queue,
            momentum: self.momentum,
            loss: self.loss,
            seed: self.seed,
            ..base.clone()
        }
    }
}

impl AblationGrid {
    /// Cells in row-major order over (L, U, m, loss, seed).
    pub fn cells(&self, base: &TrainConfig, seeds: &[u64]) -> Result<Vec<CellKey>> {
        if seeds.is_empty() {
            return Err(Error::invalid("seeds", "at least one seed is required"));
        }
        let or_base = |v: &Vec<usize>, b: usize| if v.is_empty() { vec![b] } else { v.clone() };
        let ls = or_base(&self.labeled_queue, base.labeled_queue);
        let us = or_base(&self.unlabeled_queue, base.unlabeled_queue);
        let ms = if self.momentum.is_empty() {
            vec![base.momentum]
        } else {
            self.momentum.clone()
        };
        let losses = if self.loss.is_empty() {
            vec![base.loss]
        } else {
            self.loss.clone()
        };
        let mut cells =
            Vec::with_capacity(ls.len() * us.len() * ms.len() * losses.len() * seeds.len());
        for &labeled_queue in &ls {
            for &unlabeled_queue in &us {
                for &momentum in &ms {
                    for &loss in &losses {
                        for &seed in seeds {
                            cells.push(CellKey {
                                labeled_queue,
                                unlabeled_queue,
                                momentum,
                                loss,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub key: CellKey,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

/// Runs `cell` to completion; failures are captured in the row.
pub fn run_cell(
    key: CellKey,
    base: &TrainConfig,
    dataset: &Dataset,
    setup: &EvalSetup,
) -> AblationRow {
    match train_and_evaluate(&key.apply(base), dataset, setup) {
        Ok((_, record)) => AblationRow {
            key,
            record: Some(record),
            error: None,
        },
        Err(e) => AblationRow {
            key,
            record: Some(*e.record.clone()),
            error: Some(e.to_string()),
        },
    }
}

/// One train + evaluate per grid cell and seed. A failing cell is recorded
/// and the remaining cells still run.
pub fn run_ablation(
    base: &TrainConfig,
    grid: &AblationGrid,
    dataset: &Dataset,
    seeds: &[u64],
    setup: &EvalSetup,
) -> Result<Vec<AblationRow>> {
    Ok(grid
        .cells(base, seeds)?
        .into_iter()
        .map(|key| run_cell(key, base, dataset, setup))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_counts() {
        let base = TrainConfig::desk();
        let grid = AblationGrid {
            momentum: vec![0.0, 0.999],
            ..AblationGrid::default()
        };
        assert_eq!(grid.cells(&base, &[1, 2, 3]).unwrap().len(), 6);
        let grid = AblationGrid {
            labeled_queue: vec![64, 256],
            unlabeled_queue: vec![0, 256],
            ..AblationGrid::default()
        };
        let cells = grid.cells(&base, &[0]).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(
            (cells[1].labeled_queue, cells[1].unlabeled_queue),
            (64, 256)
        );
        assert!(AblationGrid::default().cells(&base, &[]).is_err());
        assert_eq!(AblationGrid::default().cells(&base, &[4]).unwrap().len(), 1);
    }
}

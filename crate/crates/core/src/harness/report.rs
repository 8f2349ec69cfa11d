//! Summary tables over finished runs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{LossKind, RunRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "### {}\n", self.name);
        let _ = writeln!(out, "| {} |", self.columns.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(self.columns.len()));
        for row in &self.rows {
            let _ = writeln!(out, "| {} |", row.join(" | "));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tables: Vec<Table>,
}

impl Summary {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Run summary\n\n");
        for t in &self.tables {
            out.push_str(&t.to_markdown());
            out.push('\n');
        }
        out
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn tail_loss(r: &RunRecord) -> f64 {
    let n = r.losses.len().min(50);
    mean(&r.losses[r.losses.len() - n..])
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

type GroupKey = (LossKind, usize, usize, u64);

fn group_key(r: &RunRecord) -> GroupKey {
    let c = &r.config;
    (
        c.loss,
        c.labeled_queue,
        c.unlabeled_queue,
        c.momentum.to_bits(),
    )
}

/// Builds the summary tables:
///
/// - `runs`: one row per record with its largest-gallery metrics;
/// - `gallery_sweep`: one row per record and gallery size;
/// - `grid`: seed-averaged metrics per (loss, L, U, m);
/// - `momentum`: seed-averaged rank-1/mAP (percent) per momentum for the
///   pairwise runs, one column per momentum;
/// - `unlabeled_sweep`: seed-averaged mAP per (loss, L), one column per U.
pub fn summarize(records: &[RunRecord]) -> Summary {
    let mut runs = Table::new(
        "runs",
        &[
            "loss",
            "L",
            "U",
            "m",
            "seed",
            "iterations",
            "final_loss",
            "gallery",
            "mAP",
            "rank1",
        ],
    );
    let mut sweep = Table::new(
        "gallery_sweep",
        &["loss", "L", "U", "m", "seed", "gallery", "mAP", "rank1"],
    );
    let mut groups: BTreeMap<GroupKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();

    for r in records {
        let c = &r.config;
        let head = r.headline();
        runs.rows.push(alloc::vec![
            c.loss.to_string(),
            c.labeled_queue.to_string(),
            c.unlabeled_queue.to_string(),
            c.momentum.to_string(),
            r.seed.to_string(),
            r.iterations.to_string(),
            fmt4(tail_loss(r)),
            head.map_or(String::new(), |h| h.gallery_size.to_string()),
            head.map_or(String::new(), |h| fmt4(h.map)),
            head.map_or(String::new(), |h| fmt4(h.rank1())),
        ]);
        for rep in &r.reports {
            sweep.rows.push(alloc::vec![
                c.loss.to_string(),
                c.labeled_queue.to_string(),
                c.unlabeled_queue.to_string(),
                c.momentum.to_string(),
                r.seed.to_string(),
                rep.gallery_size.to_string(),
                fmt4(rep.map),
                fmt4(rep.rank1()),
            ]);
        }
        if let Some(h) = head {
            let entry = groups.entry(group_key(r)).or_default();
            entry.0.push(h.map);
            entry.1.push(h.rank1());
        }
    }

    let mut grid = Table::new(
        "grid",
        &["loss", "L", "U", "m", "seeds", "mean_mAP", "mean_rank1"],
    );
    for ((loss, l, u, m), (maps, r1)) in &groups {
        grid.rows.push(alloc::vec![
            loss.to_string(),
            l.to_string(),
            u.to_string(),
            f64::from_bits(*m).to_string(),
            maps.len().to_string(),
            fmt4(mean(maps)),
            fmt4(mean(r1)),
        ]);
    }

    let mut by_momentum: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((loss, _, _, m), (maps, r1)) in &groups {
        if *loss == LossKind::Pairwise {
            let e = by_momentum.entry(*m).or_default();
            e.0.extend(maps);
            e.1.extend(r1);
        }
    }
    let m_labels: Vec<String> = by_momentum
        .keys()
        .map(|m| f64::from_bits(*m).to_string())
        .collect();
    let mut columns: Vec<&str> = alloc::vec!["m"];
    columns.extend(m_labels.iter().map(String::as_str));
    let mut momentum = Table::new("momentum", &columns);
    momentum.rows.push(
        core::iter::once("Rank-1".to_string())
            .chain(
                by_momentum
                    .values()
                    .map(|(_, r1)| format!("{:.1}", 100.0 * mean(r1))),
            )
            .collect(),
    );
    momentum.rows.push(
        core::iter::once("mAP".to_string())
            .chain(
                by_momentum
                    .values()
                    .map(|(maps, _)| format!("{:.1}", 100.0 * mean(maps))),
            )
            .collect(),
    );

    let u_values: BTreeSet<usize> = groups.keys().map(|k| k.2).collect();
    let u_labels: Vec<String> = u_values.iter().map(|u| format!("U={u}")).collect();
    let mut columns: Vec<&str> = alloc::vec!["loss", "L"];
    columns.extend(u_labels.iter().map(String::as_str));
    let mut unlabeled = Table::new("unlabeled_sweep", &columns);
    let mut by_lu: BTreeMap<(LossKind, usize), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for ((loss, l, u, _), (maps, _)) in &groups {
        by_lu
            .entry((*loss, *l))
            .or_default()
            .entry(*u)
            .or_default()
            .extend(maps);
    }
    for ((loss, l), per_u) in &by_lu {
        let mut row = alloc::vec![loss.to_string(), l.to_string()];
        row.extend(
            u_values
                .iter()
                .map(|u| per_u.get(u).map_or(String::new(), |v| fmt4(mean(v)))),
        );
        unlabeled.rows.push(row);
    }

    Summary {
        tables: alloc::vec![runs, sweep, grid, momentum, unlabeled],
    }
}

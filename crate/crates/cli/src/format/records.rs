//! Run records, evaluation reports and summary tables.

use std::fs;
use std::path::{Path, PathBuf};

use persearch_core::eval::EvalReport;
use persearch_core::harness::{RunRecord, Summary};
use persearch_core::IdentityId;
use serde::{Deserialize, Serialize};

use super::{read_json, write_json};
use crate::error::{CliError, Result};

pub const RUN_SCHEMA: &str = "persearch-run/1";
pub const EVAL_SCHEMA: &str = "persearch-eval/1";

/// `run_record.json`: the deterministic record plus the non-deterministic
/// envelope (wall time, abort reason).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub schema: String,
    pub wall_time_secs: f64,
    /// Set when the run aborted; `record` then holds the partial history.
    pub error: Option<String>,
    pub record: RunRecord,
}

impl RunFile {
    pub fn new(record: RunRecord, wall_time_secs: f64, error: Option<String>) -> Self {
        RunFile {
            schema: RUN_SCHEMA.to_string(),
            wall_time_secs,
            error,
            record,
        }
    }
}

pub fn save_run(path: &Path, run: &RunFile) -> Result<()> {
    write_json(path, run)
}

pub fn load_run(path: &Path) -> Result<RunFile> {
    let run: RunFile = read_json(path)?;
    if run.schema != RUN_SCHEMA {
        return Err(CliError::format(
            path,
            format!("schema `{}`, expected `{RUN_SCHEMA}`", run.schema),
        ));
    }
    Ok(run)
}

/// Run files under `inputs`: files are taken as given, directories are
/// searched recursively for `*.json` files carrying the run schema. Sorted by
/// path for a stable report order.
pub fn collect_runs(inputs: &[PathBuf]) -> Result<Vec<(PathBuf, RunFile)>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "json") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut runs = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut files = Vec::new();
            walk(input, &mut files)?;
            files.sort();
            for f in files {
                let text = fs::read_to_string(&f).map_err(|e| CliError::io(&f, e))?;
                if text.contains(RUN_SCHEMA) {
                    let run = load_run(&f)?;
                    runs.push((f, run));
                }
            }
        } else {
            let run = load_run(input)?;
            runs.push((input.clone(), run));
        }
    }
    Ok(runs)
}

/// Writes the evaluation CSV (schema `persearch-eval/1`).
///
/// Columns: `schema, gallery_size, row, query, identity, ap, first_hit,
/// cmc@k...`. For every gallery size there is one `query` row per query and
/// one `summary` row. In query rows `ap` is empty for an excluded query,
/// `first_hit` is the 1-based rank of the first true positive (empty when
/// none) and `cmc@k` is 1 or 0. In the summary row `ap` holds the mAP,
/// `first_hit` the number of excluded queries and `cmc@k` the CMC value.
pub fn write_eval_csv(path: &Path, reports: &[EvalReport], query_ids: &[IdentityId]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::format(path, e))?;
    let ks: Vec<usize> = reports
        .first()
        .map(|r| r.cmc.keys().copied().collect())
        .unwrap_or_default();
    let mut header: Vec<String> = [
        "schema",
        "gallery_size",
        "row",
        "query",
        "identity",
        "ap",
        "first_hit",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(ks.iter().map(|k| format!("cmc@{k}")));
    let err = |e: csv::Error| CliError::format(path, e);
    w.write_record(&header).map_err(err)?;
    for r in reports {
        for (q, identity) in query_ids.iter().enumerate() {
            let ap = r.per_query_ap.get(&q);
            let hit = r.first_hit.get(&q);
            let mut row = vec![
                EVAL_SCHEMA.to_string(),
                r.gallery_size.to_string(),
                "query".into(),
                q.to_string(),
                identity.0.to_string(),
                ap.map_or(String::new(), |v| v.to_string()),
                hit.map_or(String::new(), |v| v.to_string()),
            ];
            row.extend(ks.iter().map(|k| match (ap, hit) {
                (None, _) => String::new(),
                (Some(_), Some(&rank)) if rank <= *k => "1".into(),
                _ => "0".into(),
            }));
            w.write_record(&row).map_err(err)?;
        }
        let mut row = vec![
            EVAL_SCHEMA.to_string(),
            r.gallery_size.to_string(),
            "summary".into(),
            String::new(),
            String::new(),
            r.map.to_string(),
            r.excluded.len().to_string(),
        ];
        row.extend(
            ks.iter()
                .map(|k| r.cmc.get(k).copied().unwrap_or(0.0).to_string()),
        );
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `summary.md` plus one `summary_<table>.csv` per table in `dir`.
pub fn write_summary(dir: &Path, summary: &Summary) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let md = dir.join("summary.md");
    fs::write(&md, summary.to_markdown()).map_err(|e| CliError::io(&md, e))?;
    let mut written = vec![md];
    for table in &summary.tables {
        let path = dir.join(format!("summary_{}.csv", table.name));
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::format(&path, e))?;
        w.write_record(&table.columns)
            .map_err(|e| CliError::format(&path, e))?;
        for row in &table.rows {
            w.write_record(row)
                .map_err(|e| CliError::format(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

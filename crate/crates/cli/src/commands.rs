use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use persearch_core::data::{gen_dataset, Dataset};
use persearch_core::eval::EvalReport;
use persearch_core::harness::{self, run_cell, summarize, AblationRow, Summary};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::format::records::{self, RunFile};
use crate::format::{checkpoint, dataset};

pub const DATASET_DIR: &str = "dataset";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RUN_FILE: &str = "run_record.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const ABLATION_DIR: &str = "ablation";

/// A resolved config and the directory all outputs go to.
pub struct Context {
    pub config: Config,
    pub out_dir: PathBuf,
}

impl Context {
    pub fn new(config: Config, out_flag: Option<&Path>) -> Result<Self> {
        let out_dir = config.resolve_out_dir(out_flag);
        fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
        let snapshot = out_dir.join("config.toml");
        fs::write(&snapshot, config.to_toml()).map_err(|e| CliError::io(&snapshot, e))?;
        Ok(Context { config, out_dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// `data` if given, else `<out>/dataset` if present, else generated from
    /// the `[dataset]` section.
    pub fn dataset(&self, data: Option<&Path>) -> Result<Dataset> {
        let stored = self.path(DATASET_DIR);
        match data {
            Some(dir) => dataset::load(dir),
            None if stored.join(dataset::INDEX_FILE).is_file() => dataset::load(&stored),
            None => gen_dataset(&self.config.dataset)
                .map_err(|e| CliError::Config(format!("dataset: {e}"))),
        }
    }
}

pub fn gen_data(ctx: &Context) -> Result<PathBuf> {
    let ds =
        gen_dataset(&ctx.config.dataset).map_err(|e| CliError::Config(format!("dataset: {e}")))?;
    let dir = ctx.path(DATASET_DIR);
    dataset::save(&dir, &ds)?;
    eprintln!(
        "wrote {} train, {} query and {} gallery scenes to {}",
        ds.train.len(),
        ds.queries.len(),
        ds.gallery.len(),
        dir.display()
    );
    Ok(dir)
}

/// Trains, then evaluates unless `skip_eval`. The run record is written
/// even when training aborts.
pub fn train(ctx: &Context, data: Option<&Path>, skip_eval: bool) -> Result<RunFile> {
    let ds = ctx.dataset(data)?;
    let start = Instant::now();
    let trained = harness::train(&ctx.config.train, &ds);
    let (ck, mut record) = match trained {
        Ok(v) => v,
        Err(e) => {
            let run = RunFile::new(
                *e.record,
                start.elapsed().as_secs_f64(),
                Some(e.error.to_string()),
            );
            records::save_run(&ctx.path(RUN_FILE), &run)?;
            return Err(CliError::Train(e.error.to_string()));
        }
    };
    checkpoint::save(&ctx.path(CHECKPOINT_FILE), &ck)?;
    eprintln!("trained {} iterations", record.iterations);
    if !skip_eval {
        let reports = harness::evaluate_checkpoint(&ck, &ds, &ctx.config.eval)
            .map_err(|e| CliError::Eval(e.to_string()))?;
        write_reports(ctx, &ds, &reports)?;
        record.reports = reports;
    }
    let run = RunFile::new(record, start.elapsed().as_secs_f64(), None);
    records::save_run(&ctx.path(RUN_FILE), &run)?;
    Ok(run)
}

pub fn eval(
    ctx: &Context,
    checkpoint_path: Option<&Path>,
    data: Option<&Path>,
) -> Result<Vec<EvalReport>> {
    let path = checkpoint_path.map_or_else(|| ctx.path(CHECKPOINT_FILE), Path::to_path_buf);
    let ck = checkpoint::load(&path)?;
    let ds = ctx.dataset(data)?;
    let reports = harness::evaluate_checkpoint(&ck, &ds, &ctx.config.eval)
        .map_err(|e| CliError::Eval(e.to_string()))?;
    write_reports(ctx, &ds, &reports)?;
    Ok(reports)
}

fn write_reports(ctx: &Context, ds: &Dataset, reports: &[EvalReport]) -> Result<()> {
    let ids: Vec<_> = ds.queries.iter().map(|q| q.identity).collect();
    records::write_eval_csv(&ctx.path(EVAL_CSV), reports, &ids)?;
    for r in reports {
        eprintln!(
            "gallery {:>5}: mAP {:.4}  rank-1 {:.4}",
            r.gallery_size,
            r.map,
            r.rank1()
        );
    }
    Ok(())
}

fn cell_file_name(index: usize, row: &AblationRow) -> String {
    let k = &row.key;
    format!(
        "cell_{index:03}_{}_L{}_U{}_m{}_s{}.json",
        k.loss, k.labeled_queue, k.unlabeled_queue, k.momentum, k.seed
    )
}

/// Runs every grid cell, writes one run file per cell and the summary
/// tables. Fails with [`CliError::Ablation`] after writing if any cell failed.
pub fn ablate(ctx: &Context, data: Option<&Path>) -> Result<Summary> {
    let ds = ctx.dataset(data)?;
    let cfg = &ctx.config;
    let cells = cfg
        .ablation
        .grid
        .cells(&cfg.train, &cfg.ablation.seeds)
        .map_err(|e| CliError::Config(format!("ablation: {e}")))?;
    let dir = ctx.path(ABLATION_DIR);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let total = cells.len();
    let mut ok = Vec::new();
    let mut failed = 0;
    for (i, key) in cells.into_iter().enumerate() {
        let start = Instant::now();
        let row = run_cell(key, &cfg.train, &ds, &cfg.eval);
        let secs = start.elapsed().as_secs_f64();
        let record = row
            .record
            .clone()
            .expect("run_cell always returns a record");
        let head = record.headline().map_or(f64::NAN, |r| r.map);
        eprintln!(
            "[{}/{total}] {} L={} U={} m={} seed={}: {} ({secs:.1}s)",
            i + 1,
            key.loss,
            key.labeled_queue,
            key.unlabeled_queue,
            key.momentum,
            key.seed,
            row.error
                .as_deref()
                .map_or_else(|| format!("mAP {head:.4}"), |e| format!("FAILED {e}"))
        );
        if row.error.is_some() {
            failed += 1;
        } else {
            ok.push(record.clone());
        }
        records::save_run(
            &dir.join(cell_file_name(i, &row)),
            &RunFile::new(record, secs, row.error),
        )?;
    }
    let summary = summarize(&ok);
    records::write_summary(&dir, &summary)?;
    if failed > 0 {
        return Err(CliError::Ablation { failed, total });
    }
    Ok(summary)
}

/// Summarizes run files found under `inputs` (default: the output directory)
/// into `<out>/summary.md` and `<out>/summary_<table>.csv`.
pub fn report(ctx: &Context, inputs: &[PathBuf]) -> Result<Summary> {
    let inputs = if inputs.is_empty() {
        vec![ctx.out_dir.clone()]
    } else {
        inputs.to_vec()
    };
    let runs = records::collect_runs(&inputs)?;
    let usable: Vec<_> = runs
        .into_iter()
        .filter(|(_, r)| r.error.is_none())
        .map(|(_, r)| r.record)
        .collect();
    if usable.is_empty() {
        return Err(CliError::Config("no completed run records found".into()));
    }
    let summary = summarize(&usable);
    records::write_summary(&ctx.out_dir, &summary)?;
    Ok(summary)
}

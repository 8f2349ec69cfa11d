//! File formats written and read by the CLI.
//!
//! | file | schema | content |
//! |---|---|---|
//! | `dataset/dataset.json` + `dataset/images/*.psim` | `persearch-dataset/1` | see [`dataset`] |
//! | `checkpoint.json` | `persearch-checkpoint/1` | see [`checkpoint`] |
//! | `run_record.json` | `persearch-run/1` | see [`records`] |
//! | `eval.csv` | `persearch-eval/1` | see [`records::write_eval_csv`] |
//! | `summary.md`, `summary_<table>.csv` | | see [`records::write_summary`] |
//!
//! JSON floats are written in shortest round-trip form, so a file read back
//! reproduces the exact `f64` values.

pub mod checkpoint;
pub mod dataset;
pub mod image;
pub mod records;

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, value).map_err(|e| CliError::format(path, e))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::format(path, e))
}

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{EstimatorKind, ExperimentConfig, SweepVariable};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "sweep_variable,sweep_value,estimator,mean_nmse_db,stddev_db,trials,codebook_size,wall_time_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub estimator: EstimatorKind,
    #[serde(with = "crate::serde_ext::db")]
    pub mean_nmse_db: f64,
    pub stddev_db: f64,
    pub trials: usize,
    pub codebook_size: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, value: f64, estimator: EstimatorKind) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.sweep_value == value && r.estimator == estimator)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.variable.name(),
                r.sweep_value,
                r.estimator.name(),
                r.mean_nmse_db,
                r.stddev_db,
                r.trials,
                r.codebook_size,
                r.wall_time_s
            );
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct JsonMirror<C, R> {
    config: C,
    result: R,
}

/// JSON document holding the configuration next to a result.
pub fn to_json_document<R: Serialize>(config: &ExperimentConfig, result: &R) -> Result<String> {
    Ok(serde_json::to_string_pretty(&JsonMirror { config, result })?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write the CSV table and its JSON mirror; either path may be omitted.
pub fn emit_results(
    result: &SweepResult,
    config: &ExperimentConfig,
    csv_path: Option<&Path>,
    json_path: Option<&Path>,
) -> Result<()> {
    if let Some(p) = csv_path {
        write_file(p, &result.to_csv())?;
    }
    if let Some(p) = json_path {
        let mut doc = to_json_document(config, result)?;
        doc.push('\n');
        write_file(p, &doc)?;
    }
    Ok(())
}

/// Reload a JSON mirror written by [`emit_results`].
pub fn load_results(json_path: &Path) -> Result<(ExperimentConfig, SweepResult)> {
    let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let doc: JsonMirror<ExperimentConfig, SweepResult> = serde_json::from_str(&text)?;
    Ok((doc.config, doc.result))
}

/// Write `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    write_file(path, contents)
}

//! Subcommand implementations, callable from tests without a process.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tmlp::data::{load_csv, parse_schema, RawDataset};
use tmlp::ensemble::EnsembleError;
use tmlp::metrics::Metrics;
use tmlp::pipeline::{fit, BranchReport, PipelineError, TmlpModel};

use crate::analysis::{boundary_grid, frequency_table, grid_table, prediction_table, write_csv, FixPolicy};
use crate::bundle;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SplitMetrics {
    pub train: Metrics,
    pub valid: Metrics,
    pub test: Option<Metrics>,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Metrics report written next to the model file.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Report {
    /// Fully resolved configuration; training again from it reproduces
    /// the metrics.
    pub config: RunConfig,
    pub metrics: SplitMetrics,
    pub rows: SplitSizes,
    pub wall_time_seconds: f64,
    /// Mean expected retained ratio over branches.
    pub retained_ratio: f64,
    pub branches: Vec<BranchReport>,
}

pub struct TrainResult {
    pub report: Report,
    pub model: TmlpModel,
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("missing {what}")))
}

/// Trains from a config, writes the model file and report if an output
/// path is set, and returns both.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainResult, CliError> {
    let start = Instant::now();
    let schema = parse_schema(required(&cfg.schema, "--schema")?)?;
    let raw = load_csv(required(&cfg.data, "--data")?, &schema, true)?;
    let split = cfg.split_spec()?.resolve(raw.n_rows, raw.labels(), cfg.fit.train.seed)?;
    let (tr, va, te) = (raw.select(&split.train), raw.select(&split.valid), raw.select(&split.test));
    if va.n_rows == 0 {
        return Err(CliError::Config("the validation split is empty".into()));
    }
    let fitted = fit(&schema, &tr, &va, &cfg.fit)?;
    let model = fitted.model;
    let test = if te.n_rows > 0 { Some(model.evaluate(&te)?) } else { None };
    let metrics = SplitMetrics {
        train: model.evaluate(&tr)?,
        valid: model.evaluate(&va)?,
        test,
    };
    let n = fitted.branches.len() as f64;
    let report = Report {
        config: cfg.clone(),
        metrics,
        rows: SplitSizes {
            train: tr.n_rows,
            valid: va.n_rows,
            test: te.n_rows,
        },
        wall_time_seconds: start.elapsed().as_secs_f64(),
        retained_ratio: fitted.branches.iter().map(|b| b.retained_ratio).sum::<f64>() / n,
        branches: fitted.branches,
    };
    if let Some(out) = &cfg.out {
        bundle::save(&model, out)?;
    }
    if let Some(path) = cfg.report_path() {
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(TrainResult { report, model })
}

fn load_input(model: &TmlpModel, data: &Path) -> Result<RawDataset, CliError> {
    Ok(load_csv(data, &model.schema, false)?)
}

/// Writes one prediction row per input row; returns the row count.
pub fn cmd_predict(model_path: &Path, data: &Path, out: &Path) -> Result<usize, CliError> {
    let model = bundle::load(model_path)?;
    let raw = load_input(&model, data)?;
    let pred = model.predict(&raw)?;
    let (header, rows) = prediction_table(&model, &pred);
    write_csv(out, &header, &rows)?;
    Ok(rows.len())
}

pub fn cmd_eval(model_path: &Path, data: &Path) -> Result<Metrics, CliError> {
    let model = bundle::load(model_path)?;
    let raw = load_input(&model, data)?;
    if raw.targets.is_none() {
        return Err(CliError::LabelColumnMissing(model.schema.target_column.clone()));
    }
    Ok(model.evaluate(&raw)?)
}

pub fn cmd_export_frequency(model_path: &Path, data: &Path, out: &Path) -> Result<usize, CliError> {
    let model = bundle::load(model_path)?;
    let raw = load_input(&model, data)?;
    let alpha = model.frequencies(&raw).map_err(|e| match e {
        PipelineError::Ensemble(EnsembleError::GateAbsent) => CliError::GateAbsent,
        e => e.into(),
    })?;
    let (header, rows) = frequency_table(&model, &alpha);
    write_csv(out, &header, &rows)?;
    Ok(rows.len())
}

pub fn cmd_boundary(model_path: &Path, feat_x: &str, feat_y: &str, resolution: usize, fix: FixPolicy, out: &Path) -> Result<usize, CliError> {
    let model = bundle::load(model_path)?;
    let grid = boundary_grid(&model, feat_x, feat_y, resolution, fix)?;
    let pred = model.predict(&grid.rows)?;
    let (header, rows) = grid_table(&model, feat_x, feat_y, &grid, &pred);
    write_csv(out, &header, &rows)?;
    Ok(rows.len())
}

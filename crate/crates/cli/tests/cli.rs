use std::path::{Path, PathBuf};
use std::process::Command;

use tmlp::data::{load_csv, FeatureSchema, RawDataset, RawTargets};
use tmlp::pipeline::Prediction;
use tmlp::synthetic::{informative_binary, mixed_regression, to_csv};
use tmlp_cli::analysis::{without_targets, FixPolicy};
use tmlp_cli::bundle::{self, BundleError};
use tmlp_cli::commands::{cmd_boundary, cmd_eval, cmd_export_frequency, cmd_predict, cmd_train, Report};
use tmlp_cli::{CliError, RunConfig};

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_table(&self, name: &str, schema: &FeatureSchema, raw: &RawDataset) -> (PathBuf, PathBuf) {
        let data = self.path(&format!("{name}.csv"));
        std::fs::write(&data, to_csv(schema, raw).unwrap()).unwrap();
        let schema_path = self.path(&format!("{name}.schema.json"));
        std::fs::write(&schema_path, serde_json::to_string(schema).unwrap()).unwrap();
        (data, schema_path)
    }

    fn config(&self, name: &str, schema: &FeatureSchema, raw: &RawDataset) -> RunConfig {
        let (data, schema_path) = self.write_table(name, schema, raw);
        let mut cfg = RunConfig::default();
        let t = &mut cfg.fit.train;
        t.d = 16;
        t.d_ff = 12;
        t.batch_size = 64;
        t.max_epochs = 4;
        t.learning_rate = 1e-3;
        cfg.fit.gbdt.n_rounds = 10;
        cfg.fit.threads = Some(1);
        cfg.data = Some(data);
        cfg.schema = Some(schema_path);
        cfg.out = Some(self.path(&format!("{name}.tmlp")));
        cfg
    }
}

fn regression_run(ws: &Workspace) -> (RunConfig, Report) {
    let (schema, raw) = mixed_regression(300, 0.2, 1).unwrap();
    let cfg = ws.config("reg", &schema, &raw);
    let report = cmd_train(&cfg).unwrap().report;
    (cfg, report)
}

fn out(cfg: &RunConfig) -> &Path {
    cfg.out.as_deref().unwrap()
}

#[test]
fn model_file_header() {
    let ws = Workspace::new();
    let (cfg, _) = regression_run(&ws);
    let bytes = std::fs::read(out(&cfg)).unwrap();
    assert_eq!(&bytes[..4], b"TMLP");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let meta: serde_json::Value = serde_json::from_slice(&bytes[16..16 + meta_len]).unwrap();
    let arrays = meta["branches"][0]["arrays"].as_array().unwrap();
    let offsets: Vec<u64> = arrays.iter().map(|a| a["offset"].as_u64().unwrap()).collect();
    assert!(offsets.windows(2).all(|w| w[0] < w[1]));
    assert!(meta["gate"]["trees"].is_array());
}

#[test]
fn report_is_written_and_complete() {
    let ws = Workspace::new();
    let (cfg, report) = regression_run(&ws);
    let text = std::fs::read_to_string(cfg.report_path().unwrap()).unwrap();
    let back: Report = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
    assert!(report.metrics.test.unwrap().rmse.unwrap() > 0.0);
    assert_eq!(report.rows.train + report.rows.valid + report.rows.test, 300);
    assert!(report.wall_time_seconds > 0.0);
    assert_eq!(report.branches.len(), 1);
    assert_eq!(report.branches[0].w1_shape, (5, 8));
}

#[test]
fn config_echo_reproduces_metrics() {
    let ws = Workspace::new();
    let (cfg, report) = regression_run(&ws);
    let echo = ws.path("echo.json");
    let mut again = report.config.clone();
    again.out = Some(ws.path("again.tmlp"));
    again.report = None;
    std::fs::write(&echo, serde_json::to_string(&again).unwrap()).unwrap();
    let rerun = cmd_train(&RunConfig::from_file(&echo).unwrap()).unwrap().report;
    assert_eq!(rerun.metrics, report.metrics);
    assert_eq!(std::fs::read(out(&cfg)).unwrap(), std::fs::read(ws.path("again.tmlp")).unwrap());
}

#[test]
fn ablation_keeps_the_full_width() {
    let ws = Workspace::new();
    let (schema, raw) = mixed_regression(200, 0.2, 2).unwrap();
    let mut cfg = ws.config("abl", &schema, &raw);
    cfg.fit.train.gate_enabled = false;
    cfg.fit.train.sparsity_enabled = false;
    let full = cmd_train(&cfg).unwrap();
    let default = cmd_train(&ws.config("def", &schema, &raw)).unwrap();
    let w1 = |r: &tmlp_cli::commands::TrainResult| r.model.bundle.branches[0].params.blocks[0].w1.shape();
    assert_eq!(w1(&full), (16, 24));
    assert!(w1(&full).0 * w1(&full).1 > w1(&default).0 * w1(&default).1);
    assert!(full.model.bundle.gate.is_none());
}

#[test]
fn round_trip_is_bitwise() {
    let ws = Workspace::new();
    let (schema, raw) = mixed_regression(200, 0.2, 3).unwrap();
    let cfg = ws.config("rt", &schema, &raw);
    let trained = cmd_train(&cfg).unwrap().model;
    let loaded = bundle::load(out(&cfg)).unwrap();
    assert_eq!(loaded, trained);
    assert_eq!(loaded.predict(&raw).unwrap(), trained.predict(&raw).unwrap());
    assert_eq!(bundle::to_bytes(&loaded).unwrap(), std::fs::read(out(&cfg)).unwrap());
}

#[test]
fn damaged_files_are_corrupt() {
    let ws = Workspace::new();
    let (cfg, _) = regression_run(&ws);
    let bytes = std::fs::read(out(&cfg)).unwrap();
    let cases: Vec<Vec<u8>> = vec![
        bytes[..bytes.len() - 3].to_vec(),
        bytes[..10].to_vec(),
        [b"XMLP".as_slice(), &bytes[4..]].concat(),
        [bytes.as_slice(), &[0u8; 4]].concat(),
    ];
    for case in cases {
        assert!(matches!(bundle::from_bytes(&case), Err(BundleError::CorruptModel(_))));
    }
    let truncated = ws.path("trunc.tmlp");
    std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let err = cmd_eval(&truncated, cfg.data.as_ref().unwrap()).unwrap_err();
    assert_eq!(err.code(), "CORRUPT_MODEL");
}

#[test]
fn predict_writes_one_row_per_input() {
    let ws = Workspace::new();
    let (cfg, _) = regression_run(&ws);
    let (schema, raw) = mixed_regression(3, 0.2, 9).unwrap();
    let unlabeled = without_targets(&raw);
    let (input, _) = ws.write_table("three", &schema, &unlabeled);
    let preds = ws.path("preds.csv");
    assert_eq!(cmd_predict(out(&cfg), &input, &preds).unwrap(), 3);
    let text = std::fs::read_to_string(&preds).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "prediction");
}

#[test]
fn classification_predictions_carry_probabilities() {
    let ws = Workspace::new();
    let (schema, raw) = informative_binary(300, 2, 4).unwrap();
    let cfg = ws.config("bin", &schema, &raw);
    let report = cmd_train(&cfg).unwrap().report;
    let test = report.metrics.test.unwrap();
    assert!(test.accuracy.is_some() && test.auc.is_some() && test.rmse.is_none());
    let preds = ws.path("bin_preds.csv");
    cmd_predict(out(&cfg), cfg.data.as_ref().unwrap(), &preds).unwrap();
    let mut rdr = csv::Reader::from_path(&preds).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), vec!["prediction", "p_0", "p_1"]);
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let p: f64 = rec[1].parse::<f64>().unwrap() + rec[2].parse::<f64>().unwrap();
        assert!((p - 1.0).abs() < 1e-6);
    }
}

#[test]
fn eval_needs_labels_and_scores_in_target_units() {
    let ws = Workspace::new();
    let (cfg, report) = regression_run(&ws);
    let metrics = cmd_eval(out(&cfg), cfg.data.as_ref().unwrap()).unwrap();
    assert!(metrics.rmse.unwrap() > 0.0);
    let (schema, raw) = mixed_regression(5, 0.2, 9).unwrap();
    let (input, _) = ws.write_table("nolabel", &schema, &without_targets(&raw));
    let err = cmd_eval(out(&cfg), &input).unwrap_err();
    assert_eq!(err.code(), "LABEL_COLUMN_MISSING");
    let _ = report;
}

#[test]
fn eval_on_own_predictions_is_perfect() {
    let ws = Workspace::new();
    let (cfg, _) = regression_run(&ws);
    let model = bundle::load(out(&cfg)).unwrap();
    let (schema, raw) = mixed_regression(20, 0.2, 11).unwrap();
    let Prediction::Values(v) = model.predict(&raw).unwrap() else { panic!("regression") };
    let mut relabeled = raw.clone();
    relabeled.targets = Some(RawTargets::Real(v));
    let (input, _) = ws.write_table("own", &schema, &relabeled);
    let m = cmd_eval(out(&cfg), &input).unwrap();
    assert!(m.rmse.unwrap() < 1e-5);
}

#[test]
fn frequencies_are_bounded_and_named() {
    let ws = Workspace::new();
    let (cfg, _) = regression_run(&ws);
    let freq = ws.path("freq.csv");
    assert_eq!(cmd_export_frequency(out(&cfg), cfg.data.as_ref().unwrap(), &freq).unwrap(), 300);
    let mut rdr = csv::Reader::from_path(&freq).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), vec!["n0", "n1", "n2", "n3", "n4", "n5", "color", "size"]);
    let mut any_positive = false;
    for rec in rdr.records() {
        for v in rec.unwrap().iter() {
            let v: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
            any_positive |= v > 0.0;
        }
    }
    assert!(any_positive);
}

#[test]
fn constant_target_gives_zero_frequencies() {
    let ws = Workspace::new();
    let (schema, mut raw) = mixed_regression(100, 0.0, 5).unwrap();
    raw.targets = Some(RawTargets::Real(vec![5.0; 100]));
    let cfg = ws.config("const", &schema, &raw);
    cmd_train(&cfg).unwrap();
    let model = bundle::load(out(&cfg)).unwrap();
    assert!(model.bundle.gate.as_ref().unwrap().trees.iter().all(|t| t.n_nodes() == 1));
    let freq = ws.path("const_freq.csv");
    cmd_export_frequency(out(&cfg), cfg.data.as_ref().unwrap(), &freq).unwrap();
    let text = std::fs::read_to_string(freq).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').all(|v| v.parse::<f64>().unwrap() == 0.0)));
}

#[test]
fn frequency_export_needs_a_gate() {
    let ws = Workspace::new();
    let (schema, raw) = mixed_regression(100, 0.2, 6).unwrap();
    let mut cfg = ws.config("nogate", &schema, &raw);
    cfg.fit.train.gate_enabled = false;
    cmd_train(&cfg).unwrap();
    let err = cmd_export_frequency(out(&cfg), cfg.data.as_ref().unwrap(), &ws.path("f.csv")).unwrap_err();
    assert!(matches!(err, CliError::GateAbsent));
}

#[test]
fn boundary_grid_shape_and_cross_check() {
    let ws = Workspace::new();
    let (cfg, _) = regression_run(&ws);
    let grid = ws.path("grid.csv");
    assert_eq!(cmd_boundary(out(&cfg), "n0", "n1", 3, FixPolicy::MedianMode, &grid).unwrap(), 9);
    assert_eq!(cmd_boundary(out(&cfg), "n0", "n1", 1, FixPolicy::MedianMode, &ws.path("g1.csv")).unwrap(), 1);

    // rebuild the grid rows as an input table and predict them
    let model = bundle::load(out(&cfg)).unwrap();
    let built = tmlp_cli::analysis::boundary_grid(&model, "n0", "n1", 3, FixPolicy::MedianMode).unwrap();
    let (input, _) = ws.write_table("gridrows", &model.schema, &built.rows);
    let preds = ws.path("grid_preds.csv");
    cmd_predict(out(&cfg), &input, &preds).unwrap();
    let grid_text = std::fs::read_to_string(&grid).unwrap();
    let pred_text = std::fs::read_to_string(&preds).unwrap();
    let grid_vals: Vec<&str> = grid_text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    let pred_vals: Vec<&str> = pred_text.lines().skip(1).collect();
    assert_eq!(grid_vals, pred_vals);
    let header = grid_text.lines().next().unwrap();
    assert_eq!(header, "n0,n1,prediction");
    // x varies fastest over the training range
    let first: Vec<f64> = grid_text.lines().nth(1).unwrap().split(',').take(2).map(|v| v.parse().unwrap()).collect();
    let summary = &model.preprocessor.num_summary;
    assert_eq!(first, vec![summary[0].min, summary[1].min]);
}

#[test]
fn boundary_rejects_categorical_features() {
    let ws = Workspace::new();
    let (cfg, _) = regression_run(&ws);
    let err = cmd_boundary(out(&cfg), "n0", "color", 3, FixPolicy::MedianMode, &ws.path("g.csv")).unwrap_err();
    assert_eq!(err.code(), "NON_NUMERICAL_FEATURE");
}

#[test]
fn constant_model_gives_a_constant_grid() {
    let ws = Workspace::new();
    let (cfg, _) = regression_run(&ws);
    let mut model = bundle::load(out(&cfg)).unwrap();
    for b in &mut model.bundle.branches {
        b.params.head.w.as_mut_slice().fill(0.0);
    }
    let flat = ws.path("flat.tmlp");
    bundle::save(&model, &flat).unwrap();
    let grid = ws.path("flat_grid.csv");
    cmd_boundary(&flat, "n2", "n3", 4, FixPolicy::MedianMode, &grid).unwrap();
    let text = std::fs::read_to_string(grid).unwrap();
    let vals: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(vals.len(), 16);
    assert!(vals.iter().all(|v| *v == vals[0]));
}

#[test]
fn ensemble_run_stores_three_branches() {
    let ws = Workspace::new();
    let (schema, raw) = informative_binary(200, 2, 7).unwrap();
    let mut cfg = ws.config("ens", &schema, &raw);
    cfg.fit.ensemble = true;
    cfg.fit.train.max_epochs = 2;
    let result = cmd_train(&cfg).unwrap();
    assert_eq!(result.report.branches.len(), 3);
    let loaded = bundle::load(out(&cfg)).unwrap();
    assert_eq!(loaded.bundle.learning_rates, vec![1e-4, 5e-4, 1e-3]);
    assert_eq!(loaded, result.model);
}

#[test]
fn missing_schema_columns_are_a_schema_mismatch() {
    let ws = Workspace::new();
    let (cfg, _) = regression_run(&ws);
    let bad = ws.path("bad.csv");
    std::fs::write(&bad, "n0,n1\n1,2\n").unwrap();
    let err = cmd_predict(out(&cfg), &bad, &ws.path("p.csv")).unwrap_err();
    assert_eq!(err.code(), "SCHEMA_MISMATCH");
    let schema = bundle::load(out(&cfg)).unwrap().schema;
    assert!(load_csv(&bad, &schema, false).is_err());
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tmlp"))
}

fn single_error_line(output: &std::process::Output, code: &str) {
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    assert!(lines[0].starts_with(&format!("error[{code}]: ")), "{stderr}");
}

#[test]
fn process_errors_are_one_prefixed_line() {
    let ws = Workspace::new();
    let missing = binary().args(["eval", "--model", "/nonexistent/m.tmlp", "--data", "/nonexistent/x.csv"]).output().unwrap();
    single_error_line(&missing, "IO");
    let usage = binary().args(["train", "--bogus"]).output().unwrap();
    single_error_line(&usage, "USAGE");
    let garbage = ws.path("garbage.tmlp");
    std::fs::write(&garbage, b"not a model at all").unwrap();
    let corrupt = binary()
        .args(["predict", "--model", garbage.to_str().unwrap(), "--data", "x.csv", "--out", "y.csv"])
        .output()
        .unwrap();
    single_error_line(&corrupt, "CORRUPT_MODEL");
    let no_data = binary().args(["train"]).output().unwrap();
    single_error_line(&no_data, "CONFIG");
}

#[test]
fn process_train_and_predict() {
    let ws = Workspace::new();
    let (schema, raw) = mixed_regression(150, 0.2, 8).unwrap();
    let (data, schema_path) = ws.write_table("proc", &schema, &raw);
    let config = ws.path("run.toml");
    std::fs::write(&config, "d = 8\nd_ff = 6\nmax_epochs = 2\nbatch_size = 32\n[gbdt]\nn_rounds = 3\n").unwrap();
    let model = ws.path("proc.tmlp");
    let status = binary()
        .args(["train", "--config", config.to_str().unwrap(), "--data", data.to_str().unwrap(), "--schema", schema_path.to_str().unwrap()])
        .args(["--out", model.to_str().unwrap(), "--sparsity", "0.5", "--seed", "3", "--blocks", "2", "--split", "0.7,0.2,0.1"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let metrics: serde_json::Value = serde_json::from_slice(&status.stdout).unwrap();
    assert!(metrics["test"]["rmse"].as_f64().unwrap() > 0.0);
    let report: Report = serde_json::from_str(&std::fs::read_to_string(ws.path("proc.tmlp.json")).unwrap()).unwrap();
    assert_eq!(report.config.fit.train.target_sparsity, 0.5);
    assert_eq!(report.config.fit.train.n_blocks, Some(2));
    assert_eq!(report.config.fit.train.d, 8);
    assert_eq!(report.rows.train, 105);
    let preds = ws.path("proc_preds.csv");
    let p = binary()
        .args(["predict", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", preds.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(p.status.success());
    assert_eq!(std::fs::read_to_string(preds).unwrap().lines().count(), 151);
}

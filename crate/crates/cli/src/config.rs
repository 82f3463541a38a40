//! Run configuration: every training knob plus file locations, loadable
//! from TOML or JSON and overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tmlp::data::SplitIndices;
use tmlp::pipeline::FitConfig;

use crate::error::CliError;

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub fit: FitConfig,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// `"train,valid,test"` fractions, or a JSON file of row indices.
    pub split: String,
    /// Model file to write.
    pub out: Option<PathBuf>,
    /// Metrics report; defaults to the model path with `.json` appended.
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            data: None,
            schema: None,
            split: "0.8,0.1,0.1".into(),
            out: None,
            report: None,
        }
    }
}

/// How rows are divided into train/valid/test.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitSpec {
    Fractions([f64; 3]),
    Indices(PathBuf),
}

impl SplitSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() == 3 {
            if let Ok(v) = parts.iter().map(|p| p.parse::<f64>()).collect::<Result<Vec<_>, _>>() {
                return Ok(SplitSpec::Fractions([v[0], v[1], v[2]]));
            }
        }
        if Path::new(text).extension().is_some_and(|e| e == "json") {
            return Ok(SplitSpec::Indices(text.into()));
        }
        Err(CliError::Config(format!("split must be three fractions or a .json index file, got {text:?}")))
    }

    pub fn resolve(&self, n_rows: usize, labels: Option<&[String]>, seed: u64) -> Result<SplitIndices, CliError> {
        Ok(match self {
            SplitSpec::Fractions(f) => tmlp::data::split(n_rows, labels, *f, seed)?,
            SplitSpec::Indices(path) => SplitIndices::load(path, n_rows)?,
        })
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| CliError::Config(e.to_string().replace('\n', " "))),
            Some("json") => serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string())),
            _ => Err(CliError::Config(format!("{}: config must be .toml or .json", path.display()))),
        }
    }

    pub fn split_spec(&self) -> Result<SplitSpec, CliError> {
        SplitSpec::parse(&self.split)
    }

    pub fn report_path(&self) -> Option<PathBuf> {
        self.report.clone().or_else(|| {
            self.out.as_ref().map(|o| {
                let mut s = o.clone().into_os_string();
                s.push(".json");
                s.into()
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = RunConfig::default();
        let t = &c.fit.train;
        assert_eq!((t.d, t.d_ff), (1024, 676));
        assert_eq!(t.target_sparsity, 0.33);
        assert_eq!(t.residual_dropout, 0.1);
        assert_eq!(t.learning_rate, 1e-4);
        assert!(t.gate_enabled && t.sparsity_enabled);
        assert_eq!(c.fit.ensemble_learning_rates, vec![1e-4, 5e-4, 1e-3]);
        assert!(!c.fit.ensemble);
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: RunConfig = toml::from_str("d = 32\nsparsity_enabled = false\nsplit = \"0.6,0.2,0.2\"\n[gbdt]\nn_rounds = 5\n").unwrap();
        assert_eq!(c.fit.train.d, 32);
        assert_eq!(c.fit.train.d_ff, 676);
        assert!(!c.fit.train.sparsity_enabled);
        assert_eq!(c.fit.gbdt.n_rounds, 5);
        assert_eq!(c.fit.gbdt.max_depth, 6);
        assert_eq!(c.split_spec().unwrap(), SplitSpec::Fractions([0.6, 0.2, 0.2]));
    }

    #[test]
    fn json_round_trip() {
        let mut c = RunConfig::default();
        c.fit.train.n_blocks = Some(2);
        c.out = Some("m.tmlp".into());
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.report_path().unwrap(), PathBuf::from("m.tmlp.json"));
    }

    #[test]
    fn split_specs() {
        assert_eq!(SplitSpec::parse("idx.json").unwrap(), SplitSpec::Indices("idx.json".into()));
        assert!(SplitSpec::parse("0.5,0.5").is_err());
    }
}

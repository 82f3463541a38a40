//! End-to-end fitting: preprocessing, the tree gate, frequency caching,
//! network training and pruned export, plus prediction on raw tables.

use serde::{Deserialize, Serialize};

use crate::data::{DataError, Dataset, FeatureSchema, Preprocessor, RawDataset, RawTargets, TaskType};
use crate::ensemble::{train_ensemble, BranchSpec, EnsembleBundle, EnsembleError, BRANCH_LEARNING_RATES};
use crate::gbdt::{fit_gbdt, GbdtConfig, GbdtError};
use crate::metrics::{accuracy, argmax_rows, rmse, roc_auc, MetricError, Metrics};
use crate::model::{export_pruned, EpochLog, ModelError, Streams, TmlpParams, TrainConfig, TrainData};
use crate::nn::Matrix;
use crate::tensorize::{CompiledModel, FrequencyCache, TensorizeError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error(transparent)]
    Tensorize(#[from] TensorizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("the table has no target column")]
    LabelColumnMissing,
}

/// Everything that controls a fit besides the data.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct FitConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub gbdt: GbdtConfig,
    /// Train the three-branch ensemble instead of a single network.
    pub ensemble: bool,
    pub ensemble_learning_rates: Vec<f64>,
    /// Worker cap for ensemble branches; `None` reads `TMLP_THREADS`.
    pub threads: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            gbdt: GbdtConfig::default(),
            ensemble: false,
            ensemble_learning_rates: BRANCH_LEARNING_RATES.to_vec(),
            threads: None,
        }
    }
}

impl FitConfig {
    pub fn branch_specs(&self) -> Vec<BranchSpec> {
        if self.ensemble {
            BranchSpec::from_rates(&self.ensemble_learning_rates)
        } else {
            BranchSpec::from_rates(&[self.train.learning_rate])
        }
    }
}

/// A trained model together with what is needed to read raw tables.
#[derive(Clone, Debug, PartialEq)]
pub struct TmlpModel {
    pub schema: FeatureSchema,
    pub preprocessor: Preprocessor,
    pub config: FitConfig,
    pub bundle: EnsembleBundle,
}

/// Summary of one trained branch.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct BranchReport {
    pub learning_rate: f64,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_valid_metric: Option<f64>,
    /// Expected retained ratio at the selected epoch.
    pub retained_ratio: f64,
    pub w1_shape: (usize, usize),
    pub w2_shape: (usize, usize),
    pub history: Vec<EpochLog>,
}

pub struct Fitted {
    pub model: TmlpModel,
    pub branches: Vec<BranchReport>,
    /// Frequencies of the train and valid splits, computed once.
    pub cache: FrequencyCache,
}

/// Model outputs on a raw table.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Classes {
        labels: Vec<String>,
        /// `N × C`, columns in the order of the model's class list.
        probabilities: Matrix<f32>,
    },
    Values(Vec<f64>),
}

impl Prediction {
    pub fn len(&self) -> usize {
        match self {
            Prediction::Classes { labels, .. } => labels.len(),
            Prediction::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn train_view<'a>(ds: &'a Dataset, alpha: Option<&'a Matrix<f32>>) -> Result<TrainData<'a>, PipelineError> {
    Ok(TrainData {
        x_num: &ds.x_num,
        x_cat: &ds.x_cat,
        y: ds.targets()?,
        alpha_hat: alpha,
    })
}

/// Fits the preprocessor and the gate on `raw_train`, then trains the
/// network (or ensemble) with early stopping on `raw_valid`.
pub fn fit(schema: &FeatureSchema, raw_train: &RawDataset, raw_valid: &RawDataset, cfg: &FitConfig) -> Result<Fitted, PipelineError> {
    cfg.train.validate()?;
    let task = schema.task;
    let mut prep = Preprocessor::new();
    prep.fit(raw_train, task)?;
    let train_ds = prep.transform(raw_train)?;
    let valid_ds = prep.transform(raw_valid)?;
    let n_classes = prep.n_classes();

    let mut cache = FrequencyCache::new();
    let gate = if cfg.train.gate_enabled {
        let fit = fit_gbdt(&train_ds, Some(&valid_ds), task, n_classes, &cfg.gbdt)?;
        let compiled = CompiledModel::new(&fit.model)?;
        cache.build(&compiled, "train", &train_ds.tree_features())?;
        cache.build(&compiled, "valid", &valid_ds.tree_features())?;
        Some(fit.model)
    } else {
        None
    };
    let (train_alpha, valid_alpha) = if gate.is_some() {
        (Some(cache.get("train")?), Some(cache.get("valid")?))
    } else {
        (None, None)
    };

    let arch = cfg.train.arch(task, schema.n_numerical(), prep.cat_cardinalities(), n_classes, train_ds.len());
    let init = TmlpParams::<f32>::init(arch, &mut Streams::new(cfg.train.seed, 0).stream(Streams::INIT));
    let specs = cfg.branch_specs();
    let threads = cfg.threads.unwrap_or_else(crate::ensemble::worker_count);
    let outcomes = train_ensemble(
        &init,
        &train_view(&train_ds, train_alpha)?,
        &train_view(&valid_ds, valid_alpha)?,
        &cfg.train,
        &specs,
        threads,
    )?;

    let keep = if cfg.train.sparsity_enabled { cfg.train.target_sparsity } else { 1.0 };
    let mut branches = Vec::new();
    let mut reports = Vec::new();
    for (spec, out) in specs.iter().zip(&outcomes) {
        let pruned = export_pruned(&out.params, keep)?;
        let b0 = &pruned.params.blocks[0];
        reports.push(BranchReport {
            learning_rate: spec.learning_rate,
            epochs: out.history.len(),
            best_epoch: out.best_epoch,
            best_valid_metric: out.best_metric,
            retained_ratio: out.retained_ratio,
            w1_shape: b0.w1.shape(),
            w2_shape: b0.w2.shape(),
            history: out.history.clone(),
        });
        branches.push(pruned);
    }
    let bundle = EnsembleBundle::new(gate, branches, specs.iter().map(|s| s.learning_rate).collect())?;
    Ok(Fitted {
        model: TmlpModel {
            schema: schema.clone(),
            preprocessor: prep,
            config: cfg.clone(),
            bundle,
        },
        branches: reports,
        cache,
    })
}

impl TmlpModel {
    pub fn task(&self) -> TaskType {
        self.schema.task
    }

    /// Preprocesses a raw table with the fitted statistics.
    pub fn prepare(&self, raw: &RawDataset) -> Result<Dataset, PipelineError> {
        let mut unlabeled = raw.clone();
        unlabeled.targets = None;
        Ok(self.preprocessor.transform(&unlabeled)?)
    }

    /// Ensemble output on preprocessed rows: probabilities, or values in
    /// the original target units.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Prediction, PipelineError> {
        let out = self.bundle.predict(data, self.config.train.eval_batch_size)?;
        Ok(self.finish(out))
    }

    fn finish(&self, out: Matrix<f32>) -> Prediction {
        if self.task().is_classification() {
            let classes = &self.preprocessor.classes;
            Prediction::Classes {
                labels: argmax_rows(&out).into_iter().map(|c| classes[c].clone()).collect(),
                probabilities: out,
            }
        } else {
            Prediction::Values(
                (0..out.rows())
                    .map(|r| self.preprocessor.destandardize_target(out.get(r, 0) as f64))
                    .collect(),
            )
        }
    }

    pub fn predict(&self, raw: &RawDataset) -> Result<Prediction, PipelineError> {
        self.predict_dataset(&self.prepare(raw)?)
    }

    /// Normalized tree frequencies of a raw table.
    pub fn frequencies(&self, raw: &RawDataset) -> Result<Matrix<f32>, PipelineError> {
        Ok(self.bundle.frequencies(&self.prepare(raw)?)?)
    }

    /// ACC (and AUC for binary tasks) or RMSE in target units.
    pub fn evaluate(&self, raw: &RawDataset) -> Result<Metrics, PipelineError> {
        let targets = raw.targets.as_ref().ok_or(PipelineError::LabelColumnMissing)?;
        let pred = self.predict(raw)?;
        score(&self.preprocessor, &pred, targets)
    }
}

/// Scores predictions against raw targets.
pub fn score(prep: &Preprocessor, pred: &Prediction, targets: &RawTargets) -> Result<Metrics, PipelineError> {
    match (pred, targets) {
        (Prediction::Values(v), RawTargets::Real(y)) => Ok(Metrics {
            rmse: Some(rmse(v, y)?),
            ..Metrics::default()
        }),
        (Prediction::Classes { probabilities, .. }, RawTargets::Labels(y)) => {
            let labels: Vec<usize> = y
                .iter()
                .map(|l| {
                    prep.classes
                        .iter()
                        .position(|c| c == l)
                        .ok_or_else(|| PipelineError::Data(DataError::UnknownLabel(l.clone())))
                })
                .collect::<Result<_, _>>()?;
            let acc = accuracy(probabilities, &labels)?;
            let auc = if prep.n_classes() == 2 {
                let scores: Vec<f64> = (0..probabilities.rows()).map(|r| probabilities.get(r, 1) as f64).collect();
                Some(roc_auc(&scores, &labels)?)
            } else {
                None
            };
            Ok(Metrics {
                accuracy: Some(acc),
                auc,
                rmse: None,
            })
        }
        _ => Err(PipelineError::LabelColumnMissing),
    }
}

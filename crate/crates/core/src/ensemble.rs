//! Branches trained from one shared initialization and one shared feature
//! gate, each at its own learning rate, predicting by averaging.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::data::{Dataset, TaskType};
use crate::gbdt::GbdtModel;
use crate::model::{train, ModelError, PrunedModel, TmlpParams, TrainConfig, TrainData, TrainOutcome};
use crate::nn::Matrix;
use crate::tensorize::{CompiledModel, TensorizeError};

/// Learning rates of the three branches; the first is the single-model
/// default.
pub const BRANCH_LEARNING_RATES: [f64; 3] = [1e-4, 5e-4, 1e-3];

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensorize(#[from] TensorizeError),
    #[error("expected {expected} features, got {got}")]
    FeatureCountMismatch { expected: usize, got: usize },
    #[error("an ensemble needs at least one branch")]
    NoBranches,
    #[error("branches disagree on the feature schema")]
    InconsistentBranches,
    #[error("the model was trained without a feature gate")]
    GateAbsent,
    #[error("a training worker panicked")]
    WorkerPanicked,
}

/// Learning rate and random-stream index of one branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchSpec {
    pub learning_rate: f64,
    pub stream: u64,
}

impl BranchSpec {
    /// Branch `i` gets `learning_rates[i]` and stream `i`.
    pub fn from_rates(learning_rates: &[f64]) -> Vec<Self> {
        learning_rates
            .iter()
            .enumerate()
            .map(|(i, &learning_rate)| Self {
                learning_rate,
                stream: i as u64,
            })
            .collect()
    }
}

/// Worker count: `TMLP_THREADS` if set, otherwise the available cores.
pub fn worker_count() -> usize {
    std::env::var("TMLP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Trains every branch from `init` on the same (read-only) data. Branches
/// are spread over up to `threads` workers; results keep the order of
/// `specs`.
pub fn train_ensemble(
    init: &TmlpParams<f32>,
    train_data: &TrainData<'_>,
    valid_data: &TrainData<'_>,
    cfg: &TrainConfig,
    specs: &[BranchSpec],
    threads: usize,
) -> Result<Vec<TrainOutcome>, EnsembleError> {
    if specs.is_empty() {
        return Err(EnsembleError::NoBranches);
    }
    let run = |spec: &BranchSpec| {
        let branch_cfg = TrainConfig {
            learning_rate: spec.learning_rate,
            ..cfg.clone()
        };
        train(init, train_data, valid_data, &branch_cfg, spec.stream)
    };
    let workers = threads.clamp(1, specs.len());
    if workers == 1 {
        return specs.iter().map(|s| run(s).map_err(EnsembleError::from)).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<TrainOutcome, ModelError>>>> = Mutex::new(vec![None; specs.len()]);
    let panicked = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= specs.len() {
                        break;
                    }
                    let out = run(&specs[i]);
                    results.lock().expect("result slots")[i] = Some(out);
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join()).any(|r| r.is_err())
    });
    if panicked {
        return Err(EnsembleError::WorkerPanicked);
    }
    results
        .into_inner()
        .map_err(|_| EnsembleError::WorkerPanicked)?
        .into_iter()
        .map(|r| r.ok_or(EnsembleError::WorkerPanicked)?.map_err(EnsembleError::from))
        .collect()
}

/// Elementwise mean of equally shaped prediction matrices.
pub fn average(predictions: &[Matrix<f32>]) -> Result<Matrix<f32>, EnsembleError> {
    let first = predictions.first().ok_or(EnsembleError::NoBranches)?;
    let mut acc: Matrix<f64> = first.cast();
    for p in &predictions[1..] {
        acc.add_assign(&p.cast())
            .map_err(|e| EnsembleError::Model(ModelError::Nn(e)))?;
    }
    acc.scale(1.0 / predictions.len() as f64);
    Ok(acc.cast())
}

/// Shared gate plus K pruned branches.
#[derive(Clone, Debug)]
pub struct EnsembleBundle {
    pub gate: Option<GbdtModel>,
    compiled: Option<CompiledModel>,
    pub branches: Vec<PrunedModel>,
    pub learning_rates: Vec<f64>,
    pub task: TaskType,
}

impl PartialEq for EnsembleBundle {
    fn eq(&self, other: &Self) -> bool {
        self.gate == other.gate && self.branches == other.branches && self.learning_rates == other.learning_rates && self.task == other.task
    }
}

impl EnsembleBundle {
    /// Compiles the gate's trees into routing matrices.
    pub fn new(gate: Option<GbdtModel>, branches: Vec<PrunedModel>, learning_rates: Vec<f64>) -> Result<Self, EnsembleError> {
        let first = branches.first().ok_or(EnsembleError::NoBranches)?;
        let arch = &first.params.arch;
        if branches.iter().any(|b| {
            let a = &b.params.arch;
            a.n_num != arch.n_num || a.cat_cardinalities != arch.cat_cardinalities || a.task != arch.task || a.n_out != arch.n_out
        }) || learning_rates.len() != branches.len()
        {
            return Err(EnsembleError::InconsistentBranches);
        }
        let task = arch.task;
        let compiled = gate.as_ref().map(CompiledModel::new).transpose()?;
        Ok(Self {
            gate,
            compiled,
            branches,
            learning_rates,
            task,
        })
    }

    pub fn n_features(&self) -> usize {
        self.branches[0].params.arch.n_features()
    }

    pub fn compiled_gate(&self) -> Option<&CompiledModel> {
        self.compiled.as_ref()
    }

    /// Normalized tree frequencies of every row.
    pub fn frequencies(&self, data: &Dataset) -> Result<Matrix<f32>, EnsembleError> {
        self.check(data)?;
        let compiled = self.compiled.as_ref().ok_or(EnsembleError::GateAbsent)?;
        Ok(compiled.normalized_frequency(&data.tree_features())?)
    }

    fn check(&self, data: &Dataset) -> Result<(), EnsembleError> {
        let arch = &self.branches[0].params.arch;
        if data.n_numerical() != arch.n_num || data.n_categorical() != arch.n_cat() {
            return Err(EnsembleError::FeatureCountMismatch {
                expected: arch.n_features(),
                got: data.n_features(),
            });
        }
        Ok(())
    }

    /// Per-branch outputs (probabilities, or standardized values).
    pub fn branch_predictions(&self, data: &Dataset, batch_size: usize) -> Result<Vec<Matrix<f32>>, EnsembleError> {
        self.check(data)?;
        let alpha = match &self.compiled {
            Some(_) => Some(self.frequencies(data)?),
            None => None,
        };
        self.branches
            .iter()
            .map(|b| Ok(b.predict(&data.x_num, &data.x_cat, alpha.as_ref(), batch_size)?))
            .collect()
    }

    /// Mean over branches.
    pub fn predict(&self, data: &Dataset, batch_size: usize) -> Result<Matrix<f32>, EnsembleError> {
        average(&self.branch_predictions(data, batch_size)?)
    }
}

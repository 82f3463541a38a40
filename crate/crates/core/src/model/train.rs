//! Minibatch training with the Lagrangian sparsity controller and early
//! stopping on a validation split.

use serde::{Deserialize, Serialize};

use crate::data::TaskType;
use crate::nn::ops::softmax;
use crate::nn::{AdamW, Matrix, RngStream, Scalar};

use super::block::Selection;
use super::gates::{expected_l0, expected_l0_grad, gate_values, lagrangian_penalty, retained_ratio, GateMode, Multipliers};
use super::network::{backward, forward, task_loss, Inputs};
use super::params::{Arch, ParamGroup, TmlpParams};
use super::ModelError;

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    /// Gated-MLP blocks; `None` picks 3 for multiclass and very large binary
    /// tasks, otherwise 1.
    pub n_blocks: Option<usize>,
    pub d: usize,
    pub d_ff: usize,
    pub target_sparsity: f64,
    pub residual_dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Step size of the pruning-gate parameters.
    pub gate_learning_rate: f64,
    /// Ascent step size of the quadratic multiplier λ2.
    pub multiplier_learning_rate: f64,
    /// Ascent step size of the linear multiplier λ1. The gate optimizer only
    /// sees the sign of the penalty pull, so a λ1 as fast as λ2 acts as an
    /// undamped integrator and swings the ratio far past the target.
    pub linear_multiplier_learning_rate: f64,
    /// Epochs only count for early stopping once the expected retained
    /// ratio is this close to the target.
    pub sparsity_tolerance: f64,
    /// The controller's target slides linearly from 1 to `target_sparsity`
    /// over this many epochs. Chasing the final target from the start winds
    /// the multipliers up and overshoots far below it.
    pub sparsity_warmup_epochs: usize,
    /// Binary tasks with at least this many training rows get 3 blocks.
    pub large_binary_rows: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Stop after the first epoch that ends past this many seconds of
    /// training. Runs cut short this way depend on machine speed and are not
    /// reproducible.
    pub max_seconds: Option<f64>,
    pub seed: u64,
    pub gate_enabled: bool,
    pub sparsity_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_blocks: None,
            d: 1024,
            d_ff: 676,
            target_sparsity: 0.33,
            residual_dropout: 0.1,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            gate_learning_rate: 0.05,
            multiplier_learning_rate: 0.3,
            linear_multiplier_learning_rate: 0.003,
            sparsity_tolerance: 0.03,
            sparsity_warmup_epochs: 10,
            large_binary_rows: 500_000,
            batch_size: 256,
            eval_batch_size: 1024,
            max_epochs: 500,
            patience: 16,
            max_seconds: None,
            seed: 0,
            gate_enabled: true,
            sparsity_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::BadConfig(m.to_string()));
        if self.d == 0 || self.d_ff == 0 {
            return bad("d and d_ff must be positive");
        }
        if !(self.target_sparsity > 0.0 && self.target_sparsity <= 1.0) {
            return bad("target_sparsity must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.residual_dropout) {
            return bad("residual_dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.n_blocks == Some(0) {
            return bad("n_blocks must be at least 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    pub fn resolved_blocks(&self, task: TaskType, n_train: usize) -> usize {
        self.n_blocks.unwrap_or(match task {
            TaskType::Multiclass => 3,
            TaskType::Binclass if n_train >= self.large_binary_rows => 3,
            _ => 1,
        })
    }

    pub fn arch(&self, task: TaskType, n_num: usize, cat_cardinalities: Vec<usize>, n_classes: usize, n_train: usize) -> Arch {
        Arch {
            d: self.d,
            d_ff: self.d_ff,
            n_num,
            cat_cardinalities,
            n_blocks: self.resolved_blocks(task, n_train),
            task,
            n_out: if task.is_classification() { n_classes } else { 1 },
        }
    }

    pub fn train_gate_mode(&self) -> GateMode {
        if self.sparsity_enabled {
            GateMode::Sample
        } else {
            GateMode::Open
        }
    }

    pub fn eval_gate_mode(&self) -> GateMode {
        if self.sparsity_enabled {
            GateMode::TopK(self.target_sparsity)
        } else {
            GateMode::Open
        }
    }
}

/// Independent random streams of one training branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    pub seed: u64,
    pub branch: u64,
}

impl Streams {
    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const FEATURE_MASK: u64 = 2;
    pub const HARD_CONCRETE: u64 = 3;
    pub const DROPOUT: u64 = 4;

    pub fn new(seed: u64, branch: u64) -> Self {
        Self { seed, branch }
    }

    pub fn stream(&self, purpose: u64) -> RngStream {
        RngStream::new(self.seed, self.branch * 16 + purpose)
    }
}

/// A preprocessed split. `y` holds class indices or standardized targets;
/// `alpha_hat` is the cached normalized tree frequency of each row.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub x_num: &'a Matrix<f32>,
    pub x_cat: &'a [u32],
    pub y: &'a [f64],
    pub alpha_hat: Option<&'a Matrix<f32>>,
}

impl TrainData<'_> {
    pub fn len(&self) -> usize {
        self.x_num.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> (Matrix<f32>, Vec<u32>, Vec<f64>, Option<Matrix<f32>>) {
        let n_cat = if self.x_num.rows() == 0 { 0 } else { self.x_cat.len() / self.x_num.rows() };
        let x_num = self.x_num.select_rows(idx);
        let mut x_cat = Vec::with_capacity(idx.len() * n_cat);
        for &i in idx {
            x_cat.extend_from_slice(&self.x_cat[i * n_cat..(i + 1) * n_cat]);
        }
        let y = idx.iter().map(|&i| self.y[i]).collect();
        let alpha = self.alpha_hat.map(|a| a.select_rows(idx));
        (x_num, x_cat, y, alpha)
    }
}

/// Expected retained fraction of W1/W2 under the current gate parameters.
pub fn expected_retained_ratio<T: Scalar>(params: &TmlpParams<T>) -> f64 {
    let q: Vec<(Vec<f64>, Vec<f64>)> = params
        .blocks
        .iter()
        .map(|b| {
            (
                b.log_alpha_h.as_slice().iter().map(|v| expected_l0(v.to_f64())).collect(),
                b.log_alpha_in.as_slice().iter().map(|v| expected_l0(v.to_f64())).collect(),
            )
        })
        .collect();
    retained_ratio(&q, params.arch.d, params.arch.d_ff)
}

/// Drives the expected retained ratio towards the target: adds the penalty
/// gradient to the gate parameters and takes an ascent step on the
/// multipliers.
#[derive(Clone, Debug)]
pub struct SparsityController {
    pub target: f64,
    pub multipliers: Multipliers,
    linear_opt: AdamW<f64>,
    quadratic_opt: AdamW<f64>,
    warmup_steps: u64,
    steps: u64,
}

impl SparsityController {
    /// `rates` are the ascent step sizes of λ1 and λ2.
    pub fn new(target: f64, rates: (f64, f64), warmup_steps: u64) -> Self {
        Self {
            target,
            multipliers: Multipliers::default(),
            linear_opt: AdamW::new(rates.0, 0.0),
            quadratic_opt: AdamW::new(rates.1, 0.0),
            warmup_steps,
            steps: 0,
        }
    }

    /// Target for the next step.
    pub fn current_target(&self) -> f64 {
        if self.steps >= self.warmup_steps {
            return self.target;
        }
        let f = self.steps as f64 / self.warmup_steps as f64;
        1.0 - (1.0 - self.target) * f
    }

    /// Returns `(ŝ, penalty)` before the multiplier update.
    pub fn apply<T: Scalar>(&mut self, params: &TmlpParams<T>, grads: &mut TmlpParams<T>) -> (f64, f64) {
        let ratio = expected_retained_ratio(params);
        let m = self.multipliers;
        let pen = lagrangian_penalty(ratio, self.current_target(), m.lambda1, m.lambda2);
        self.steps += 1;
        let (d, d_ff) = (params.arch.d as f64, params.arch.d_ff as f64);
        let denom = params.blocks.len() as f64 * 3.0 * d * d_ff;
        let scale_h = pen.d_ratio * 2.0 * d_ff / denom;
        let scale_in = pen.d_ratio * d / denom;
        for (b, g) in params.blocks.iter().zip(grads.blocks.iter_mut()) {
            for (gv, v) in g.log_alpha_h.as_mut_slice().iter_mut().zip(b.log_alpha_h.as_slice()) {
                *gv += T::of(scale_h * expected_l0_grad(v.to_f64()));
            }
            for (gv, v) in g.log_alpha_in.as_mut_slice().iter_mut().zip(b.log_alpha_in.as_slice()) {
                *gv += T::of(scale_in * expected_l0_grad(v.to_f64()));
            }
        }
        let mut lambdas = [m.lambda1, m.lambda2];
        // ascent: descend on the negated gradient
        let neg = [-pen.d_lambda1, -pen.d_lambda2];
        let (l1, l2) = lambdas.split_at_mut(1);
        self.linear_opt.step(&mut [l1], &[&neg[..1]]).expect("one multiplier");
        self.quadratic_opt.step(&mut [l2], &[&neg[1..]]).expect("one multiplier");
        self.multipliers = Multipliers {
            lambda1: lambdas[0],
            lambda2: lambdas[1],
        };
        (ratio, pen.value)
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy for classification, RMSE on the standardized target for
    /// regression.
    pub valid_metric: f64,
    pub retained_ratio: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Whether the epoch could be selected by early stopping.
    pub eligible: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best eligible epoch (last epoch if none was).
    pub params: TmlpParams<f32>,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    pub retained_ratio: f64,
    pub history: Vec<EpochLog>,
    pub steps: u64,
}

/// Class probabilities (classification) or standardized predictions
/// (regression), `N × n_out`, with deterministic gates.
pub fn predict(
    params: &TmlpParams<f32>,
    x_num: &Matrix<f32>,
    x_cat: &[u32],
    alpha_hat: Option<&Matrix<f32>>,
    mode: GateMode,
    batch_size: usize,
) -> Result<Matrix<f32>, ModelError> {
    let mut rng = RngStream::new(0, 0);
    let selections: Vec<Selection<f32>> = params
        .blocks
        .iter()
        .map(|b| {
            let h = gate_values(b.log_alpha_h.as_slice(), mode, &mut rng);
            let inter = gate_values(b.log_alpha_in.as_slice(), mode, &mut rng);
            Selection::from_gates(&h, &inter, true)
        })
        .collect();
    predict_with(params, &selections, x_num, x_cat, alpha_hat, batch_size)
}

/// As [`predict`] with explicit per-block selections.
pub fn predict_with(
    params: &TmlpParams<f32>,
    selections: &[Selection<f32>],
    x_num: &Matrix<f32>,
    x_cat: &[u32],
    alpha_hat: Option<&Matrix<f32>>,
    batch_size: usize,
) -> Result<Matrix<f32>, ModelError> {
    let n = x_num.rows();
    let data = TrainData {
        x_num,
        x_cat,
        y: &[],
        alpha_hat,
    };
    let mut out = Matrix::zeros(n, params.arch.n_out);
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let xn = x_num.select_rows(&idx);
        let n_cat = params.arch.n_cat();
        let xc = &data.x_cat[start * n_cat..end * n_cat];
        let scale = alpha_hat.map(|a| a.select_rows(&idx));
        let inputs = Inputs {
            x_num: &xn,
            x_cat: xc,
            feature_scale: scale.as_ref(),
        };
        let (raw, _) = forward(params, &inputs, selections, None)?;
        let res = if params.arch.task.is_classification() { softmax(&raw) } else { raw };
        for (i, r) in (start..end).enumerate() {
            out.row_mut(r).copy_from_slice(res.row(i));
        }
        start = end;
    }
    Ok(out)
}

/// Accuracy (classification) or RMSE (regression, in the units of `y`).
pub fn metric(task: TaskType, pred: &Matrix<f32>, y: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    if task.is_classification() {
        let hits = (0..y.len())
            .filter(|&r| {
                let row = pred.row(r);
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best == y[r] as usize
            })
            .count();
        hits as f64 / n
    } else {
        let sse: f64 = (0..y.len()).map(|r| (pred.get(r, 0) as f64 - y[r]).powi(2)).sum();
        (sse / n).sqrt()
    }
}

fn better(task: TaskType, a: f64, b: f64) -> bool {
    if task.is_classification() {
        a > b
    } else {
        a < b
    }
}

/// Trains from `init`. The same `cfg.seed` and `branch` reproduce the run
/// bitwise.
pub fn train(init: &TmlpParams<f32>, train: &TrainData<'_>, valid: &TrainData<'_>, cfg: &TrainConfig, branch: u64) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if cfg.gate_enabled && (train.alpha_hat.is_none() || valid.alpha_hat.is_none()) {
        return Err(ModelError::MissingFrequencies);
    }
    let task = init.arch.task;
    let streams = Streams::new(cfg.seed, branch);
    let mut shuffle_rng = streams.stream(Streams::SHUFFLE);
    let mut mask_rng = streams.stream(Streams::FEATURE_MASK);
    let mut gate_rng = streams.stream(Streams::HARD_CONCRETE);
    let mut dropout_rng = streams.stream(Streams::DROPOUT);

    let mut params = init.clone();
    let mut grads = params.zeros_like();
    let mut weight_opt = AdamW::<f32>::new(cfg.learning_rate, cfg.weight_decay);
    let mut gate_opt = AdamW::<f32>::new(cfg.gate_learning_rate, 0.0);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let mut controller = SparsityController::new(
        cfg.target_sparsity,
        (cfg.linear_multiplier_learning_rate, cfg.multiplier_learning_rate),
        cfg.sparsity_warmup_epochs as u64 * steps_per_epoch,
    );
    let train_mode = cfg.train_gate_mode();
    let eval_mode = cfg.eval_gate_mode();

    let mut best: Option<(usize, f64, TmlpParams<f32>, f64)> = None;
    let mut since_best = 0usize;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps = 0u64;
    let started = std::time::Instant::now();

    for epoch in 0..cfg.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (xn, xc, y, alpha) = train.gather(chunk);
            let scale = if cfg.gate_enabled {
                let alpha = alpha.as_ref().expect("checked above");
                let mut mask = Matrix::zeros(alpha.rows(), alpha.cols());
                for (m, &p) in mask.as_mut_slice().iter_mut().zip(alpha.as_slice()) {
                    *m = if mask_rng.bernoulli(p as f64)? { 1.0 } else { 0.0 };
                }
                Some(mask)
            } else {
                None
            };
            let selections: Vec<Selection<f32>> = params
                .blocks
                .iter()
                .map(|b| {
                    let h = gate_values(b.log_alpha_h.as_slice(), train_mode, &mut gate_rng);
                    let inter = gate_values(b.log_alpha_in.as_slice(), train_mode, &mut gate_rng);
                    Selection::from_gates(&h, &inter, true)
                })
                .collect();
            let inputs = Inputs {
                x_num: &xn,
                x_cat: &xc,
                feature_scale: scale.as_ref(),
            };
            let dropout = Some((cfg.residual_dropout, &mut dropout_rng));
            let (out, cache) = forward(&params, &inputs, &selections, dropout)?;
            let (loss, d_out) = task_loss(task, &out, &y)?;
            for (_, _, g) in grads.tensors_mut() {
                g.as_mut_slice().fill(0.0);
            }
            backward(&params, &inputs, &selections, &cache, &d_out, &mut grads)?;
            drop(cache);
            if cfg.sparsity_enabled {
                controller.apply(&params, &mut grads);
            }
            weight_opt.step(&mut params.group_slices_mut(ParamGroup::Weights), &grads.group_slices(ParamGroup::Weights))?;
            if cfg.sparsity_enabled {
                gate_opt.step(&mut params.group_slices_mut(ParamGroup::Gates), &grads.group_slices(ParamGroup::Gates))?;
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
            steps += 1;
        }

        let ratio = if cfg.sparsity_enabled { expected_retained_ratio(&params) } else { 1.0 };
        let pred = predict(&params, valid.x_num, valid.x_cat, valid.alpha_hat.filter(|_| cfg.gate_enabled), eval_mode, cfg.eval_batch_size)?;
        let score = metric(task, &pred, valid.y);
        let eligible = !cfg.sparsity_enabled || (ratio - cfg.target_sparsity).abs() <= cfg.sparsity_tolerance;
        log::info!(
            "branch {branch} epoch {epoch}: loss {:.5} valid {score:.5} retained {ratio:.4}{}",
            loss_sum / seen as f64,
            if eligible { "" } else { " (not eligible)" }
        );
        history.push(EpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            valid_metric: score,
            retained_ratio: ratio,
            lambda1: controller.multipliers.lambda1,
            lambda2: controller.multipliers.lambda2,
            eligible,
        });
        if eligible {
            if best.as_ref().is_none_or(|b| better(task, score, b.1)) {
                best = Some((epoch, score, params.clone(), ratio));
                since_best = 0;
            } else {
                since_best += 1;
            }
        } else if best.is_some() {
            since_best += 1;
        }
        if best.is_some() && since_best >= cfg.patience {
            break;
        }
        if cfg.max_seconds.is_some_and(|limit| started.elapsed().as_secs_f64() >= limit) {
            log::info!("branch {branch}: time budget reached after epoch {epoch}");
            break;
        }
    }

    Ok(match best {
        Some((epoch, score, params, ratio)) => TrainOutcome {
            params,
            best_epoch: Some(epoch),
            best_metric: Some(score),
            retained_ratio: ratio,
            history,
            steps,
        },
        None => TrainOutcome {
            retained_ratio: if cfg.sparsity_enabled { expected_retained_ratio(&params) } else { 1.0 },
            params,
            best_epoch: None,
            best_metric: None,
            history,
            steps,
        },
    })
}

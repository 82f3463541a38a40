//! Second-order gradient boosting with exact greedy split finding.
//!
//! This is the model behind the feature gate: only the decision paths of its
//! trees matter downstream, so it is trained once with fixed defaults and no
//! early stopping.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskType};
use crate::nn::Matrix;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GbdtError {
    #[error("cannot fit on an empty dataset")]
    EmptyDataset,
    #[error("classification labels contain a single class")]
    SingleClassLabels,
    #[error("label {0} is not a valid class index")]
    BadLabel(f64),
    #[error("expected {expected} features, got {got}")]
    FeatureCountMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
    #[error("training rows have no targets")]
    MissingTargets,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub reg_lambda: f64,
    pub min_child_weight: f64,
    pub gamma_split: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            max_depth: 6,
            learning_rate: 0.3,
            reg_lambda: 1.0,
            min_child_weight: 1.0,
            gamma_split: 0.0,
        }
    }
}

impl GbdtConfig {
    fn validate(&self) -> Result<(), GbdtError> {
        if self.n_rounds == 0 {
            return Err(GbdtError::BadConfig("n_rounds must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(GbdtError::BadConfig("max_depth must be at least 1"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(GbdtError::BadConfig("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Marker stored in `left`/`right` for leaves.
pub const LEAF: u32 = u32::MAX;

/// Binary regression tree in struct-of-arrays layout; node 0 is the root.
///
/// A sample goes left at an internal node iff `x[feature] < threshold`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
pub struct DecisionTree {
    pub feature: Vec<u32>,
    pub threshold: Vec<f32>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    /// Learning-rate-scaled leaf output; zero on internal nodes.
    pub value: Vec<f64>,
}

/// Result of a root-to-leaf descent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafVisit {
    pub node: usize,
    pub features: BTreeSet<usize>,
}

impl DecisionTree {
    pub fn single_leaf(value: f64) -> Self {
        let mut t = Self::default();
        t.push_leaf(value);
        t
    }

    fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(0);
        self.threshold.push(0.0);
        self.left.push(LEAF);
        self.right.push(LEAF);
        self.value.push(value);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    #[inline]
    pub fn is_leaf(&self, node: usize) -> bool {
        self.left[node] == LEAF
    }

    /// Leaf node ids in ascending order; this fixes the leaf numbering used
    /// by the routing matrices.
    pub fn leaf_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&n| self.is_leaf(n)).collect()
    }

    pub fn internal_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&n| !self.is_leaf(n)).collect()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, n: usize) -> usize {
            if t.is_leaf(n) {
                0
            } else {
                1 + go(t, t.left[n] as usize).max(go(t, t.right[n] as usize))
            }
        }
        if self.n_nodes() == 0 {
            0
        } else {
            go(self, 0)
        }
    }

    /// Recursive descent from the root.
    pub fn traverse_leaf(&self, x: &[f32]) -> LeafVisit {
        let mut node = 0;
        let mut features = BTreeSet::new();
        while !self.is_leaf(node) {
            let f = self.feature[node] as usize;
            features.insert(f);
            node = if x[f] < self.threshold[node] {
                self.left[node]
            } else {
                self.right[node]
            } as usize;
        }
        LeafVisit { node, features }
    }

    #[inline]
    pub fn predict_row(&self, x: &[f32]) -> f64 {
        let mut node = 0;
        while !self.is_leaf(node) {
            node = if x[self.feature[node] as usize] < self.threshold[node] {
                self.left[node]
            } else {
                self.right[node]
            } as usize;
        }
        self.value[node]
    }
}

/// Additive tree ensemble. For multiclass, tree `t` contributes to class
/// `t % n_groups` (one tree per class per round).
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct GbdtModel {
    pub trees: Vec<DecisionTree>,
    pub base_score: Vec<f64>,
    pub task: TaskType,
    pub n_features: usize,
}

impl GbdtModel {
    /// Output groups: number of classes for multiclass, otherwise one.
    pub fn n_groups(&self) -> usize {
        self.base_score.len()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Raw additive scores, `N × n_groups`.
    pub fn predict_margin(&self, x: &Matrix<f32>) -> Result<Matrix<f64>, GbdtError> {
        if x.cols() != self.n_features {
            return Err(GbdtError::FeatureCountMismatch {
                expected: self.n_features,
                got: x.cols(),
            });
        }
        let groups = self.n_groups();
        let mut out = Matrix::zeros(x.rows(), groups);
        for r in 0..x.rows() {
            let row = x.row(r);
            let o = out.row_mut(r);
            o.copy_from_slice(&self.base_score);
            for (t, tree) in self.trees.iter().enumerate() {
                o[t % groups] += tree.predict_row(row);
            }
        }
        Ok(out)
    }

    /// Regression values, or class probabilities (`N × 2` for binary).
    pub fn predict(&self, x: &Matrix<f32>) -> Result<Matrix<f64>, GbdtError> {
        let margin = self.predict_margin(x)?;
        Ok(match self.task {
            TaskType::Regression => margin,
            TaskType::Binclass => Matrix::from_fn(margin.rows(), 2, |r, c| {
                let p = sigmoid(margin.get(r, 0));
                if c == 1 {
                    p
                } else {
                    1.0 - p
                }
            }),
            TaskType::Multiclass => crate::nn::ops::softmax(&margin),
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    crate::nn::ops::sigmoid(x)
}

/// Fitted model plus per-round training (and optional validation) loss.
#[derive(Clone, Debug)]
pub struct GbdtFit {
    pub model: GbdtModel,
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
}

/// Fits the gate model on a preprocessed dataset. `n_classes` is ignored
/// for regression.
pub fn fit_gbdt(
    train: &Dataset,
    valid: Option<&Dataset>,
    task: TaskType,
    n_classes: usize,
    cfg: &GbdtConfig,
) -> Result<GbdtFit, GbdtError> {
    let y = train.y.as_deref().ok_or(GbdtError::MissingTargets)?;
    let x = train.tree_features();
    let valid = match valid {
        Some(v) => Some((v.tree_features(), v.y.clone().ok_or(GbdtError::MissingTargets)?)),
        None => None,
    };
    fit_matrix(&x, y, valid.as_ref().map(|(x, y)| (x, y.as_slice())), task, n_classes, cfg)
}

pub fn fit_matrix(
    x: &Matrix<f32>,
    y: &[f64],
    valid: Option<(&Matrix<f32>, &[f64])>,
    task: TaskType,
    n_classes: usize,
    cfg: &GbdtConfig,
) -> Result<GbdtFit, GbdtError> {
    cfg.validate()?;
    let n = x.rows();
    if n == 0 || y.len() != n {
        return Err(GbdtError::EmptyDataset);
    }
    let groups = match task {
        TaskType::Multiclass => n_classes,
        _ => 1,
    };
    if task.is_classification() {
        let classes = if task == TaskType::Binclass { 2 } else { n_classes };
        if let Some(&bad) = y.iter().find(|&&v| v < 0.0 || v.fract() != 0.0 || v as usize >= classes) {
            return Err(GbdtError::BadLabel(bad));
        }
        let first = y[0];
        if y.iter().all(|&v| v == first) {
            return Err(GbdtError::SingleClassLabels);
        }
    }
    let base_score = initial_score(task, y, groups);
    let mut margins = Matrix::from_fn(n, groups, |_, c| base_score[c]);
    let sorted = presort(x);
    let mut trees = Vec::with_capacity(cfg.n_rounds * groups);
    let mut train_loss = Vec::with_capacity(cfg.n_rounds);
    let mut valid_loss = Vec::new();
    let mut valid_margins = valid.map(|(vx, _)| Matrix::from_fn(vx.rows(), groups, |_, c| base_score[c]));
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut round_grads = vec![(Vec::new(), Vec::new()); groups];

    for _ in 0..cfg.n_rounds {
        for (c, slot) in round_grads.iter_mut().enumerate() {
            gradients(task, &margins, y, c, &mut grad, &mut hess);
            *slot = (grad.clone(), hess.clone());
        }
        for (c, (g, h)) in round_grads.iter().enumerate() {
            let tree = grow_tree(x, &sorted, g, h, cfg);
            for r in 0..n {
                let v = margins.get(r, c) + tree.predict_row(x.row(r));
                margins.set(r, c, v);
            }
            if let (Some((vx, _)), Some(vm)) = (valid, valid_margins.as_mut()) {
                for r in 0..vx.rows() {
                    let v = vm.get(r, c) + tree.predict_row(vx.row(r));
                    vm.set(r, c, v);
                }
            }
            trees.push(tree);
        }
        train_loss.push(task_loss(task, &margins, y));
        if let (Some((_, vy)), Some(vm)) = (valid, valid_margins.as_ref()) {
            valid_loss.push(task_loss(task, vm, vy));
        }
    }
    Ok(GbdtFit {
        model: GbdtModel {
            trees,
            base_score,
            task,
            n_features: x.cols(),
        },
        train_loss,
        valid_loss,
    })
}

fn initial_score(task: TaskType, y: &[f64], groups: usize) -> Vec<f64> {
    let n = y.len() as f64;
    match task {
        TaskType::Regression => vec![y.iter().sum::<f64>() / n],
        TaskType::Binclass => {
            let p = (y.iter().sum::<f64>() / n).clamp(1e-6, 1.0 - 1e-6);
            vec![(p / (1.0 - p)).ln()]
        }
        TaskType::Multiclass => {
            let mut counts = vec![0.0; groups];
            for &v in y {
                counts[v as usize] += 1.0;
            }
            counts.iter().map(|c| (c / n).max(1e-6).ln()).collect()
        }
    }
}

fn gradients(task: TaskType, margins: &Matrix<f64>, y: &[f64], class: usize, g: &mut [f64], h: &mut [f64]) {
    for r in 0..y.len() {
        match task {
            TaskType::Regression => {
                g[r] = margins.get(r, 0) - y[r];
                h[r] = 1.0;
            }
            TaskType::Binclass => {
                let p = sigmoid(margins.get(r, 0));
                g[r] = p - y[r];
                h[r] = (p * (1.0 - p)).max(1e-16);
            }
            TaskType::Multiclass => {
                let row = margins.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|m| (m - max).exp()).sum();
                let p = (row[class] - max).exp() / sum;
                let target = if y[r] as usize == class { 1.0 } else { 0.0 };
                g[r] = p - target;
                h[r] = (2.0 * p * (1.0 - p)).max(1e-16);
            }
        }
    }
}

/// Mean logistic / softmax cross-entropy / squared-error loss.
pub fn task_loss(task: TaskType, margins: &Matrix<f64>, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let total: f64 = (0..y.len())
        .map(|r| match task {
            TaskType::Regression => (margins.get(r, 0) - y[r]).powi(2),
            TaskType::Binclass => {
                let m = margins.get(r, 0);
                // log(1 + e^m) − y·m, computed stably
                m.max(0.0) + (-m.abs()).exp().ln_1p() - y[r] * m
            }
            TaskType::Multiclass => {
                let row = margins.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|m| (m - max).exp()).sum::<f64>().ln();
                lse - row[y[r] as usize]
            }
        })
        .sum();
    total / n
}

/// Per-feature sample order by ascending value (ties by index), with the
/// values stored alongside so the split scan reads memory sequentially.
struct SortedColumn {
    order: Vec<u32>,
    values: Vec<f32>,
}

fn presort(x: &Matrix<f32>) -> Vec<SortedColumn> {
    (0..x.cols())
        .map(|f| {
            let mut order: Vec<u32> = (0..x.rows() as u32).collect();
            order.sort_by(|&a, &b| {
                x.get(a as usize, f)
                    .total_cmp(&x.get(b as usize, f))
                    .then(a.cmp(&b))
            });
            let values = order.iter().map(|&i| x.get(i as usize, f)).collect();
            SortedColumn { order, values }
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f32,
}

#[derive(Clone, Copy, Debug, Default)]
struct ScanState {
    grad_left: f64,
    hess_left: f64,
    last: f32,
    started: bool,
}

/// Split gain `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let g = gl + gr;
    let h = hl + hr;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma
}

/// Threshold strictly above `lo` and at most `hi`, as close to the
/// midpoint as `f32` allows.
fn midpoint(lo: f32, hi: f32) -> f32 {
    let mid = ((lo as f64 + hi as f64) * 0.5) as f32;
    if mid <= lo {
        hi
    } else {
        mid
    }
}

#[derive(Clone, Copy, Debug)]
struct OpenNode {
    node: usize,
    grad: f64,
    hess: f64,
    /// Whether the node's gradients differ; a zero-gain split is only taken
    /// when they do, since it can still expose positive-gain splits below
    /// (XOR is the canonical case).
    varied: bool,
}

#[derive(Clone, Copy, Debug)]
struct ChildStats {
    grad: f64,
    hess: f64,
    min: f64,
    max: f64,
}

impl Default for ChildStats {
    fn default() -> Self {
        Self {
            grad: 0.0,
            hess: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl ChildStats {
    fn push(&mut self, g: f64, h: f64) {
        self.grad += g;
        self.hess += h;
        self.min = self.min.min(g);
        self.max = self.max.max(g);
    }

    fn open(&self, node: usize) -> OpenNode {
        OpenNode {
            node,
            grad: self.grad,
            hess: self.hess,
            varied: self.min < self.max,
        }
    }
}

/// Level-wise exact greedy growth: every level scans each presorted
/// feature column once, tracking left-partition sums per open node.
fn grow_tree(x: &Matrix<f32>, sorted: &[SortedColumn], grad: &[f64], hess: &[f64], cfg: &GbdtConfig) -> DecisionTree {
    const CLOSED: u32 = u32::MAX;
    let n = x.rows();
    let mut tree = DecisionTree::default();
    // node id for each sample while its node is still open
    let mut position = vec![0u32; n];
    let mut root = ChildStats::default();
    for i in 0..n {
        root.push(grad[i], hess[i]);
    }
    tree.push_leaf(0.0);
    let mut open = vec![root.open(0)];
    let leaf_weight = |o: &OpenNode| -o.grad / (o.hess + cfg.reg_lambda) * cfg.learning_rate;

    for depth in 0..=cfg.max_depth {
        if open.is_empty() {
            break;
        }
        if depth == cfg.max_depth {
            for o in &open {
                tree.value[o.node] = leaf_weight(o);
            }
            break;
        }
        // slot of each open node in `open`
        let mut slot = vec![CLOSED; tree.n_nodes()];
        for (s, o) in open.iter().enumerate() {
            slot[o.node] = s as u32;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        let mut state = vec![ScanState::default(); open.len()];
        for (f, column) in sorted.iter().enumerate() {
            state.fill(ScanState::default());
            for (&i, &v) in column.order.iter().zip(&column.values) {
                let i = i as usize;
                let p = position[i];
                if p == CLOSED {
                    continue;
                }
                let s = slot[p as usize];
                if s == CLOSED {
                    continue;
                }
                let s = s as usize;
                let st = &mut state[s];
                if st.started && v > st.last {
                    let o = &open[s];
                    let (gl, hl) = (st.grad_left, st.hess_left);
                    let (gr, hr) = (o.grad - gl, o.hess - hl);
                    if hl >= cfg.min_child_weight && hr >= cfg.min_child_weight {
                        let gain = split_gain(gl, hl, gr, hr, cfg.reg_lambda, cfg.gamma_split);
                        let admissible = gain > 0.0 || (o.varied && gain == 0.0);
                        if admissible && best[s].is_none_or(|b| gain > b.gain) {
                            best[s] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold: midpoint(st.last, v),
                            });
                        }
                    }
                }
                st.grad_left += grad[i];
                st.hess_left += hess[i];
                st.last = v;
                st.started = true;
            }
        }

        let mut children = vec![(CLOSED, CLOSED); open.len()];
        for (s, o) in open.iter().enumerate() {
            match best[s] {
                Some(c) => {
                    let l = tree.push_leaf(0.0) as u32;
                    let r = tree.push_leaf(0.0) as u32;
                    tree.feature[o.node] = c.feature as u32;
                    tree.threshold[o.node] = c.threshold;
                    tree.left[o.node] = l;
                    tree.right[o.node] = r;
                    children[s] = (l, r);
                }
                None => tree.value[o.node] = leaf_weight(o),
            }
        }
        let mut stats = vec![ChildStats::default(); tree.n_nodes()];
        for i in 0..n {
            let p = position[i];
            if p == CLOSED {
                continue;
            }
            let s = slot[p as usize] as usize;
            match best[s] {
                Some(c) => {
                    let child = if x.get(i, c.feature) < c.threshold {
                        children[s].0
                    } else {
                        children[s].1
                    };
                    position[i] = child;
                    stats[child as usize].push(grad[i], hess[i]);
                }
                None => position[i] = CLOSED,
            }
        }
        open = children
            .iter()
            .filter(|c| c.0 != CLOSED)
            .flat_map(|&(l, r)| [stats[l as usize].open(l as usize), stats[r as usize].open(r as usize)])
            .collect();
    }
    tree
}

//! Dense routing matrices for trained trees and batched feature-frequency
//! computation.
//!
//! Each tree is compiled into
//! * `A` (|I|×F): one-hot split feature per internal node,
//! * `b` (|I|): thresholds,
//! * `P` (|L|×|I|): −1 where the leaf lies in the node's left subtree,
//!   +1 in its right subtree, 0 elsewhere,
//! * `c` (|L|): minus the number of +1 entries in each `P` row,
//! * `U` (|L|×F): features tested on the root→leaf path.
//!
//! With the decision vector `r = 1[x·Aᵀ ≥ b]` ("goes right"), the score
//! `P·r + c` is minus the number of path decisions a leaf disagrees with, so
//! the taken leaf is the unique argmax with score 0.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::gbdt::{DecisionTree, GbdtModel};
use crate::nn::{matmul, matmul_nt, Matrix};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorizeError {
    #[error("expected {expected} features, got {got}")]
    FeatureCountMismatch { expected: usize, got: usize },
    #[error("model has no trees")]
    NoTrees,
    #[error("frequency cache has no entry for split '{0}'")]
    MissingSplit(String),
}

/// Rows processed per GEMM block in [`CompiledModel::batch_frequency`].
const CHUNK_ROWS: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct RoutingMatrices {
    pub a: Matrix<f32>,
    pub b: Vec<f32>,
    pub p: Matrix<f32>,
    pub c: Vec<f32>,
    pub u: Matrix<f32>,
    /// Node id in the source tree of each leaf row.
    pub leaf_nodes: Vec<usize>,
}

impl RoutingMatrices {
    pub fn n_internal(&self) -> usize {
        self.b.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_nodes.len()
    }

    /// Leaf row selected for one sample, by the same arithmetic as the batch
    /// path but without GEMM.
    pub fn route_row(&self, x: &[f32]) -> usize {
        if self.n_internal() == 0 {
            return 0;
        }
        let r: Vec<f32> = (0..self.n_internal())
            .map(|i| {
                let v: f32 = self.a.row(i).iter().zip(x).map(|(a, x)| a * x).sum();
                (v >= self.b[i]) as u8 as f32
            })
            .collect();
        argmax((0..self.n_leaves()).map(|l| {
            self.p.row(l).iter().zip(&r).map(|(p, r)| p * r).sum::<f32>() + self.c[l]
        }))
    }
}

fn argmax(values: impl Iterator<Item = f32>) -> usize {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn compile_tree(tree: &DecisionTree, n_features: usize) -> RoutingMatrices {
    let internal = tree.internal_nodes();
    let leaf_nodes = tree.leaf_nodes();
    let mut slot = vec![usize::MAX; tree.n_nodes()];
    for (k, &n) in internal.iter().enumerate() {
        slot[n] = k;
    }
    let mut a = Matrix::zeros(internal.len(), n_features);
    let mut b = Vec::with_capacity(internal.len());
    for (k, &n) in internal.iter().enumerate() {
        a.set(k, tree.feature[n] as usize, 1.0);
        b.push(tree.threshold[n]);
    }
    // parent links give each leaf's ancestors and the side it hangs on
    let mut parent = vec![(usize::MAX, 0.0f32); tree.n_nodes()];
    for &n in &internal {
        parent[tree.left[n] as usize] = (n, -1.0);
        parent[tree.right[n] as usize] = (n, 1.0);
    }
    let mut p = Matrix::zeros(leaf_nodes.len(), internal.len());
    let mut c = vec![0.0f32; leaf_nodes.len()];
    let mut u = Matrix::zeros(leaf_nodes.len(), n_features);
    for (l, &leaf) in leaf_nodes.iter().enumerate() {
        let mut node = leaf;
        while parent[node].0 != usize::MAX {
            let (up, side) = parent[node];
            p.set(l, slot[up], side);
            if side > 0.0 {
                c[l] -= 1.0;
            }
            u.set(l, tree.feature[up] as usize, 1.0);
            node = up;
        }
    }
    RoutingMatrices {
        a,
        b,
        p,
        c,
        u,
        leaf_nodes,
    }
}

/// All trees of a model, with the `A`/`b` blocks stacked so one GEMM
/// gathers every split feature of every tree.
#[derive(Clone, Debug)]
pub struct CompiledModel {
    pub trees: Vec<RoutingMatrices>,
    pub n_features: usize,
    stacked_a: Matrix<f32>,
    stacked_b: Vec<f32>,
    offsets: Vec<usize>,
}

impl CompiledModel {
    pub fn new(model: &GbdtModel) -> Result<Self, TensorizeError> {
        Self::from_trees(&model.trees, model.n_features)
    }

    pub fn from_trees(trees: &[DecisionTree], n_features: usize) -> Result<Self, TensorizeError> {
        if trees.is_empty() {
            return Err(TensorizeError::NoTrees);
        }
        let trees: Vec<RoutingMatrices> = trees.iter().map(|t| compile_tree(t, n_features)).collect();
        let total: usize = trees.iter().map(|t| t.n_internal()).sum();
        let mut stacked_a = Matrix::zeros(total, n_features);
        let mut stacked_b = Vec::with_capacity(total);
        let mut offsets = Vec::with_capacity(trees.len() + 1);
        let mut at = 0;
        for t in &trees {
            offsets.push(at);
            for i in 0..t.n_internal() {
                stacked_a.row_mut(at + i).copy_from_slice(t.a.row(i));
            }
            stacked_b.extend_from_slice(&t.b);
            at += t.n_internal();
        }
        offsets.push(at);
        Ok(Self {
            trees,
            n_features,
            stacked_a,
            stacked_b,
            offsets,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn check(&self, x: &Matrix<f32>) -> Result<(), TensorizeError> {
        if x.cols() != self.n_features {
            return Err(TensorizeError::FeatureCountMismatch {
                expected: self.n_features,
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Leaf row taken in every tree, `N × T`.
    pub fn leaf_indices(&self, x: &Matrix<f32>) -> Result<Vec<Vec<usize>>, TensorizeError> {
        self.check(x)?;
        let mut out = vec![Vec::with_capacity(self.n_trees()); x.rows()];
        self.route(x, |row, _, leaf, _| out[row].push(leaf));
        Ok(out)
    }

    /// Raw frequency α: entry (i, f) counts the trees whose path for sample
    /// i tests feature f. Counts are exact integers in `[0, T]`.
    pub fn batch_frequency(&self, x: &Matrix<f32>) -> Result<Matrix<f32>, TensorizeError> {
        self.check(x)?;
        let mut alpha = Matrix::zeros(x.rows(), self.n_features);
        self.route(x, |row, _, leaf, tree| {
            for (a, u) in alpha.row_mut(row).iter_mut().zip(tree.u.row(leaf)) {
                *a += u;
            }
        });
        Ok(alpha)
    }

    /// Normalized frequency α̂ = α / T.
    pub fn normalized_frequency(&self, x: &Matrix<f32>) -> Result<Matrix<f32>, TensorizeError> {
        let mut alpha = self.batch_frequency(x)?;
        alpha.scale(1.0 / self.n_trees() as f32);
        Ok(alpha)
    }

    fn route(&self, x: &Matrix<f32>, mut visit: impl FnMut(usize, usize, usize, &RoutingMatrices)) {
        let mut start = 0;
        while start < x.rows() {
            let end = (start + CHUNK_ROWS).min(x.rows());
            let rows: Vec<usize> = (start..end).collect();
            let chunk = x.select_rows(&rows);
            // gathered split values for every internal node of every tree
            let gathered = if self.stacked_b.is_empty() {
                Matrix::zeros(chunk.rows(), 0)
            } else {
                matmul_nt(&chunk, &self.stacked_a).expect("feature count checked")
            };
            for (t, tree) in self.trees.iter().enumerate() {
                let (lo, hi) = (self.offsets[t], self.offsets[t + 1]);
                if lo == hi {
                    for r in 0..chunk.rows() {
                        visit(start + r, t, 0, tree);
                    }
                    continue;
                }
                let decisions = Matrix::from_fn(chunk.rows(), hi - lo, |r, i| {
                    (gathered.get(r, lo + i) >= self.stacked_b[lo + i]) as u8 as f32
                });
                let pt = tree.p.transpose();
                let scores = matmul(&decisions, &pt).expect("routing shapes agree");
                for r in 0..chunk.rows() {
                    let leaf = argmax(scores.row(r).iter().zip(&tree.c).map(|(s, c)| s + c));
                    visit(start + r, t, leaf, tree);
                }
            }
            start = end;
        }
    }
}

/// Normalized frequencies per named split (train/valid/test), computed once
/// and read-only afterwards. Rows are keyed by their index within the split.
#[derive(Debug, Default)]
pub struct FrequencyCache {
    splits: HashMap<String, Matrix<f32>>,
    evaluations: AtomicUsize,
}

impl FrequencyCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Computes and stores α̂ for `split` unless it is already present.
    pub fn build(&mut self, model: &CompiledModel, split: &str, x: &Matrix<f32>) -> Result<&Matrix<f32>, TensorizeError> {
        if !self.splits.contains_key(split) {
            self.evaluations.fetch_add(1, Ordering::Relaxed);
            let alpha_hat = model.normalized_frequency(x)?;
            self.splits.insert(split.to_string(), alpha_hat);
        }
        Ok(&self.splits[split])
    }

    pub fn get(&self, split: &str) -> Result<&Matrix<f32>, TensorizeError> {
        self.splits
            .get(split)
            .ok_or_else(|| TensorizeError::MissingSplit(split.to_string()))
    }

    pub fn contains(&self, split: &str) -> bool {
        self.splits.contains_key(split)
    }

    /// How many times frequencies were actually computed.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }
}

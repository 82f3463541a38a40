//! Parameter containers for the tokenizer, the gated-MLP blocks and the head.

use serde::{Deserialize, Serialize};

use crate::data::TaskType;
use crate::nn::{Matrix, RngStream, Scalar};

/// Network dimensions. `d_ff` is the intermediate width d′.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Arch {
    pub d: usize,
    pub d_ff: usize,
    pub n_num: usize,
    /// Embedding rows per categorical feature (vocabulary plus unknown).
    pub cat_cardinalities: Vec<usize>,
    pub n_blocks: usize,
    pub task: TaskType,
    /// Head outputs: number of classes, or one for regression.
    pub n_out: usize,
}

impl Arch {
    pub fn n_cat(&self) -> usize {
        self.cat_cardinalities.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_num + self.n_cat()
    }

    /// Token rows per sample, CLS included.
    pub fn n_tokens(&self) -> usize {
        1 + self.n_features()
    }

    /// First embedding row of each categorical feature.
    pub fn cat_offsets(&self) -> Vec<usize> {
        let mut at = 0;
        self.cat_cardinalities
            .iter()
            .map(|c| {
                let o = at;
                at += c;
                o
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenizerParams<T> {
    pub w_num: Matrix<T>,
    pub b_num: Matrix<T>,
    /// Stacked embedding tables of all categorical features.
    pub emb: Matrix<T>,
    pub cls: Matrix<T>,
}

/// One gated-MLP block. Vectors are stored as single-row matrices.
///
/// `w1` is `d × 2d′` (columns `j` and `d′+j` belong to intermediate unit `j`),
/// `w3`/`b3` mix the `1+F` token rows inside the gating unit, and
/// `log_alpha_h`/`log_alpha_in` parametrize the pruning gates over hidden
/// and intermediate units.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub ln1_gain: Matrix<T>,
    pub ln1_bias: Matrix<T>,
    pub w1: Matrix<T>,
    pub c1: Matrix<T>,
    pub ln2_gain: Matrix<T>,
    pub ln2_bias: Matrix<T>,
    pub w3: Matrix<T>,
    pub b3: Matrix<T>,
    pub w2: Matrix<T>,
    pub c2: Matrix<T>,
    pub log_alpha_h: Matrix<T>,
    pub log_alpha_in: Matrix<T>,
}

impl<T: Scalar> BlockParams<T> {
    pub fn d_ff(&self) -> usize {
        self.w2.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    pub ln_gain: Matrix<T>,
    pub ln_bias: Matrix<T>,
    pub w: Matrix<T>,
    pub b: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TmlpParams<T> {
    pub arch: Arch,
    pub tokenizer: TokenizerParams<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub head: HeadParams<T>,
}

/// Which optimizer a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Weights,
    Gates,
}

fn uniform<T: Scalar>(rows: usize, cols: usize, bound: f64, rng: &mut RngStream) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::of((2.0 * rng.uniform() - 1.0) * bound))
}

fn normal<T: Scalar>(rows: usize, cols: usize, mean: f64, std: f64, rng: &mut RngStream) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::of(mean + rng.normal(std)))
}

impl<T: Scalar> TmlpParams<T> {
    /// Fresh parameters. Linear maps are uniform in ±1/√fan_in, W3 starts
    /// near zero with unit bias so the gating unit begins as `1 ⊙ V`, and
    /// the pruning gates start nearly open.
    pub fn init(arch: Arch, rng: &mut RngStream) -> Self {
        let d = arch.d;
        let d_ff = arch.d_ff;
        let tokens = arch.n_tokens();
        let bound_d = 1.0 / (d as f64).sqrt();
        let bound_ff = 1.0 / (d_ff as f64).sqrt();
        let n_emb: usize = arch.cat_cardinalities.iter().sum();
        let tokenizer = TokenizerParams {
            w_num: uniform(arch.n_num, d, bound_d, rng),
            b_num: uniform(arch.n_num, d, bound_d, rng),
            emb: uniform(n_emb, d, bound_d, rng),
            cls: uniform(1, d, bound_d, rng),
        };
        let blocks = (0..arch.n_blocks)
            .map(|_| BlockParams {
                ln1_gain: Matrix::filled(1, d, T::ONE),
                ln1_bias: Matrix::zeros(1, d),
                w1: uniform(d, 2 * d_ff, bound_d, rng),
                c1: Matrix::zeros(1, 2 * d_ff),
                ln2_gain: Matrix::filled(1, d_ff, T::ONE),
                ln2_bias: Matrix::zeros(1, d_ff),
                w3: normal(tokens, tokens, 0.0, 1e-4, rng),
                b3: Matrix::filled(1, tokens, T::ONE),
                w2: uniform(d_ff, d, bound_ff, rng),
                c2: Matrix::zeros(1, d),
                log_alpha_h: normal(1, d, 2.0, 0.01, rng),
                log_alpha_in: normal(1, d_ff, 2.0, 0.01, rng),
            })
            .collect();
        let head = HeadParams {
            ln_gain: Matrix::filled(1, d, T::ONE),
            ln_bias: Matrix::zeros(1, d),
            w: uniform(d, arch.n_out, bound_d, rng),
            b: Matrix::zeros(1, arch.n_out),
        };
        Self {
            arch,
            tokenizer,
            blocks,
            head,
        }
    }

    /// Same shapes, all zeros (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, _, m) in z.tensors_mut() {
            m.as_mut_slice().fill(T::ZERO);
        }
        z
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ParamGroup, &Matrix<T>)> {
        use ParamGroup::*;
        let t = &self.tokenizer;
        let mut out = vec![
            ("tokenizer.w_num".to_string(), Weights, &t.w_num),
            ("tokenizer.b_num".to_string(), Weights, &t.b_num),
            ("tokenizer.emb".to_string(), Weights, &t.emb),
            ("tokenizer.cls".to_string(), Weights, &t.cls),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let tensors = [
                ("ln1_gain", Weights, &b.ln1_gain),
                ("ln1_bias", Weights, &b.ln1_bias),
                ("w1", Weights, &b.w1),
                ("c1", Weights, &b.c1),
                ("ln2_gain", Weights, &b.ln2_gain),
                ("ln2_bias", Weights, &b.ln2_bias),
                ("w3", Weights, &b.w3),
                ("b3", Weights, &b.b3),
                ("w2", Weights, &b.w2),
                ("c2", Weights, &b.c2),
                ("log_alpha_h", Gates, &b.log_alpha_h),
                ("log_alpha_in", Gates, &b.log_alpha_in),
            ];
            out.extend(tensors.into_iter().map(|(n, g, m)| (format!("block{i}.{n}"), g, m)));
        }
        let h = &self.head;
        out.push(("head.ln_gain".to_string(), Weights, &h.ln_gain));
        out.push(("head.ln_bias".to_string(), Weights, &h.ln_bias));
        out.push(("head.w".to_string(), Weights, &h.w));
        out.push(("head.b".to_string(), Weights, &h.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ParamGroup, &mut Matrix<T>)> {
        use ParamGroup::*;
        let t = &mut self.tokenizer;
        let mut out = vec![
            ("tokenizer.w_num".to_string(), Weights, &mut t.w_num),
            ("tokenizer.b_num".to_string(), Weights, &mut t.b_num),
            ("tokenizer.emb".to_string(), Weights, &mut t.emb),
            ("tokenizer.cls".to_string(), Weights, &mut t.cls),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let tensors = [
                ("ln1_gain", Weights, &mut b.ln1_gain),
                ("ln1_bias", Weights, &mut b.ln1_bias),
                ("w1", Weights, &mut b.w1),
                ("c1", Weights, &mut b.c1),
                ("ln2_gain", Weights, &mut b.ln2_gain),
                ("ln2_bias", Weights, &mut b.ln2_bias),
                ("w3", Weights, &mut b.w3),
                ("b3", Weights, &mut b.b3),
                ("w2", Weights, &mut b.w2),
                ("c2", Weights, &mut b.c2),
                ("log_alpha_h", Gates, &mut b.log_alpha_h),
                ("log_alpha_in", Gates, &mut b.log_alpha_in),
            ];
            out.extend(tensors.into_iter().map(|(n, g, m)| (format!("block{i}.{n}"), g, m)));
        }
        let h = &mut self.head;
        out.push(("head.ln_gain".to_string(), Weights, &mut h.ln_gain));
        out.push(("head.ln_bias".to_string(), Weights, &mut h.ln_bias));
        out.push(("head.w".to_string(), Weights, &mut h.w));
        out.push(("head.b".to_string(), Weights, &mut h.b));
        out
    }

    /// Mutable slices of one group, in visiting order.
    pub fn group_slices_mut(&mut self, group: ParamGroup) -> Vec<&mut [T]> {
        self.tensors_mut()
            .into_iter()
            .filter(|(_, g, _)| *g == group)
            .map(|(_, _, m)| m.as_mut_slice())
            .collect()
    }

    pub fn group_slices(&self, group: ParamGroup) -> Vec<&[T]> {
        self.tensors()
            .into_iter()
            .filter(|(_, g, _)| *g == group)
            .map(|(_, _, m)| m.as_slice())
            .collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, m)| m.as_slice().len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> TmlpParams<U> {
        let t = &self.tokenizer;
        let h = &self.head;
        TmlpParams {
            arch: self.arch.clone(),
            tokenizer: TokenizerParams {
                w_num: t.w_num.cast(),
                b_num: t.b_num.cast(),
                emb: t.emb.cast(),
                cls: t.cls.cast(),
            },
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    ln1_gain: b.ln1_gain.cast(),
                    ln1_bias: b.ln1_bias.cast(),
                    w1: b.w1.cast(),
                    c1: b.c1.cast(),
                    ln2_gain: b.ln2_gain.cast(),
                    ln2_bias: b.ln2_bias.cast(),
                    w3: b.w3.cast(),
                    b3: b.b3.cast(),
                    w2: b.w2.cast(),
                    c2: b.c2.cast(),
                    log_alpha_h: b.log_alpha_h.cast(),
                    log_alpha_in: b.log_alpha_in.cast(),
                })
                .collect(),
            head: HeadParams {
                ln_gain: h.ln_gain.cast(),
                ln_bias: h.ln_bias.cast(),
                w: h.w.cast(),
                b: h.b.cast(),
            },
        }
    }
}

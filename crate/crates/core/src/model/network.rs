//! Whole-network forward and backward: tokenizer, feature gate, blocks and
//! prediction head.

use crate::data::TaskType;
use crate::nn::ops::{layer_norm, layer_norm_backward, linear, linear_backward, mean_squared_error, relu, relu_backward, softmax_cross_entropy, LayerNormCache};
use crate::nn::{Matrix, NnError, RngStream, Scalar};

use super::block::{block_backward, block_forward, BlockCache, Selection};
use super::params::{Arch, HeadParams, TmlpParams, TokenizerParams};
use super::ModelError;

/// One minibatch of preprocessed inputs.
#[derive(Clone, Copy, Debug)]
pub struct Inputs<'a, T> {
    /// `B × F1` standardized numerical features.
    pub x_num: &'a Matrix<T>,
    /// `B·F2` categorical codes, row-major.
    pub x_cat: &'a [u32],
    /// `B × F` multipliers of the feature tokens; `None` leaves them as is.
    pub feature_scale: Option<&'a Matrix<T>>,
}

impl<T: Scalar> Inputs<'_, T> {
    pub fn batch_size(&self) -> usize {
        self.x_num.rows()
    }
}

pub struct NetCache<T> {
    blocks: Vec<BlockCache<T>>,
    head_ln: LayerNormCache<T>,
    head_pre_relu: Matrix<T>,
    head_act: Matrix<T>,
}

fn check_inputs<T: Scalar>(arch: &Arch, x: &Inputs<'_, T>) -> Result<(), ModelError> {
    let b = x.x_num.rows();
    if x.x_num.cols() != arch.n_num {
        return Err(ModelError::FeatureCountMismatch {
            expected: arch.n_num,
            got: x.x_num.cols(),
        });
    }
    if x.x_cat.len() != b * arch.n_cat() {
        return Err(ModelError::FeatureCountMismatch {
            expected: b * arch.n_cat(),
            got: x.x_cat.len(),
        });
    }
    if let Some(s) = x.feature_scale {
        if s.shape() != (b, arch.n_features()) {
            return Err(ModelError::Nn(NnError::ShapeMismatch {
                op: "feature_scale",
                lhs: s.shape(),
                rhs: (b, arch.n_features()),
            }));
        }
    }
    for (i, &code) in x.x_cat.iter().enumerate() {
        let f = i % arch.n_cat().max(1);
        if code as usize >= arch.cat_cardinalities[f] {
            return Err(ModelError::IndexOutOfVocabulary {
                feature: f,
                code: code as usize,
                cardinality: arch.cat_cardinalities[f],
            });
        }
    }
    Ok(())
}

/// Token stack `(B·(1+F)) × d` with CLS first in every sample; feature
/// rows are multiplied by the feature scale, CLS never is.
pub fn tokenize<T: Scalar>(arch: &Arch, tok: &TokenizerParams<T>, x: &Inputs<'_, T>) -> Result<Matrix<T>, ModelError> {
    check_inputs(arch, x)?;
    let d = arch.d;
    let tokens = arch.n_tokens();
    let b = x.batch_size();
    let n_num = arch.n_num;
    let n_cat = arch.n_cat();
    let offsets = arch.cat_offsets();
    let mut out = Matrix::zeros(b * tokens, d);
    for s in 0..b {
        out.row_mut(s * tokens).copy_from_slice(tok.cls.row(0));
        for j in 0..n_num {
            let v = x.x_num.get(s, j);
            let scale = x.feature_scale.map_or(T::ONE, |m| m.get(s, j));
            let row = out.row_mut(s * tokens + 1 + j);
            for ((o, &w), &bias) in row.iter_mut().zip(tok.w_num.row(j)).zip(tok.b_num.row(j)) {
                *o = (v * w + bias) * scale;
            }
        }
        for (k, &offset) in offsets.iter().enumerate() {
            let code = x.x_cat[s * n_cat + k] as usize;
            let scale = x.feature_scale.map_or(T::ONE, |m| m.get(s, n_num + k));
            let row = out.row_mut(s * tokens + 1 + n_num + k);
            for (o, &e) in row.iter_mut().zip(tok.emb.row(offset + code)) {
                *o = e * scale;
            }
        }
    }
    Ok(out)
}

fn tokenize_backward<T: Scalar>(arch: &Arch, x: &Inputs<'_, T>, d_tokens: &Matrix<T>, g: &mut TokenizerParams<T>) {
    let tokens = arch.n_tokens();
    let n_num = arch.n_num;
    let n_cat = arch.n_cat();
    let offsets = arch.cat_offsets();
    for s in 0..x.batch_size() {
        for (a, &v) in g.cls.row_mut(0).iter_mut().zip(d_tokens.row(s * tokens)) {
            *a += v;
        }
        for j in 0..n_num {
            let v = x.x_num.get(s, j);
            let scale = x.feature_scale.map_or(T::ONE, |m| m.get(s, j));
            let dr = d_tokens.row(s * tokens + 1 + j);
            for (a, &d) in g.w_num.row_mut(j).iter_mut().zip(dr) {
                *a += d * v * scale;
            }
            for (a, &d) in g.b_num.row_mut(j).iter_mut().zip(dr) {
                *a += d * scale;
            }
        }
        for (k, &offset) in offsets.iter().enumerate() {
            let code = x.x_cat[s * n_cat + k] as usize;
            let scale = x.feature_scale.map_or(T::ONE, |m| m.get(s, n_num + k));
            let dr = d_tokens.row(s * tokens + 1 + n_num + k);
            for (a, &d) in g.emb.row_mut(offset + code).iter_mut().zip(dr) {
                *a += d * scale;
            }
        }
    }
}

fn cls_rows(tokens: usize, b: usize) -> Vec<usize> {
    (0..b).map(|s| s * tokens).collect()
}

/// Output, the LayerNorm cache, the normalized input and the activation.
type HeadPass<T> = (Matrix<T>, LayerNormCache<T>, Matrix<T>, Matrix<T>);

fn head_forward<T: Scalar>(head: &HeadParams<T>, cls: &Matrix<T>) -> Result<HeadPass<T>, NnError> {
    let (n, ln) = layer_norm(cls, head.ln_gain.as_slice(), head.ln_bias.as_slice())?;
    let act = relu(&n);
    let out = linear(&act, &head.w, head.b.as_slice())?;
    Ok((out, ln, n, act))
}

/// Raw outputs (`B × n_out`): logits for classification, standardized value
/// for regression.
pub fn forward<T: Scalar>(
    params: &TmlpParams<T>,
    x: &Inputs<'_, T>,
    selections: &[Selection<T>],
    mut dropout: Option<(f64, &mut RngStream)>,
) -> Result<(Matrix<T>, NetCache<T>), ModelError> {
    let arch = &params.arch;
    if selections.len() != params.blocks.len() {
        return Err(ModelError::BadConfig("one selection per block is required".into()));
    }
    let mut h = tokenize(arch, &params.tokenizer, x)?;
    let mut caches = Vec::with_capacity(params.blocks.len());
    let last = params.blocks.len().saturating_sub(1);
    for (i, (block, sel)) in params.blocks.iter().zip(selections).enumerate() {
        let drop = dropout.as_mut().map(|(rate, rng)| (*rate, &mut **rng));
        let (next, cache) = block_forward(block, &h, sel, i == last, drop)?;
        caches.push(cache);
        h = next;
    }
    // the last block already returns CLS rows only
    if params.blocks.is_empty() {
        h = h.select_rows(&cls_rows(arch.n_tokens(), x.batch_size()));
    }
    let (out, head_ln, pre, act) = head_forward(&params.head, &h)?;
    Ok((
        out,
        NetCache {
            blocks: caches,
            head_ln,
            head_pre_relu: pre,
            head_act: act,
        },
    ))
}

/// Accumulates all parameter gradients for upstream gradient `d_out` into
/// `grads` (which must be shaped like `params`).
pub fn backward<T: Scalar>(
    params: &TmlpParams<T>,
    x: &Inputs<'_, T>,
    selections: &[Selection<T>],
    cache: &NetCache<T>,
    d_out: &Matrix<T>,
    grads: &mut TmlpParams<T>,
) -> Result<(), ModelError> {
    let arch = &params.arch;
    let head = linear_backward(&cache.head_act, &params.head.w, d_out)?;
    grads.head.w.add_assign(&head.dw)?;
    for (a, b) in grads.head.b.as_mut_slice().iter_mut().zip(&head.db) {
        *a += *b;
    }
    let d_pre = relu_backward(&cache.head_pre_relu, &head.dx);
    let ln = layer_norm_backward(&cache.head_ln, params.head.ln_gain.as_slice(), &d_pre);
    for (a, b) in grads.head.ln_gain.as_mut_slice().iter_mut().zip(&ln.dgain) {
        *a += *b;
    }
    for (a, b) in grads.head.ln_bias.as_mut_slice().iter_mut().zip(&ln.dbias) {
        *a += *b;
    }
    let mut d_h = ln.dx;
    if params.blocks.is_empty() {
        let tokens = arch.n_tokens();
        let mut full = Matrix::zeros(x.batch_size() * tokens, arch.d);
        for s in 0..x.batch_size() {
            full.row_mut(s * tokens).copy_from_slice(d_h.row(s));
        }
        d_h = full;
    }
    for i in (0..params.blocks.len()).rev() {
        d_h = block_backward(&params.blocks[i], &selections[i], &cache.blocks[i], &d_h, &mut grads.blocks[i])?;
    }
    tokenize_backward(arch, x, &d_h, &mut grads.tokenizer);
    Ok(())
}

/// Task loss and its gradient with respect to the raw outputs. `y` holds
/// class indices or standardized targets.
pub fn task_loss<T: Scalar>(task: TaskType, out: &Matrix<T>, y: &[f64]) -> Result<(f64, Matrix<T>), ModelError> {
    match task {
        TaskType::Regression => {
            let target: Vec<T> = y.iter().map(|&v| T::of(v)).collect();
            let (loss, grad) = mean_squared_error(out, &target)?;
            Ok((loss.to_f64(), grad))
        }
        _ => {
            let labels: Vec<usize> = y.iter().map(|&v| v as usize).collect();
            let (loss, grad) = softmax_cross_entropy(out, &labels)?;
            Ok((loss.to_f64(), grad))
        }
    }
}

//! Structural pruning: keep the top-scoring hidden and intermediate units of
//! every block and physically drop the rest.

use crate::nn::Matrix;

use super::block::Selection;
use super::gates::{kept_units, top_k_mask};
use super::params::{BlockParams, TmlpParams};
use super::train::predict_with;
use super::ModelError;

/// A pruned network. Block `i` keeps hidden units `hidden[i]` (ascending
/// input columns feeding the rows of its W1) and `inter[i]` intermediate
/// units; `params.arch.d_ff` is the kept intermediate width.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunedModel {
    pub params: TmlpParams<f32>,
    pub hidden: Vec<Vec<usize>>,
    pub inter: Vec<Vec<usize>>,
}

fn kept(log_alpha: &Matrix<f32>, target: f64) -> Vec<usize> {
    let la: Vec<f64> = log_alpha.as_slice().iter().map(|&v| v as f64).collect();
    let mask = top_k_mask(&la, kept_units(target, la.len()));
    (0..la.len()).filter(|&i| mask[i]).collect()
}

fn prune_block(b: &BlockParams<f32>, hidden: &[usize], inter: &[usize]) -> BlockParams<f32> {
    let d_ff = b.d_ff();
    let w1_cols: Vec<usize> = inter.iter().copied().chain(inter.iter().map(|&j| d_ff + j)).collect();
    let pick = |m: &Matrix<f32>, cols: &[usize]| m.select_cols(cols);
    BlockParams {
        ln1_gain: b.ln1_gain.clone(),
        ln1_bias: b.ln1_bias.clone(),
        w1: b.w1.select(hidden, &w1_cols),
        c1: pick(&b.c1, &w1_cols),
        ln2_gain: pick(&b.ln2_gain, inter),
        ln2_bias: pick(&b.ln2_bias, inter),
        w3: b.w3.clone(),
        b3: b.b3.clone(),
        w2: b.w2.select_rows(inter),
        c2: b.c2.clone(),
        log_alpha_h: pick(&b.log_alpha_h, hidden),
        log_alpha_in: pick(&b.log_alpha_in, inter),
    }
}

/// Keeps `round(target·n)` units (at least one) of each gate vector, ranked
/// by `log_alpha` with ties going to the lower index. The result computes
/// the same function as the masked network evaluated with
/// `GateMode::TopK(target)`.
pub fn export_pruned(params: &TmlpParams<f32>, target: f64) -> Result<PrunedModel, ModelError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(ModelError::BadConfig(format!("target sparsity {target} outside (0, 1]")));
    }
    let mut hidden = Vec::new();
    let mut inter = Vec::new();
    let mut blocks = Vec::new();
    for b in &params.blocks {
        let h = kept(&b.log_alpha_h, target);
        let i = kept(&b.log_alpha_in, target);
        blocks.push(prune_block(b, &h, &i));
        hidden.push(h);
        inter.push(i);
    }
    let mut arch = params.arch.clone();
    arch.d_ff = kept_units(target, params.arch.d_ff);
    Ok(PrunedModel {
        params: TmlpParams {
            arch,
            tokenizer: params.tokenizer.clone(),
            blocks,
            head: params.head.clone(),
        },
        hidden,
        inter,
    })
}

impl PrunedModel {
    pub fn selections(&self) -> Vec<Selection<f32>> {
        self.hidden.iter().zip(&self.inter).map(|(h, i)| Selection::pruned(h, i.len())).collect()
    }

    /// Probabilities or standardized predictions, `N × n_out`.
    pub fn predict(&self, x_num: &Matrix<f32>, x_cat: &[u32], alpha_hat: Option<&Matrix<f32>>, batch_size: usize) -> Result<Matrix<f32>, ModelError> {
        predict_with(&self.params, &self.selections(), x_num, x_cat, alpha_hat, batch_size)
    }

    /// Weight count of W1 and W2 over all blocks.
    pub fn mlp_weights(&self) -> usize {
        self.params.blocks.iter().map(|b| b.w1.as_slice().len() + b.w2.as_slice().len()).sum()
    }
}

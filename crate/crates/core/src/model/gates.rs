//! Hard-concrete pruning gates, the expected retained ratio and the
//! Lagrangian sparsity penalty.

use serde::{Deserialize, Serialize};

use crate::nn::{RngStream, Scalar};

/// Temperature of the hard-concrete distribution.
pub const BETA: f64 = 2.0 / 3.0;
/// Lower stretch limit.
pub const GAMMA: f64 = -0.1;
/// Upper stretch limit.
pub const ZETA: f64 = 1.1;

fn sigmoid(x: f64) -> f64 {
    crate::nn::ops::sigmoid(x)
}

/// `β·ln(−γ/ζ)`, the offset between `log_alpha` and the logit of P(z > 0).
fn l0_shift() -> f64 {
    BETA * (-GAMMA / ZETA).ln()
}

/// Probability that a gate is non-zero, `sigmoid(log_alpha − β·ln(−γ/ζ))`.
pub fn expected_l0(log_alpha: f64) -> f64 {
    sigmoid(log_alpha - l0_shift())
}

/// Derivative of [`expected_l0`] with respect to `log_alpha`.
pub fn expected_l0_grad(log_alpha: f64) -> f64 {
    let q = expected_l0(log_alpha);
    q * (1.0 - q)
}

/// One stochastic gate from a uniform draw `u ∈ (0, 1)`: returns `z` and
/// `dz/dlog_alpha` (zero wherever the clamp is active).
pub fn sample_gate(log_alpha: f64, u: f64) -> (f64, f64) {
    let s = sigmoid(((u / (1.0 - u)).ln() + log_alpha) / BETA);
    stretch(s, s * (1.0 - s) / BETA)
}

/// Inference-time gate `clamp(sigmoid(log_alpha)·(ζ−γ)+γ, 0, 1)` and its
/// derivative.
pub fn deterministic_gate(log_alpha: f64) -> (f64, f64) {
    let s = sigmoid(log_alpha);
    stretch(s, s * (1.0 - s))
}

fn stretch(s: f64, ds: f64) -> (f64, f64) {
    let raw = s * (ZETA - GAMMA) + GAMMA;
    if raw <= 0.0 {
        (0.0, 0.0)
    } else if raw >= 1.0 {
        (1.0, 0.0)
    } else {
        (raw, ds * (ZETA - GAMMA))
    }
}

/// Indicator of the `k` largest `log_alpha` entries; ties go to the lower
/// index.
pub fn top_k_mask(log_alpha: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..log_alpha.len()).collect();
    order.sort_by(|&a, &b| log_alpha[b].total_cmp(&log_alpha[a]).then(a.cmp(&b)));
    let mut mask = vec![false; log_alpha.len()];
    for &i in order.iter().take(k) {
        mask[i] = true;
    }
    mask
}

/// Kept count for a retention target: `round(t·n)`, at least one.
pub fn kept_units(target: f64, n: usize) -> usize {
    ((target * n as f64).round() as usize).clamp(1, n)
}

/// How pruning gates are turned into masks for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateMode {
    /// Every gate fixed at one (sparsity disabled).
    Open,
    /// Stochastic hard-concrete samples (training).
    Sample,
    /// `clamp(sigmoid(log_alpha)·(ζ−γ)+γ, 0, 1)`, differentiable.
    Deterministic,
    /// Binary top-k masks with `k = round(t·n)`; used for evaluation and
    /// export.
    TopK(f64),
}

/// Gate values and their derivatives with respect to `log_alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateValues<T> {
    pub z: Vec<T>,
    pub dz: Vec<T>,
}

impl<T: Scalar> GateValues<T> {
    pub fn ones(n: usize) -> Self {
        Self {
            z: vec![T::ONE; n],
            dz: vec![T::ZERO; n],
        }
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        Self {
            z: mask.iter().map(|&m| if m { T::ONE } else { T::ZERO }).collect(),
            dz: vec![T::ZERO; mask.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

pub fn gate_values<T: Scalar>(
    log_alpha: &[T],
    mode: GateMode,
    rng: &mut RngStream,
) -> GateValues<T> {
    let n = log_alpha.len();
    let la: Vec<f64> = log_alpha.iter().map(|v| v.to_f64()).collect();
    match mode {
        GateMode::Open => GateValues::ones(n),
        GateMode::TopK(t) => GateValues::from_mask(&top_k_mask(&la, kept_units(t, n))),
        GateMode::Deterministic => {
            let (z, dz) = la.iter().map(|&a| deterministic_gate(a)).unzip::<_, _, Vec<_>, Vec<_>>();
            GateValues {
                z: z.into_iter().map(T::of).collect(),
                dz: dz.into_iter().map(T::of).collect(),
            }
        }
        GateMode::Sample => {
            let mut z = Vec::with_capacity(n);
            let mut dz = Vec::with_capacity(n);
            for &a in &la {
                let (zi, di) = sample_gate(a, rng.uniform_open());
                z.push(T::of(zi));
                dz.push(T::of(di));
            }
            GateValues { z, dz }
        }
    }
}

/// Retained fraction of W1/W2 parameters given per-gate keep expectations:
/// `(Σq_h·2d′ + Σq_in·d) / (d·2d′ + d′·d)`, summed over blocks.
pub fn retained_ratio(blocks: &[(Vec<f64>, Vec<f64>)], d: usize, d_ff: usize) -> f64 {
    let (d, d_ff) = (d as f64, d_ff as f64);
    let mut kept = 0.0;
    for (q_h, q_in) in blocks {
        kept += q_h.iter().sum::<f64>() * 2.0 * d_ff + q_in.iter().sum::<f64>() * d;
    }
    kept / (blocks.len() as f64 * 3.0 * d * d_ff)
}

/// Lagrangian term `λ1(ŝ−t) + λ2(ŝ−t)²` with its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Penalty {
    pub value: f64,
    pub d_ratio: f64,
    pub d_lambda1: f64,
    pub d_lambda2: f64,
}

pub fn lagrangian_penalty(ratio: f64, target: f64, lambda1: f64, lambda2: f64) -> Penalty {
    let e = ratio - target;
    Penalty {
        value: lambda1 * e + lambda2 * e * e,
        d_ratio: lambda1 + 2.0 * lambda2 * e,
        d_lambda1: e,
        d_lambda2: e * e,
    }
}

/// Multipliers of the sparsity constraint.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Default)]
pub struct Multipliers {
    pub lambda1: f64,
    pub lambda2: f64,
}

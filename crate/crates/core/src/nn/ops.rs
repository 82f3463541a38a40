//! Forward and backward rules for the primitives of the T-MLP graph.
//!
//! Every forward function returns whatever its backward counterpart needs;
//! backward functions take the upstream gradient and return gradients for
//! inputs and parameters.

use super::matrix::{matmul, matmul_nt, matmul_tn, Matrix, Scalar};
use super::NnError;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = x · w + b`
pub fn linear<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Result<Matrix<T>, NnError> {
    let mut y = matmul(x, w)?;
    y.add_row_vector(b)?;
    Ok(y)
}

pub struct LinearGrads<T> {
    pub dx: Matrix<T>,
    pub dw: Matrix<T>,
    pub db: Vec<T>,
}

pub fn linear_backward<T: Scalar>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    dy: &Matrix<T>,
) -> Result<LinearGrads<T>, NnError> {
    Ok(LinearGrads {
        dx: matmul_nt(dy, w)?,
        dw: matmul_tn(x, dy)?,
        db: dy.column_sums(),
    })
}

/// Saved statistics of a row-wise layer normalization.
pub struct LayerNormCache<T> {
    normalized: Matrix<T>,
    inv_std: Vec<T>,
    /// Per-column statistic weights and their sum; `None` is the plain case.
    weights: Option<(Vec<T>, T)>,
}

impl<T: Scalar> LayerNormCache<T> {
    pub fn normalized(&self) -> &Matrix<T> {
        &self.normalized
    }
}

/// Row-wise layer normalization followed by an affine map.
pub fn layer_norm<T: Scalar>(
    x: &Matrix<T>,
    gain: &[T],
    bias: &[T],
) -> Result<(Matrix<T>, LayerNormCache<T>), NnError> {
    weighted_layer_norm(x, None, gain, bias)
}

/// Layer normalization whose mean and variance are computed with per-column
/// weights `w`: `μ = Σ w·x / Σ w`, `σ² = Σ w·(x−μ)² / Σ w`.
///
/// With all weights equal to one this is plain layer normalization; with
/// binary weights it equals layer normalization over the selected columns.
pub fn weighted_layer_norm<T: Scalar>(
    x: &Matrix<T>,
    weights: Option<&[T]>,
    gain: &[T],
    bias: &[T],
) -> Result<(Matrix<T>, LayerNormCache<T>), NnError> {
    let cols = x.cols();
    if gain.len() != cols || bias.len() != cols || weights.is_some_and(|w| w.len() != cols) {
        return Err(NnError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape(),
            rhs: (1, gain.len()),
        });
    }
    let eps = T::of(LAYER_NORM_EPS);
    let weight_sum = match weights {
        Some(w) => w.iter().copied().sum::<T>().max(T::of(1e-12)),
        None => T::of(cols as f64),
    };
    let mut normalized = Matrix::zeros(x.rows(), cols);
    let mut out = Matrix::zeros(x.rows(), cols);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let (mean, var) = match weights {
            Some(w) => {
                let mean = row.iter().zip(w).map(|(&a, &b)| a * b).sum::<T>() / weight_sum;
                let var = row
                    .iter()
                    .zip(w)
                    .map(|(&a, &b)| b * (a - mean) * (a - mean))
                    .sum::<T>()
                    / weight_sum;
                (mean, var)
            }
            None => {
                let mean = row.iter().copied().sum::<T>() / weight_sum;
                let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / weight_sum;
                (mean, var)
            }
        };
        let rstd = T::ONE / (var + eps).sqrt();
        inv_std.push(rstd);
        let nrow = normalized.row_mut(r);
        for (n, &a) in nrow.iter_mut().zip(row) {
            *n = (a - mean) * rstd;
        }
        let nrow = normalized.row(r);
        for ((o, &n), (&g, &b)) in out.row_mut(r).iter_mut().zip(nrow).zip(gain.iter().zip(bias)) {
            *o = n * g + b;
        }
    }
    let cache = LayerNormCache {
        normalized,
        inv_std,
        weights: weights.map(|w| (w.to_vec(), weight_sum)),
    };
    Ok((out, cache))
}

pub struct LayerNormGrads<T> {
    pub dx: Matrix<T>,
    pub dgain: Vec<T>,
    pub dbias: Vec<T>,
    /// Gradient with respect to the statistic weights (weighted variant only).
    pub dweights: Option<Vec<T>>,
}

pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &[T],
    dy: &Matrix<T>,
) -> LayerNormGrads<T> {
    let (rows, cols) = cache.normalized.shape();
    let mut dx = Matrix::zeros(rows, cols);
    let mut dgain = vec![T::ZERO; cols];
    let mut dbias = vec![T::ZERO; cols];
    let mut dweights = cache.weights.as_ref().map(|_| vec![T::ZERO; cols]);
    let eps = T::of(LAYER_NORM_EPS);
    let half = T::of(0.5);
    let mut dn = vec![T::ZERO; cols];
    for r in 0..rows {
        let n = cache.normalized.row(r);
        let g = dy.row(r);
        for j in 0..cols {
            dgain[j] += g[j] * n[j];
            dbias[j] += g[j];
            dn[j] = g[j] * gain[j];
        }
        let sum_dn = dn.iter().copied().sum::<T>();
        let sum_dn_n = dn.iter().zip(n).map(|(&a, &b)| a * b).sum::<T>();
        let rstd = cache.inv_std[r];
        let dxr = dx.row_mut(r);
        match &cache.weights {
            None => {
                let inv = T::ONE / T::of(cols as f64);
                for j in 0..cols {
                    dxr[j] = rstd * (dn[j] - inv * (sum_dn + n[j] * sum_dn_n));
                }
            }
            Some((w, wsum)) => {
                let inv = T::ONE / *wsum;
                // r²σ² = σ²/(σ²+eps) = 1 − eps·r²
                let scaled_var = T::ONE - eps * rstd * rstd;
                let dw = dweights.as_mut().expect("weighted cache");
                for j in 0..cols {
                    dxr[j] = rstd * (dn[j] - w[j] * inv * (sum_dn + n[j] * sum_dn_n));
                    dw[j] -= inv * (n[j] * sum_dn + half * (n[j] * n[j] - scaled_var) * sum_dn_n);
                }
            }
        }
    }
    LayerNormGrads {
        dx,
        dgain,
        dbias,
        dweights,
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    T::of(0.5) * x * (T::ONE + (x * T::of(FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::ONE + (x * T::of(FRAC_1_SQRT_2)).erf());
    let pdf = T::of(FRAC_1_SQRT_2PI) * (-(x * x) * T::of(0.5)).exp();
    cdf + x * pdf
}

pub fn gelu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(gelu_scalar)
}

/// `dx = dy ⊙ GELU'(x)`, where `x` is the pre-activation.
pub fn gelu_backward<T: Scalar>(x: &Matrix<T>, dy: &Matrix<T>) -> Matrix<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *d *= gelu_grad_scalar(v);
    }
    dx
}

pub fn relu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| v.max(T::ZERO))
}

pub fn relu_backward<T: Scalar>(x: &Matrix<T>, dy: &Matrix<T>) -> Matrix<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if v <= T::ZERO {
            *d = T::ZERO;
        }
    }
    dx
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// Row-wise softmax.
pub fn softmax<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(row[0], T::max);
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
) -> Result<(T, Matrix<T>), NnError> {
    let (rows, classes) = logits.shape();
    if labels.len() != rows {
        return Err(NnError::ShapeMismatch {
            op: "softmax_cross_entropy",
            lhs: logits.shape(),
            rhs: (labels.len(), 1),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let mut grad = softmax(logits);
    let inv_n = T::ONE / T::of(rows.max(1) as f64);
    let mut loss = T::ZERO;
    for (r, &label) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        loss -= row[label].max(T::of(f64::MIN_POSITIVE)).ln();
        row[label] -= T::ONE;
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Mean squared error over a single-output prediction column.
pub fn mean_squared_error<T: Scalar>(
    pred: &Matrix<T>,
    target: &[T],
) -> Result<(T, Matrix<T>), NnError> {
    if pred.cols() != 1 || pred.rows() != target.len() {
        return Err(NnError::ShapeMismatch {
            op: "mean_squared_error",
            lhs: pred.shape(),
            rhs: (target.len(), 1),
        });
    }
    let n = T::of(target.len().max(1) as f64);
    let mut grad = Matrix::zeros(pred.rows(), 1);
    let mut loss = T::ZERO;
    for (i, (&p, &t)) in pred.as_slice().iter().zip(target).enumerate() {
        let diff = p - t;
        loss += diff * diff;
        grad.as_mut_slice()[i] = T::of(2.0) * diff / n;
    }
    Ok((loss / n, grad))
}

//! Forward and backward pass of one gated-MLP block.
//!
//! ```text
//! N1 = LN(H) ⊙ z_h
//! U | V = GELU(N1·W1 + c1)
//! S = (W3·LNw(U) + b3) ⊙ V          LNw: statistics weighted by z_in
//! out = H + dropout((S ⊙ z_in)·W2 + c2)
//! ```
//!
//! Units whose gate is exactly zero contribute nothing and receive no
//! gradient, so the pass only gathers the active hidden and intermediate
//! units. The same code runs the structurally pruned model, where the
//! selection simply lists the kept units.

use std::borrow::Cow;

use crate::nn::ops::{gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, weighted_layer_norm, LayerNormCache};
use crate::nn::{Matrix, NnError, RngStream, Scalar};

use super::gates::GateValues;
use super::params::BlockParams;

/// Units taking part in one block pass and their gate values.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection<T> {
    /// Columns of the normalized input that feed W1.
    pub hidden_cols: Vec<usize>,
    /// Matching rows of W1 (equal to `hidden_cols` unless W1 is pruned).
    pub hidden_rows: Vec<usize>,
    pub z_h: Vec<T>,
    pub dz_h: Vec<T>,
    /// Intermediate units, as indices into the block's d′.
    pub inter: Vec<usize>,
    pub z_in: Vec<T>,
    pub dz_in: Vec<T>,
}

impl<T: Scalar> Selection<T> {
    /// From gate values over all units. With `compact`, units whose gate is
    /// exactly zero are left out.
    pub fn from_gates(h: &GateValues<T>, inter: &GateValues<T>, compact: bool) -> Self {
        let keep = |g: &GateValues<T>| -> Vec<usize> {
            (0..g.len()).filter(|&i| !compact || g.z[i] != T::ZERO).collect()
        };
        let hidden = keep(h);
        let inner = keep(inter);
        Self {
            z_h: hidden.iter().map(|&i| h.z[i]).collect(),
            dz_h: hidden.iter().map(|&i| h.dz[i]).collect(),
            hidden_rows: hidden.clone(),
            hidden_cols: hidden,
            z_in: inner.iter().map(|&i| inter.z[i]).collect(),
            dz_in: inner.iter().map(|&i| inter.dz[i]).collect(),
            inter: inner,
        }
    }

    /// Every unit of a pruned block, with `hidden` mapping W1 rows back to
    /// input columns.
    pub fn pruned(hidden: &[usize], d_ff: usize) -> Self {
        Self {
            hidden_cols: hidden.to_vec(),
            hidden_rows: (0..hidden.len()).collect(),
            z_h: vec![T::ONE; hidden.len()],
            dz_h: vec![T::ZERO; hidden.len()],
            inter: (0..d_ff).collect(),
            z_in: vec![T::ONE; d_ff],
            dz_in: vec![T::ZERO; d_ff],
        }
    }

    fn covers_all(&self, w1: &Matrix<T>, d_ff: usize) -> bool {
        self.hidden_rows.len() == w1.rows()
            && self.inter.len() == d_ff
            && self.hidden_rows.iter().enumerate().all(|(i, &r)| i == r)
            && self.inter.iter().enumerate().all(|(i, &j)| i == j)
    }
}

pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    n1_active: Matrix<T>,
    n1_scaled: Matrix<T>,
    out_rows: Option<Vec<usize>>,
    u_cols: Vec<usize>,
    v_cols: Vec<usize>,
    w1u: Matrix<T>,
    w1v: Matrix<T>,
    pre_u: Matrix<T>,
    pre_v: Matrix<T>,
    v: Matrix<T>,
    ln2: LayerNormCache<T>,
    n2: Matrix<T>,
    m: Matrix<T>,
    s: Matrix<T>,
    sz: Matrix<T>,
    keep: Option<Vec<T>>,
}

/// `(I_B ⊗ W3)·X + b3`: mixes the token rows of every sample. With
/// `first_only` just the first (CLS) token row of each sample is produced.
fn mix_tokens<T: Scalar>(w3: &Matrix<T>, b3: &[T], x: &Matrix<T>, first_only: bool) -> Matrix<T> {
    let tokens = w3.rows();
    let out_tokens = if first_only { 1 } else { tokens };
    let samples = x.rows() / tokens;
    let mut out = Matrix::zeros(samples * out_tokens, x.cols());
    for s in 0..samples {
        for (t, &bias) in b3.iter().take(out_tokens).enumerate() {
            let orow = out.row_mut(s * out_tokens + t);
            orow.fill(bias);
            for u in 0..tokens {
                let w = w3.get(t, u);
                for (o, &v) in orow.iter_mut().zip(x.row(s * tokens + u)) {
                    *o += w * v;
                }
            }
        }
    }
    out
}

/// Runs one block. With `cls_only` the output holds only the CLS row of
/// every sample (`B × d` instead of `B·(1+F) × d`); that is all the head
/// reads after the last block, and it skips the V half, the token mixing
/// and W2 for every other token.
pub fn block_forward<T: Scalar>(
    p: &BlockParams<T>,
    h: &Matrix<T>,
    sel: &Selection<T>,
    cls_only: bool,
    dropout: Option<(f64, &mut RngStream)>,
) -> Result<(Matrix<T>, BlockCache<T>), NnError> {
    let tokens = p.w3.rows();
    let d_ff = p.d_ff();
    if !h.rows().is_multiple_of(tokens) {
        return Err(NnError::ShapeMismatch {
            op: "block_forward",
            lhs: h.shape(),
            rhs: p.w3.shape(),
        });
    }
    let out_rows = cls_only.then(|| (0..h.rows() / tokens).map(|s| s * tokens).collect::<Vec<_>>());
    let (n1, ln1) = layer_norm(h, p.ln1_gain.as_slice(), p.ln1_bias.as_slice())?;
    let n1_active = n1.select_cols(&sel.hidden_cols);
    drop(n1);
    let mut n1_scaled = n1_active.clone();
    n1_scaled.scale_columns(&sel.z_h);

    let u_cols = sel.inter.clone();
    let v_cols: Vec<usize> = sel.inter.iter().map(|&j| d_ff + j).collect();
    let w1u = p.w1.select(&sel.hidden_rows, &u_cols);
    let w1v = p.w1.select(&sel.hidden_rows, &v_cols);
    let bias = |cols: &[usize]| -> Vec<T> { cols.iter().map(|&c| p.c1.as_slice()[c]).collect() };
    let pre_u = linear(&n1_scaled, &w1u, &bias(&u_cols))?;
    let pre_v = match &out_rows {
        Some(r) => linear(&n1_scaled.select_rows(r), &w1v, &bias(&v_cols))?,
        None => linear(&n1_scaled, &w1v, &bias(&v_cols))?,
    };
    let u = gelu(&pre_u);
    let v = gelu(&pre_v);
    let g2: Vec<T> = sel.inter.iter().map(|&j| p.ln2_gain.as_slice()[j]).collect();
    let b2: Vec<T> = sel.inter.iter().map(|&j| p.ln2_bias.as_slice()[j]).collect();
    let (n2, ln2) = weighted_layer_norm(&u, Some(&sel.z_in), &g2, &b2)?;
    drop(u);
    let m = mix_tokens(&p.w3, p.b3.as_slice(), &n2, cls_only);
    let s = m.hadamard(&v)?;
    let mut sz = s.clone();
    sz.scale_columns(&sel.z_in);
    let w2a = if sel.covers_all(&p.w1, d_ff) {
        Cow::Borrowed(&p.w2)
    } else {
        Cow::Owned(p.w2.select_rows(&sel.inter))
    };
    let mut out = linear(&sz, &w2a, p.c2.as_slice())?;

    let keep = match dropout {
        Some((rate, rng)) if rate > 0.0 => {
            let scale = T::of(1.0 / (1.0 - rate));
            let cut = (rate * 4_294_967_296.0) as u64;
            let mask: Vec<T> = (0..out.as_slice().len())
                .map(|_| if (rng.next_u32() as u64) >= cut { scale } else { T::ZERO })
                .collect();
            for (o, &k) in out.as_mut_slice().iter_mut().zip(&mask) {
                *o *= k;
            }
            Some(mask)
        }
        _ => None,
    };
    match &out_rows {
        Some(r) => out.add_assign(&h.select_rows(r))?,
        None => out.add_assign(h)?,
    }
    debug_assert!(out.all_finite(), "non-finite block output");
    let cache = BlockCache {
        ln1,
        n1_active,
        n1_scaled,
        out_rows,
        u_cols,
        v_cols,
        w1u,
        w1v,
        pre_u,
        pre_v,
        v,
        ln2,
        n2,
        m,
        s,
        sz,
        keep,
    };
    Ok((out, cache))
}

/// Accumulates parameter gradients into `g` and returns the gradient with
/// respect to the block input. Gate gradients are chained through the
/// selection's `dz` into `g.log_alpha_*`.
pub fn block_backward<T: Scalar>(
    p: &BlockParams<T>,
    sel: &Selection<T>,
    cache: &BlockCache<T>,
    d_out: &Matrix<T>,
    g: &mut BlockParams<T>,
) -> Result<Matrix<T>, NnError> {
    let tokens = p.w3.rows();
    let out_tokens = if cache.out_rows.is_some() { 1 } else { tokens };
    let d_ff = p.d_ff();
    let k = sel.inter.len();
    let rows = cache.n1_scaled.rows();

    let mut d_branch = d_out.clone();
    if let Some(keep) = &cache.keep {
        for (a, &m) in d_branch.as_mut_slice().iter_mut().zip(keep) {
            *a *= m;
        }
    }
    let full = sel.covers_all(&p.w1, d_ff);
    let w2a = if full {
        Cow::Borrowed(&p.w2)
    } else {
        Cow::Owned(p.w2.select_rows(&sel.inter))
    };
    let lin2 = linear_backward(&cache.sz, &w2a, &d_branch)?;
    drop(d_branch);
    for (a, b) in g.c2.as_mut_slice().iter_mut().zip(&lin2.db) {
        *a += *b;
    }
    if full {
        g.w2.add_assign(&lin2.dw)?;
    } else {
        let all_cols: Vec<usize> = (0..p.w2.cols()).collect();
        g.w2.scatter_add(&sel.inter, &all_cols, &lin2.dw);
    }
    let d_sz = lin2.dx;

    let mut dz_in = vec![T::ZERO; k];
    for r in 0..d_sz.rows() {
        for ((acc, &s), &d) in dz_in.iter_mut().zip(cache.s.row(r)).zip(d_sz.row(r)) {
            *acc += s * d;
        }
    }
    let mut d_s = d_sz;
    d_s.scale_columns(&sel.z_in);
    let d_m = d_s.hadamard(&cache.v)?;
    let d_v = d_s.hadamard(&cache.m)?;
    drop(d_s);

    // token mixing: M_s = W3·N2_s + b3
    let mut d_n2 = Matrix::zeros(rows, k);
    for s in 0..rows / tokens {
        for t in 0..out_tokens {
            let dm_row = d_m.row(s * out_tokens + t);
            g.b3.as_mut_slice()[t] += dm_row.iter().copied().sum::<T>();
            for u in 0..tokens {
                let n2_row = cache.n2.row(s * tokens + u);
                let dot = dm_row.iter().zip(n2_row).map(|(&a, &b)| a * b).sum::<T>();
                let cur = g.w3.get(t, u);
                g.w3.set(t, u, cur + dot);
                let w = p.w3.get(t, u);
                for (o, &a) in d_n2.row_mut(s * tokens + u).iter_mut().zip(dm_row) {
                    *o += w * a;
                }
            }
        }
    }
    drop(d_m);
    let g2: Vec<T> = sel.inter.iter().map(|&j| p.ln2_gain.as_slice()[j]).collect();
    let ln2g = layer_norm_backward(&cache.ln2, &g2, &d_n2);
    drop(d_n2);
    for (i, &j) in sel.inter.iter().enumerate() {
        g.ln2_gain.as_mut_slice()[j] += ln2g.dgain[i];
        g.ln2_bias.as_mut_slice()[j] += ln2g.dbias[i];
    }
    if let Some(dw) = &ln2g.dweights {
        for (acc, &d) in dz_in.iter_mut().zip(dw) {
            *acc += d;
        }
    }
    for (i, &j) in sel.inter.iter().enumerate() {
        g.log_alpha_in.as_mut_slice()[j] += dz_in[i] * sel.dz_in[i];
    }

    let d_pre_u = gelu_backward(&cache.pre_u, &ln2g.dx);
    let d_pre_v = gelu_backward(&cache.pre_v, &d_v);
    drop(d_v);
    let lin_u = linear_backward(&cache.n1_scaled, &cache.w1u, &d_pre_u)?;
    drop(d_pre_u);
    let lin_v = match &cache.out_rows {
        Some(r) => linear_backward(&cache.n1_scaled.select_rows(r), &cache.w1v, &d_pre_v)?,
        None => linear_backward(&cache.n1_scaled, &cache.w1v, &d_pre_v)?,
    };
    for (cols, lin) in [(&cache.u_cols, &lin_u), (&cache.v_cols, &lin_v)] {
        for (&c, &d) in cols.iter().zip(&lin.db) {
            g.c1.as_mut_slice()[c] += d;
        }
        g.w1.scatter_add(&sel.hidden_rows, cols, &lin.dw);
    }
    let mut d_scaled = lin_u.dx;
    match &cache.out_rows {
        Some(r) => {
            for (i, &row) in r.iter().enumerate() {
                for (a, &b) in d_scaled.row_mut(row).iter_mut().zip(lin_v.dx.row(i)) {
                    *a += b;
                }
            }
        }
        None => d_scaled.add_assign(&lin_v.dx)?,
    }

    let kh = sel.hidden_cols.len();
    let mut dz_h = vec![T::ZERO; kh];
    let d = p.ln1_gain.cols();
    let mut d_n1 = Matrix::zeros(rows, d);
    for r in 0..rows {
        let dn = d_scaled.row(r);
        let na = cache.n1_active.row(r);
        let out = d_n1.row_mut(r);
        for i in 0..kh {
            dz_h[i] += na[i] * dn[i];
            out[sel.hidden_cols[i]] = dn[i] * sel.z_h[i];
        }
    }
    for (i, &j) in sel.hidden_rows.iter().enumerate() {
        g.log_alpha_h.as_mut_slice()[j] += dz_h[i] * sel.dz_h[i];
    }
    let ln1g = layer_norm_backward(&cache.ln1, p.ln1_gain.as_slice(), &d_n1);
    for (a, b) in g.ln1_gain.as_mut_slice().iter_mut().zip(&ln1g.dgain) {
        *a += *b;
    }
    for (a, b) in g.ln1_bias.as_mut_slice().iter_mut().zip(&ln1g.dbias) {
        *a += *b;
    }
    let mut d_h = ln1g.dx;
    match &cache.out_rows {
        Some(r) => {
            for (i, &row) in r.iter().enumerate() {
                for (a, &b) in d_h.row_mut(row).iter_mut().zip(d_out.row(i)) {
                    *a += b;
                }
            }
        }
        None => d_h.add_assign(d_out)?,
    }
    Ok(d_h)
}

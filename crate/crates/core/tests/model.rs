#![allow(clippy::needless_range_loop)]

use tmlp::data::TaskType;
use tmlp::model::block::block_forward;
use tmlp::model::gates::{gate_values, GateMode, GateValues};
use tmlp::model::network::{backward, forward, task_loss, tokenize};
use tmlp::model::train::{expected_retained_ratio, predict, SparsityController};
use tmlp::model::{export_pruned, train, Arch, Inputs, ModelError, ParamGroup, Selection, TmlpParams, TrainConfig, TrainData};
use tmlp::nn::{AdamW, Matrix, RngStream};

fn arch(task: TaskType, n_out: usize, n_blocks: usize) -> Arch {
    Arch {
        d: 8,
        d_ff: 6,
        n_num: 2,
        cat_cardinalities: vec![3],
        n_blocks,
        task,
        n_out,
    }
}

/// Random parameters away from the initial symmetric values, with gate
/// logits spread over the differentiable range and one gate shut.
fn random_params(arch: Arch, seed: u64) -> TmlpParams<f64> {
    let mut rng = RngStream::new(seed, 99);
    let mut p = TmlpParams::<f64>::init(arch, &mut rng);
    for (name, _, m) in p.tensors_mut() {
        for v in m.as_mut_slice() {
            *v = if name.contains("log_alpha") {
                -2.0 + 4.0 * rng.uniform()
            } else if name.contains("gain") {
                0.5 + rng.uniform()
            } else {
                *v + 0.4 * (rng.uniform() - 0.5)
            };
        }
    }
    for b in &mut p.blocks {
        b.log_alpha_h.as_mut_slice()[1] = -6.0;
    }
    p
}

fn det_gate(la: f64) -> f64 {
    (1.0 / (1.0 + (-la).exp()) * 1.2 - 0.1).clamp(0.0, 1.0)
}

fn batch() -> (Matrix<f64>, Vec<u32>, Matrix<f64>) {
    let x_num = Matrix::from_vec(3, 2, vec![0.3, -1.2, 1.5, 0.7, -0.4, 0.05]).unwrap();
    let x_cat = vec![0, 2, 1];
    let scale = Matrix::from_vec(3, 3, vec![1.0, 0.5, 0.0, 0.25, 1.0, 0.75, 0.6, 0.0, 1.0]).unwrap();
    (x_num, x_cat, scale)
}

fn det_selections(p: &TmlpParams<f64>) -> Vec<Selection<f64>> {
    let mut rng = RngStream::new(0, 0);
    p.blocks
        .iter()
        .map(|b| {
            let h = gate_values(b.log_alpha_h.as_slice(), GateMode::Deterministic, &mut rng);
            let i = gate_values(b.log_alpha_in.as_slice(), GateMode::Deterministic, &mut rng);
            Selection::from_gates(&h, &i, true)
        })
        .collect()
}

fn ln(x: &[f64], w: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let ws: f64 = w.iter().sum();
    let mu = x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() / ws;
    let var = x.iter().zip(w).map(|(a, c)| c * (a - mu).powi(2)).sum::<f64>() / ws;
    x.iter().zip(g).zip(b).map(|((a, g), b)| (a - mu) / (var + 1e-5).sqrt() * g + b).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

/// Straight loop evaluation of the whole network for one sample.
fn reference(p: &TmlpParams<f64>, x_num: &[f64], x_cat: &[u32], scale: &[f64]) -> Vec<f64> {
    let a = &p.arch;
    let (d, dff) = (a.d, a.d_ff);
    let t = &p.tokenizer;
    let mut h: Vec<Vec<f64>> = vec![t.cls.row(0).to_vec()];
    for j in 0..a.n_num {
        h.push((0..d).map(|c| (x_num[j] * t.w_num.get(j, c) + t.b_num.get(j, c)) * scale[j]).collect());
    }
    let mut off = 0;
    for (k, &card) in a.cat_cardinalities.iter().enumerate() {
        let s = scale[a.n_num + k];
        h.push((0..d).map(|c| t.emb.get(off + x_cat[k] as usize, c) * s).collect());
        off += card;
    }
    let ones = vec![1.0; d];
    for blk in &p.blocks {
        let zh: Vec<f64> = blk.log_alpha_h.as_slice().iter().map(|&v| det_gate(v)).collect();
        let zi: Vec<f64> = blk.log_alpha_in.as_slice().iter().map(|&v| det_gate(v)).collect();
        let mut u = Vec::new();
        let mut v = Vec::new();
        for tok in &h {
            let n1 = ln(tok, &ones, blk.ln1_gain.as_slice(), blk.ln1_bias.as_slice());
            let pre: Vec<f64> = (0..2 * dff)
                .map(|o| blk.c1.get(0, o) + (0..d).map(|i| n1[i] * zh[i] * blk.w1.get(i, o)).sum::<f64>())
                .collect();
            let act: Vec<f64> = pre.into_iter().map(gelu).collect();
            u.push(ln(&act[..dff], &zi, blk.ln2_gain.as_slice(), blk.ln2_bias.as_slice()));
            v.push(act[dff..].to_vec());
        }
        let n_tok = h.len();
        let mut next = h.clone();
        for ti in 0..n_tok {
            let s: Vec<f64> = (0..dff)
                .map(|j| (blk.b3.get(0, ti) + (0..n_tok).map(|ui| blk.w3.get(ti, ui) * u[ui][j]).sum::<f64>()) * v[ti][j] * zi[j])
                .collect();
            for c in 0..d {
                next[ti][c] += blk.c2.get(0, c) + (0..dff).map(|j| s[j] * blk.w2.get(j, c)).sum::<f64>();
            }
        }
        h = next;
    }
    let hd = &p.head;
    let n = ln(&h[0], &ones, hd.ln_gain.as_slice(), hd.ln_bias.as_slice());
    (0..a.n_out)
        .map(|o| hd.b.get(0, o) + (0..d).map(|i| n[i].max(0.0) * hd.w.get(i, o)).sum::<f64>())
        .collect()
}

#[test]
fn forward_matches_scalar_reference() {
    let p = random_params(arch(TaskType::Multiclass, 3, 2), 1);
    let (x_num, x_cat, scale) = batch();
    let inputs = Inputs {
        x_num: &x_num,
        x_cat: &x_cat,
        feature_scale: Some(&scale),
    };
    let (out, _) = forward(&p, &inputs, &det_selections(&p), None).unwrap();
    for s in 0..3 {
        let want = reference(&p, x_num.row(s), &x_cat[s..s + 1], scale.row(s));
        for (o, w) in out.row(s).iter().zip(&want) {
            assert!((o - w).abs() < 1e-10, "{o} vs {w}");
        }
    }
    // f32 agrees to single precision
    let p32 = p.cast::<f32>();
    let sel32 = det_selections(&p32.cast::<f64>())
        .into_iter()
        .map(|s| Selection {
            hidden_cols: s.hidden_cols,
            hidden_rows: s.hidden_rows,
            z_h: s.z_h.iter().map(|&v| v as f32).collect(),
            dz_h: s.dz_h.iter().map(|&v| v as f32).collect(),
            inter: s.inter,
            z_in: s.z_in.iter().map(|&v| v as f32).collect(),
            dz_in: s.dz_in.iter().map(|&v| v as f32).collect(),
        })
        .collect::<Vec<_>>();
    let (xn32, sc32) = (x_num.cast::<f32>(), scale.cast::<f32>());
    let in32 = Inputs {
        x_num: &xn32,
        x_cat: &x_cat,
        feature_scale: Some(&sc32),
    };
    let (out32, _) = forward(&p32, &in32, &sel32, None).unwrap();
    for (a, b) in out32.as_slice().iter().zip(out.as_slice()) {
        assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
    }
}

fn loss_of(p: &TmlpParams<f64>, x: &Inputs<'_, f64>, y: &[f64]) -> f64 {
    let (out, _) = forward(p, x, &det_selections(p), None).unwrap();
    task_loss(p.arch.task, &out, y).unwrap().0
}

fn gradient_check(p: TmlpParams<f64>, y: &[f64]) {
    let (x_num, x_cat, scale) = batch();
    let x = Inputs {
        x_num: &x_num,
        x_cat: &x_cat,
        feature_scale: Some(&scale),
    };
    let sel = det_selections(&p);
    let (out, cache) = forward(&p, &x, &sel, None).unwrap();
    let (_, d_out) = task_loss(p.arch.task, &out, y).unwrap();
    let mut grads = p.zeros_like();
    backward(&p, &x, &sel, &cache, &d_out, &mut grads).unwrap();

    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, _, m)| (n, m.as_slice().to_vec())).collect();
    let eps = 1e-6;
    let mut checked = 0;
    for (ti, (name, g)) in analytic.iter().enumerate() {
        for (e, &ga) in g.iter().enumerate() {
            let mut plus = p.clone();
            plus.tensors_mut()[ti].2.as_mut_slice()[e] += eps;
            let mut minus = p.clone();
            minus.tensors_mut()[ti].2.as_mut_slice()[e] -= eps;
            let fd = (loss_of(&plus, &x, y) - loss_of(&minus, &x, y)) / (2.0 * eps);
            let tol = 1e-6 + 1e-4 * fd.abs().max(ga.abs());
            assert!((fd - ga).abs() < tol, "{name}[{e}]: analytic {ga}, numeric {fd}");
            checked += 1;
        }
    }
    assert_eq!(checked, p.n_parameters());
}

#[test]
fn gradients_match_finite_differences_classification() {
    gradient_check(random_params(arch(TaskType::Multiclass, 3, 2), 2), &[2.0, 0.0, 1.0]);
}

#[test]
fn gradients_match_finite_differences_regression() {
    gradient_check(random_params(arch(TaskType::Regression, 1, 1), 3), &[0.4, -1.1, 2.0]);
}

#[test]
fn gate_gradients_are_nonzero_inside_the_stretch() {
    let p = random_params(arch(TaskType::Multiclass, 3, 1), 4);
    let (x_num, x_cat, scale) = batch();
    let x = Inputs {
        x_num: &x_num,
        x_cat: &x_cat,
        feature_scale: Some(&scale),
    };
    let sel = det_selections(&p);
    let (out, cache) = forward(&p, &x, &sel, None).unwrap();
    let (_, d_out) = task_loss(p.arch.task, &out, &[0.0, 1.0, 2.0]).unwrap();
    let mut g = p.zeros_like();
    backward(&p, &x, &sel, &cache, &d_out, &mut g).unwrap();
    // the shut gate gets nothing, the others do
    assert_eq!(g.blocks[0].log_alpha_h.get(0, 1), 0.0);
    assert!(g.blocks[0].log_alpha_h.as_slice().iter().filter(|v| **v != 0.0).count() >= 6);
    assert!(g.blocks[0].log_alpha_in.as_slice().iter().any(|v| *v != 0.0));
}

fn full_selection(p: &TmlpParams<f64>) -> Selection<f64> {
    Selection::from_gates(&GateValues::ones(p.arch.d), &GateValues::ones(p.arch.d_ff), true)
}

fn tokens(p: &TmlpParams<f64>) -> Matrix<f64> {
    let (x_num, x_cat, _) = batch();
    let x = Inputs {
        x_num: &x_num,
        x_cat: &x_cat,
        feature_scale: None,
    };
    tokenize(&p.arch, &p.tokenizer, &x).unwrap()
}

#[test]
fn zero_output_projection_is_identity() {
    let mut p = random_params(arch(TaskType::Regression, 1, 1), 5);
    p.blocks[0].w2.as_mut_slice().fill(0.0);
    p.blocks[0].c2.as_mut_slice().fill(0.0);
    let h = tokens(&p);
    let (out, _) = block_forward(&p.blocks[0], &h, &full_selection(&p), false, None).unwrap();
    assert_eq!(out, h);
}

#[test]
fn cls_only_pass_matches_the_cls_rows_of_the_full_pass() {
    let p = random_params(arch(TaskType::Multiclass, 3, 1), 12);
    let h = tokens(&p);
    let sel = det_selections(&p).remove(0);
    let (full, _) = block_forward(&p.blocks[0], &h, &sel, false, None).unwrap();
    let (cls, _) = block_forward(&p.blocks[0], &h, &sel, true, None).unwrap();
    let tokens = p.arch.n_tokens();
    assert_eq!(cls.rows(), h.rows() / tokens);
    for s in 0..cls.rows() {
        for (a, b) in cls.row(s).iter().zip(full.row(s * tokens)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn closed_intermediate_gates_leave_only_the_bias() {
    let p = random_params(arch(TaskType::Regression, 1, 1), 6);
    let h = tokens(&p);
    let sel = Selection::from_gates(&GateValues::ones(8), &GateValues::from_mask(&[false; 6]), true);
    let (out, _) = block_forward(&p.blocks[0], &h, &sel, false, None).unwrap();
    let mut want = h.clone();
    want.add_row_vector(p.blocks[0].c2.as_slice()).unwrap();
    assert_eq!(out, want);
}

#[test]
fn closed_hidden_gates_make_the_branch_input_independent() {
    let p = random_params(arch(TaskType::Regression, 1, 1), 7);
    let sel = Selection::from_gates(&GateValues::from_mask(&[false; 8]), &GateValues::ones(6), true);
    let h1 = tokens(&p);
    let h2 = h1.map(|v| 3.0 * v - 1.0);
    let (o1, _) = block_forward(&p.blocks[0], &h1, &sel, false, None).unwrap();
    let (o2, _) = block_forward(&p.blocks[0], &h2, &sel, false, None).unwrap();
    for r in 0..h1.rows() {
        for c in 0..8 {
            let b1 = o1.get(r, c) - h1.get(r, c);
            let b2 = o2.get(r, c) - h2.get(r, c);
            assert!((b1 - b2).abs() < 1e-12);
        }
    }
}

#[test]
fn tokenizer_shape_bias_and_linearity() {
    let p = random_params(arch(TaskType::Regression, 1, 1), 8);
    let zero = Matrix::zeros(2, 2);
    let x = Inputs {
        x_num: &zero,
        x_cat: &[1, 2],
        feature_scale: None,
    };
    let t0 = tokenize(&p.arch, &p.tokenizer, &x).unwrap();
    assert_eq!(t0.shape(), (2 * 4, 8));
    assert_eq!(t0.row(1), p.tokenizer.b_num.row(0));
    assert_eq!(t0.row(6), p.tokenizer.b_num.row(1));
    assert_eq!(t0.row(0), p.tokenizer.cls.row(0));
    assert_eq!(t0.row(7), p.tokenizer.emb.row(2));

    let xa = Matrix::from_vec(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let xb = xa.map(|v| 2.0 * v);
    let ta = tokenize(&p.arch, &p.tokenizer, &Inputs { x_num: &xa, ..x }).unwrap();
    let tb = tokenize(&p.arch, &p.tokenizer, &Inputs { x_num: &xb, ..x }).unwrap();
    for r in [1, 2, 5, 6] {
        for c in 0..8 {
            let lhs = tb.get(r, c) - t0.get(r, c);
            let rhs = 2.0 * (ta.get(r, c) - t0.get(r, c));
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}

#[test]
fn unit_feature_scale_changes_nothing() {
    let p = random_params(arch(TaskType::Multiclass, 3, 1), 9);
    let (x_num, x_cat, _) = batch();
    let ones = Matrix::filled(3, 3, 1.0);
    let a = tokenize(&p.arch, &p.tokenizer, &Inputs { x_num: &x_num, x_cat: &x_cat, feature_scale: None }).unwrap();
    let b = tokenize(&p.arch, &p.tokenizer, &Inputs { x_num: &x_num, x_cat: &x_cat, feature_scale: Some(&ones) }).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_feature_scale_blocks_the_token_and_its_gradient() {
    let p = random_params(arch(TaskType::Multiclass, 3, 1), 10);
    let (x_num, x_cat, _) = batch();
    let mut scale = Matrix::filled(3, 3, 1.0);
    for s in 0..3 {
        scale.set(s, 1, 0.0);
    }
    let x = Inputs {
        x_num: &x_num,
        x_cat: &x_cat,
        feature_scale: Some(&scale),
    };
    let t = tokenize(&p.arch, &p.tokenizer, &x).unwrap();
    for s in 0..3 {
        assert!(t.row(s * 4 + 2).iter().all(|v| *v == 0.0));
    }
    let sel = det_selections(&p);
    let (out, cache) = forward(&p, &x, &sel, None).unwrap();
    let (_, d_out) = task_loss(p.arch.task, &out, &[0.0, 1.0, 2.0]).unwrap();
    let mut g = p.zeros_like();
    backward(&p, &x, &sel, &cache, &d_out, &mut g).unwrap();
    assert!(g.tokenizer.w_num.row(1).iter().all(|v| *v == 0.0));
    assert!(g.tokenizer.b_num.row(1).iter().all(|v| *v == 0.0));
    assert!(g.tokenizer.w_num.row(0).iter().any(|v| *v != 0.0));
}

#[test]
fn out_of_vocabulary_code_is_rejected() {
    let p = random_params(arch(TaskType::Regression, 1, 1), 11);
    let x_num = Matrix::zeros(1, 2);
    let err = tokenize(&p.arch, &p.tokenizer, &Inputs { x_num: &x_num, x_cat: &[3], feature_scale: None }).unwrap_err();
    assert_eq!(
        err,
        ModelError::IndexOutOfVocabulary {
            feature: 0,
            code: 3,
            cardinality: 3
        }
    );
}

#[test]
fn controller_reaches_target_without_task_gradient() {
    let a = Arch {
        d: 64,
        d_ff: 48,
        n_num: 3,
        cat_cardinalities: vec![],
        n_blocks: 2,
        task: TaskType::Regression,
        n_out: 1,
    };
    let mut p = TmlpParams::<f32>::init(a, &mut RngStream::new(5, 0));
    assert!(expected_retained_ratio(&p) > 0.95);
    let mut ctl = SparsityController::new(0.33, (0.003, 0.3), 0);
    let mut opt = AdamW::<f32>::new(0.05, 0.0);
    let mut g = p.zeros_like();
    let mut within = Vec::new();
    for _ in 0..2000 {
        for (_, _, m) in g.tensors_mut() {
            m.as_mut_slice().fill(0.0);
        }
        let (ratio, _) = ctl.apply(&p, &mut g);
        within.push((ratio - 0.33).abs() <= 0.03);
        opt.step(&mut p.group_slices_mut(ParamGroup::Gates), &g.group_slices(ParamGroup::Gates)).unwrap();
    }
    assert!((expected_retained_ratio(&p) - 0.33).abs() <= 0.03);
    assert!(within[1800..].iter().all(|w| *w));
}

#[test]
fn controller_target_ramps_down_and_the_ratio_does_not_dive() {
    let a = Arch {
        d: 64,
        d_ff: 48,
        n_num: 3,
        cat_cardinalities: vec![],
        n_blocks: 1,
        task: TaskType::Regression,
        n_out: 1,
    };
    let mut p = TmlpParams::<f32>::init(a, &mut RngStream::new(6, 0));
    let mut ctl = SparsityController::new(0.33, (0.003, 0.3), 400);
    let mut opt = AdamW::<f32>::new(0.05, 0.0);
    let mut g = p.zeros_like();
    let mut lowest = 1.0f64;
    for step in 0..2000u64 {
        let t = ctl.current_target();
        match step {
            0 => assert_eq!(t, 1.0),
            200 => assert!((t - 0.665).abs() < 1e-12),
            s if s >= 400 => assert_eq!(t, 0.33),
            _ => {}
        }
        for (_, _, m) in g.tensors_mut() {
            m.as_mut_slice().fill(0.0);
        }
        let (ratio, _) = ctl.apply(&p, &mut g);
        lowest = lowest.min(ratio);
        opt.step(&mut p.group_slices_mut(ParamGroup::Gates), &g.group_slices(ParamGroup::Gates)).unwrap();
    }
    assert!((expected_retained_ratio(&p) - 0.33).abs() <= 0.03);
    assert!(lowest > 0.25, "ratio dived to {lowest}");
}

fn f32_params(seed: u64) -> TmlpParams<f32> {
    random_params(arch(TaskType::Multiclass, 3, 2), seed).cast()
}

fn f32_batch() -> (Matrix<f32>, Vec<u32>, Matrix<f32>) {
    let (x, c, s) = batch();
    (x.cast(), c, s.cast())
}

#[test]
fn pruned_model_matches_masked_model() {
    let p = f32_params(12);
    let (x_num, x_cat, scale) = f32_batch();
    let masked = predict(&p, &x_num, &x_cat, Some(&scale), GateMode::TopK(0.33), 2).unwrap();
    let pruned = export_pruned(&p, 0.33).unwrap();
    assert_eq!(pruned.params.blocks[0].w1.shape(), (3, 4));
    assert_eq!(pruned.params.blocks[0].w2.shape(), (2, 8));
    assert_eq!(pruned.mlp_weights(), 2 * (12 + 16));
    for h in &pruned.hidden {
        assert!(h.windows(2).all(|w| w[0] < w[1]));
    }
    let out = pruned.predict(&x_num, &x_cat, Some(&scale), 2).unwrap();
    for (a, b) in out.as_slice().iter().zip(masked.as_slice()) {
        assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
    }
}

#[test]
fn keeping_everything_is_bitwise_identical() {
    let p = f32_params(13);
    let (x_num, x_cat, scale) = f32_batch();
    let open = predict(&p, &x_num, &x_cat, Some(&scale), GateMode::Open, 8).unwrap();
    let topk = predict(&p, &x_num, &x_cat, Some(&scale), GateMode::TopK(1.0), 8).unwrap();
    let pruned = export_pruned(&p, 1.0).unwrap().predict(&x_num, &x_cat, Some(&scale), 8).unwrap();
    assert_eq!(open, topk);
    assert_eq!(open, pruned);
}

#[test]
fn export_rejects_bad_target() {
    assert!(matches!(export_pruned(&f32_params(14), 0.0), Err(ModelError::BadConfig(_))));
}

struct Toy {
    x: Matrix<f32>,
    y: Vec<f64>,
    alpha: Matrix<f32>,
}

fn separable(n: usize, seed: u64) -> Toy {
    let mut rng = RngStream::new(seed, 0);
    let x = Matrix::from_fn(n, 2, |_, _| (2.0 * rng.uniform() - 1.0) as f32);
    let y = (0..n).map(|r| if x.get(r, 0) + 0.5 * x.get(r, 1) > 0.0 { 1.0 } else { 0.0 }).collect();
    Toy {
        alpha: Matrix::filled(n, 2, 1.0),
        x,
        y,
    }
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        d: 16,
        d_ff: 12,
        batch_size: 32,
        max_epochs: 50,
        patience: 50,
        learning_rate: 3e-3,
        residual_dropout: 0.0,
        sparsity_enabled: false,
        ..TrainConfig::default()
    }
}

fn toy_init(cfg: &TrainConfig, n_train: usize) -> TmlpParams<f32> {
    let a = cfg.arch(TaskType::Binclass, 2, vec![], 2, n_train);
    TmlpParams::init(a, &mut RngStream::new(cfg.seed, 0))
}

#[test]
fn learns_a_separable_problem() {
    let (tr, va) = (separable(400, 1), separable(200, 2));
    let cfg = toy_config();
    let init = toy_init(&cfg, 400);
    let td = TrainData {
        x_num: &tr.x,
        x_cat: &[],
        y: &tr.y,
        alpha_hat: Some(&tr.alpha),
    };
    let vd = TrainData {
        x_num: &va.x,
        x_cat: &[],
        y: &va.y,
        alpha_hat: Some(&va.alpha),
    };
    let out = train(&init, &td, &vd, &cfg, 0).unwrap();
    assert!(out.history.len() <= 50);
    assert!(out.best_metric.unwrap() >= 0.98, "{:?}", out.best_metric);
}

#[test]
fn training_is_reproducible() {
    let (tr, va) = (separable(100, 3), separable(50, 4));
    let cfg = TrainConfig {
        max_epochs: 3,
        sparsity_enabled: true,
        residual_dropout: 0.1,
        target_sparsity: 0.5,
        ..toy_config()
    };
    let init = toy_init(&cfg, 100);
    let td = TrainData {
        x_num: &tr.x,
        x_cat: &[],
        y: &tr.y,
        alpha_hat: Some(&tr.alpha),
    };
    let vd = TrainData {
        x_num: &va.x,
        x_cat: &[],
        y: &va.y,
        alpha_hat: Some(&va.alpha),
    };
    let a = train(&init, &td, &vd, &cfg, 0).unwrap();
    let b = train(&init, &td, &vd, &cfg, 0).unwrap();
    let c = train(&init, &td, &vd, &cfg, 1).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    assert_ne!(a.params, c.params);
}

#[test]
fn missing_frequencies_are_reported() {
    let tr = separable(10, 5);
    let cfg = toy_config();
    let td = TrainData {
        x_num: &tr.x,
        x_cat: &[],
        y: &tr.y,
        alpha_hat: None,
    };
    let err = train(&toy_init(&cfg, 10), &td, &td, &cfg, 0).unwrap_err();
    assert_eq!(err, ModelError::MissingFrequencies);
}

//! Tape/op contracts: hand-checked values, finite-difference oracles, and
//! the determinism and round-trip properties the rest of the stack relies on.

use querydiff::fdcheck::{finite_diff_grads, max_rel_err};
use querydiff::tensor::optim::{adamw_step, AdamConfig, AdamState};
use querydiff::tensor::{Tape, Tensor};
use querydiff::Error;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn matmul_identity_passthrough() {
    let eye = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    let b = Tensor::new(vec![3.0, 4.0, 5.0, 6.0], &[2, 2]).unwrap();
    let c = eye.matmul(&b).unwrap();
    assert_eq!(c.data(), b.data());
}

#[test]
fn matmul_hand_arithmetic() {
    let a = Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap();
    let b = Tensor::new(vec![3.0, 4.0], &[2, 1]).unwrap();
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[4, 2]);
    let err = a.matmul(&b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "got: {msg}");
}

#[test]
fn matmul_grad_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a0 = rand_vec(&mut rng, 9);
    let b0 = rand_vec(&mut rng, 9);

    let mut f = |inputs: &[Vec<f32>]| {
        let a = Tensor::new(inputs[0].clone(), &[3, 3]).unwrap();
        let b = Tensor::new(inputs[1].clone(), &[3, 3]).unwrap();
        a.matmul(&b).unwrap().sum_all().unwrap().item().unwrap()
    };
    let fd = finite_diff_grads(&mut f, &[a0.clone(), b0.clone()], 1e-3);

    let tape = Tape::new();
    let a = tape.leaf(&Tensor::new(a0, &[3, 3]).unwrap().with_grad());
    let b = tape.leaf(&Tensor::new(b0, &[3, 3]).unwrap().with_grad());
    let loss = a.matmul(&b).unwrap().sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert!(max_rel_err(&grads.grad(&a).unwrap(), &fd[0]) <= 1e-3);
    assert!(max_rel_err(&grads.grad(&b).unwrap(), &fd[1]) <= 1e-3);
}

#[test]
fn softmax_symmetry_and_stability() {
    let x = Tensor::new(vec![0.0, 0.0, 0.0], &[1, 3]).unwrap();
    let y = x.softmax().unwrap();
    for v in y.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-7);
    }

    let x = Tensor::new(vec![1000.0, 0.0], &[1, 2]).unwrap();
    let y = x.softmax().unwrap();
    assert!(y.data().iter().all(|v| v.is_finite()));
    assert!((y.data()[0] - 1.0).abs() < 1e-6);
    assert!(y.data()[1] < 1e-6);
}

#[test]
fn softmax_grad_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x0 = rand_vec(&mut rng, 5);
    let w0 = rand_vec(&mut rng, 5);
    // Project through a fixed vector so the scalar depends on every output.
    let w = Tensor::new(w0.clone(), &[5]).unwrap();

    let mut f = |inputs: &[Vec<f32>]| {
        let x = Tensor::new(inputs[0].clone(), &[1, 5]).unwrap();
        x.softmax()
            .unwrap()
            .mul_row(&w)
            .unwrap()
            .sum_all()
            .unwrap()
            .item()
            .unwrap()
    };
    let fd = finite_diff_grads(&mut f, &[x0.clone()], 1e-3);

    let tape = Tape::new();
    let x = tape.leaf(&Tensor::new(x0, &[1, 5]).unwrap().with_grad());
    let loss = x.softmax().unwrap().mul_row(&w).unwrap().sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert!(max_rel_err(&grads.grad(&x).unwrap(), &fd[0]) <= 1e-3);
}

#[test]
fn rms_norm_constant_and_zero_vectors() {
    let x = Tensor::new(vec![2.0; 4], &[1, 4]).unwrap();
    let gamma = Tensor::full(&[4], 1.0);
    let y = x.rms_norm(&gamma, 0.0).unwrap();
    for v in y.data() {
        assert!((v - 1.0).abs() < 1e-6);
    }

    let x = Tensor::zeros(&[1, 4]);
    let y = x.rms_norm(&gamma, 1e-6).unwrap();
    assert!(y.data().iter().all(|v| *v == 0.0));
}

#[test]
fn rms_norm_grad_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = rand_vec(&mut rng, 12);
    let g0 = rand_vec(&mut rng, 4);

    let mut f = |inputs: &[Vec<f32>]| {
        let x = Tensor::new(inputs[0].clone(), &[3, 4]).unwrap();
        let g = Tensor::new(inputs[1].clone(), &[4]).unwrap();
        x.rms_norm(&g, 1e-5)
            .unwrap()
            .square()
            .unwrap()
            .mean_all()
            .unwrap()
            .item()
            .unwrap()
    };
    let fd = finite_diff_grads(&mut f, &[x0.clone(), g0.clone()], 1e-3);

    let tape = Tape::new();
    let x = tape.leaf(&Tensor::new(x0, &[3, 4]).unwrap().with_grad());
    let g = tape.leaf(&Tensor::new(g0, &[4]).unwrap().with_grad());
    let loss = x.rms_norm(&g, 1e-5).unwrap().square().unwrap().mean_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert!(max_rel_err(&grads.grad(&x).unwrap(), &fd[0]) <= 1e-3);
    assert!(max_rel_err(&grads.grad(&g).unwrap(), &fd[1]) <= 1e-3);
}

#[test]
fn backward_linear_and_quadratic_leaves() {
    let tape = Tape::new();
    let w = tape.leaf(&Tensor::new(vec![1.0, 2.0, 3.0], &[1, 3]).unwrap().with_grad());
    let loss = w.sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.grad(&w).unwrap(), vec![1.0, 1.0, 1.0]);

    let tape = Tape::new();
    let w = tape.leaf(&Tensor::new(vec![1.0, 2.0, 3.0], &[1, 3]).unwrap().with_grad());
    let loss = w.square().unwrap().sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.grad(&w).unwrap(), vec![2.0, 4.0, 6.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let tape = Tape::new();
    let w = tape.leaf(&Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap().with_grad());
    let y = w.square().unwrap();
    match tape.backward(&y) {
        Err(Error::Contract(msg)) => assert!(msg.contains("scalar")),
        Err(other) => panic!("expected contract error, got {other:?}"),
        Ok(_) => panic!("expected contract error, got Ok"),
    }
}

#[test]
fn backward_unreachable_leaf_reads_zero() {
    let tape = Tape::new();
    let used = tape.leaf(&Tensor::new(vec![1.0], &[1]).unwrap().with_grad());
    let unused = tape.leaf(&Tensor::new(vec![5.0, 5.0], &[2]).unwrap().with_grad());
    let loss = used.square().unwrap().sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.grad(&unused).unwrap(), vec![0.0, 0.0]);
    assert!(grads.try_grad(&unused).is_none(), "no buffer should exist");
}

#[test]
fn frozen_leaf_never_gets_a_gradient_buffer() {
    let tape = Tape::new();
    let frozen = tape.leaf(&Tensor::new(vec![2.0], &[1]).unwrap()); // requires_grad = false
    let live = tape.leaf(&Tensor::new(vec![3.0], &[1]).unwrap().with_grad());
    let loss = frozen.mul(&live).unwrap().sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.grad(&live).unwrap(), vec![2.0]);
    assert!(grads.try_grad(&frozen).is_none());
    assert!(grads.grad(&frozen).is_err());
}

/// Composite gradient check through a single-head attention block.
#[test]
fn attention_block_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (t, d) = (4, 8);
    let x0 = rand_vec(&mut rng, t * d);
    let wq0 = rand_vec(&mut rng, d * d);
    let wk0 = rand_vec(&mut rng, d * d);
    let wv0 = rand_vec(&mut rng, d * d);
    let g0 = rand_vec(&mut rng, d);

    let forward = |x: &Tensor, wq: &Tensor, wk: &Tensor, wv: &Tensor, g: &Tensor| {
        let h = x.rms_norm(g, 1e-5)?;
        let q = h.matmul(wq)?;
        let k = h.matmul(wk)?;
        let v = h.matmul(wv)?;
        let scores = q.matmul_nt(&k)?.scale(1.0 / (d as f32).sqrt())?;
        let att = scores.softmax()?;
        att.matmul(&v)?.square()?.mean_all()
    };

    let mut f = |inputs: &[Vec<f32>]| {
        let x = Tensor::new(inputs[0].clone(), &[t, d]).unwrap();
        let wq = Tensor::new(inputs[1].clone(), &[d, d]).unwrap();
        let wk = Tensor::new(inputs[2].clone(), &[d, d]).unwrap();
        let wv = Tensor::new(inputs[3].clone(), &[d, d]).unwrap();
        let g = Tensor::new(inputs[4].clone(), &[d]).unwrap();
        forward(&x, &wq, &wk, &wv, &g).unwrap().item().unwrap()
    };
    let probes = [x0.clone(), wq0.clone(), wk0.clone(), wv0.clone(), g0.clone()];
    let fd = finite_diff_grads(&mut f, &probes, 1e-3);

    let tape = Tape::new();
    let x = tape.leaf(&Tensor::new(x0, &[t, d]).unwrap().with_grad());
    let wq = tape.leaf(&Tensor::new(wq0, &[d, d]).unwrap().with_grad());
    let wk = tape.leaf(&Tensor::new(wk0, &[d, d]).unwrap().with_grad());
    let wv = tape.leaf(&Tensor::new(wv0, &[d, d]).unwrap().with_grad());
    let g = tape.leaf(&Tensor::new(g0, &[d]).unwrap().with_grad());
    let loss = forward(&x, &wq, &wk, &wv, &g).unwrap();
    let grads = tape.backward(&loss).unwrap();

    for (i, p) in [&x, &wq, &wk, &wv, &g].iter().enumerate() {
        let err = max_rel_err(&grads.grad(p).unwrap(), &fd[i]);
        assert!(err <= 1e-3, "param {i}: rel err {err}");
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = rand_vec(&mut rng, 24);
    let w0 = rand_vec(&mut rng, 36);

    let run = || {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::new(x0.clone(), &[4, 6]).unwrap().with_grad());
        let w = tape.leaf(&Tensor::new(w0.clone(), &[6, 6]).unwrap().with_grad());
        let y = x.matmul(&w).unwrap().silu().unwrap().softmax().unwrap();
        let loss = y.square().unwrap().mean_all().unwrap();
        let grads = tape.backward(&loss).unwrap();
        (grads.grad(&x).unwrap(), grads.grad(&w).unwrap())
    };
    let (gx1, gw1) = run();
    let (gx2, gw2) = run();
    assert_eq!(gx1, gx2);
    assert_eq!(gw1, gw2);
}

#[test]
fn concat_slice_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = Tensor::new(rand_vec(&mut rng, 6), &[2, 3]).unwrap();
    let b = Tensor::new(rand_vec(&mut rng, 9), &[3, 3]).unwrap();
    let cat = Tensor::concat_rows(&[&a, &b]).unwrap();
    assert_eq!(cat.slice_rows(0, 2).unwrap().data(), a.data());
    assert_eq!(cat.slice_rows(2, 5).unwrap().data(), b.data());

    let c = Tensor::new(rand_vec(&mut rng, 8), &[2, 4]).unwrap();
    let d = Tensor::new(rand_vec(&mut rng, 4), &[2, 2]).unwrap();
    let cat = Tensor::concat_cols(&[&c, &d]).unwrap();
    assert_eq!(cat.slice_cols(0, 4).unwrap().data(), c.data());
    assert_eq!(cat.slice_cols(4, 6).unwrap().data(), d.data());
}

#[test]
fn adamw_zero_grad_leaves_params_unchanged() {
    let mut p = vec![0.5f32, -0.25];
    let mut grads = BTreeMap::new();
    grads.insert("w".to_string(), vec![0.0, 0.0]);
    let mut state = AdamState::default();
    let cfg = AdamConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() };
    adamw_step(&mut [("w", &mut p)], &grads, &mut state, &cfg).unwrap();
    assert_eq!(p, vec![0.5, -0.25]);
    assert_eq!(state.step, 1);
}

#[test]
fn adamw_descends_on_quadratic() {
    let mut p = vec![1.0f32];
    let mut state = AdamState::default();
    let cfg = AdamConfig { lr: 0.1, ..Default::default() };
    let mut grads = BTreeMap::new();
    grads.insert("w".to_string(), vec![2.0 * p[0]]);
    adamw_step(&mut [("w", &mut p)], &grads, &mut state, &cfg).unwrap();
    assert!(p[0].abs() < 1.0);
}

#[test]
fn adamw_converges_on_2d_quadratic() {
    // Oracle: the quadratic's gradient is analytic; 200 steps should land
    // well inside |w| < 1e-2.
    let mut p = vec![1.0f32, -0.7];
    let mut state = AdamState::default();
    let cfg = AdamConfig { lr: 0.1, ..Default::default() };
    for _ in 0..200 {
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![2.0 * p[0], 2.0 * p[1]]);
        adamw_step(&mut [("w", &mut p)], &grads, &mut state, &cfg).unwrap();
    }
    let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();
    assert!(norm < 1e-2, "|w| = {norm}");
}

#[test]
fn adamw_rejects_non_positive_lr() {
    let mut p = vec![1.0f32];
    let grads = BTreeMap::new();
    let mut state = AdamState::default();
    let cfg = AdamConfig { lr: 0.0, ..Default::default() };
    match adamw_step(&mut [("w", &mut p)], &grads, &mut state, &cfg) {
        Err(Error::Config(_)) => {}
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn cross_entropy_matches_hand_computation() {
    let logits = Tensor::new(vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0], &[2, 3]).unwrap();
    let loss = logits.cross_entropy(&[0, 0]).unwrap().item().unwrap();
    let row1 = (3.0f32).ln();
    let row2 = (1.0f32.exp() + 2.0).ln() - 1.0;
    assert!((loss - (row1 + row2) / 2.0).abs() < 1e-6);
}

#[test]
fn elementwise_and_reduction_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x0 = rand_vec(&mut rng, 10);
    let b0 = rand_vec(&mut rng, 5);
    let s0 = rand_vec(&mut rng, 5);

    let build = |x: &Tensor, b: &Tensor, s: &Tensor| {
        x.silu()?
            .add_row(b)?
            .modulate(s, b)?
            .mul_row(s)?
            .square()?
            .mean_all()
    };
    let mut f = |inputs: &[Vec<f32>]| {
        let x = Tensor::new(inputs[0].clone(), &[2, 5]).unwrap();
        let b = Tensor::new(inputs[1].clone(), &[5]).unwrap();
        let s = Tensor::new(inputs[2].clone(), &[5]).unwrap();
        build(&x, &b, &s).unwrap().item().unwrap()
    };
    let fd = finite_diff_grads(&mut f, &[x0.clone(), b0.clone(), s0.clone()], 1e-3);

    let tape = Tape::new();
    let x = tape.leaf(&Tensor::new(x0, &[2, 5]).unwrap().with_grad());
    let b = tape.leaf(&Tensor::new(b0, &[5]).unwrap().with_grad());
    let s = tape.leaf(&Tensor::new(s0, &[5]).unwrap().with_grad());
    let loss = build(&x, &b, &s).unwrap();
    let grads = tape.backward(&loss).unwrap();
    for (i, p) in [&x, &b, &s].iter().enumerate() {
        let err = max_rel_err(&grads.grad(p).unwrap(), &fd[i]);
        assert!(err <= 1e-3, "input {i}: rel err {err}");
    }
}

#[test]
fn embedding_gather_and_scatter_grad() {
    let w = Tensor::new((0..8).map(|x| x as f32).collect(), &[4, 2]).unwrap().with_grad();
    let tape = Tape::new();
    let wl = tape.leaf(&w);
    let e = wl.embedding(&[1, 3, 1]).unwrap();
    assert_eq!(e.data(), &[2.0, 3.0, 6.0, 7.0, 2.0, 3.0]);
    let loss = e.sum_all().unwrap();
    let grads = tape.backward(&loss).unwrap();
    // Row 1 gathered twice accumulates twice.
    assert_eq!(grads.grad(&wl).unwrap(), vec![0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
}

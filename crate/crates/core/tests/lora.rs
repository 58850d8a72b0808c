//! Adapter algebra: no-op init, dense-materialization agreement, merge
//! round trips, and gradient isolation from frozen base weights.

use querydiff::lora::LoraAdapter;
use querydiff::tensor::{Tape, Tensor};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(data, shape).unwrap()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).fold(0.0f32, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn fresh_adapter_is_exact_noop() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let w = rand_tensor(&mut rng, &[6, 4]);
    let x = rand_tensor(&mut rng, &[3, 6]);
    let adapter = LoraAdapter::new(6, 4, 2, 16.0, 99).unwrap();
    let with = adapter.forward(&x, &w).unwrap();
    let without = x.matmul(&w).unwrap();
    assert_eq!(with.data(), without.data());
}

#[test]
fn identity_delta_adds_identity() {
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let w = rand_tensor(&mut rng, &[d, d]);
    let x = rand_tensor(&mut rng, &[2, d]);

    let eye: Vec<f32> = (0..d * d)
        .map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 })
        .collect();
    let mut adapter = LoraAdapter::new(d, d, d, d as f32, 0).unwrap();
    adapter.a = Tensor::new(eye.clone(), &[d, d]).unwrap().with_grad();
    adapter.b = Tensor::new(eye.clone(), &[d, d]).unwrap().with_grad();

    let got = adapter.forward(&x, &w).unwrap();
    let w_plus_eye = w.add(&Tensor::new(eye, &[d, d]).unwrap()).unwrap();
    let want = x.matmul(&w_plus_eye).unwrap();
    assert!(max_abs_diff(got.data(), want.data()) <= 1e-5);
}

#[test]
fn adapter_forward_matches_dense_materialization() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (d_in, d_out, r) = (8, 5, 3);
    let w = rand_tensor(&mut rng, &[d_in, d_out]);
    let x = rand_tensor(&mut rng, &[4, d_in]);
    let mut adapter = LoraAdapter::new(d_in, d_out, r, 16.0, 7).unwrap();
    adapter.b = rand_tensor(&mut rng, &[d_out, r]).with_grad();

    let got = adapter.forward(&x, &w).unwrap();
    let dense = w.add(&adapter.delta().unwrap()).unwrap();
    let want = x.matmul(&dense).unwrap();
    assert!(max_abs_diff(got.data(), want.data()) <= 1e-5);
}

#[test]
fn merge_with_zero_b_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut w = rand_tensor(&mut rng, &[6, 4]);
    let w0 = w.data().to_vec();
    let mut adapter = LoraAdapter::new(6, 4, 2, 16.0, 1).unwrap();
    adapter.merge(&mut w).unwrap();
    assert_eq!(w.data(), w0.as_slice());
}

#[test]
fn merged_forward_agrees_with_adapter_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let (d_in, d_out, r) = (8, 8, 4);
    let mut w = rand_tensor(&mut rng, &[d_in, d_out]);
    let x = rand_tensor(&mut rng, &[5, d_in]);
    let mut adapter = LoraAdapter::new(d_in, d_out, r, 8.0, 2).unwrap();
    adapter.b = rand_tensor(&mut rng, &[d_out, r]).with_grad();

    let adapter_out = adapter.forward(&x, &w).unwrap();
    adapter.merge(&mut w).unwrap();
    let merged_out = x.matmul(&w).unwrap();
    assert!(max_abs_diff(adapter_out.data(), merged_out.data()) <= 1e-5);
}

#[test]
fn merge_unmerge_round_trip_restores_base() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let (d_in, d_out, r) = (10, 7, 4);
    let mut w = rand_tensor(&mut rng, &[d_in, d_out]);
    let w0 = w.data().to_vec();
    let mut adapter = LoraAdapter::new(d_in, d_out, r, 16.0, 3).unwrap();
    adapter.b = rand_tensor(&mut rng, &[d_out, r]).with_grad();

    adapter.merge(&mut w).unwrap();
    adapter.unmerge(&mut w).unwrap();
    assert!(max_abs_diff(w.data(), &w0) <= 1e-6);
}

#[test]
fn double_merge_and_double_unmerge_are_contract_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut w = rand_tensor(&mut rng, &[4, 4]);
    let mut adapter = LoraAdapter::new(4, 4, 2, 4.0, 4).unwrap();

    adapter.merge(&mut w).unwrap();
    assert!(adapter.merge(&mut w).is_err());
    assert!(adapter.forward(&rand_tensor(&mut rng, &[1, 4]), &w).is_err());
    adapter.unmerge(&mut w).unwrap();
    assert!(adapter.unmerge(&mut w).is_err());
}

#[test]
fn gradients_reach_only_the_adapter_when_base_is_frozen() {
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let (d_in, d_out, r) = (6, 6, 2);
    let w = rand_tensor(&mut rng, &[d_in, d_out]); // requires_grad = false
    let x = rand_tensor(&mut rng, &[3, d_in]);
    let mut adapter = LoraAdapter::new(d_in, d_out, r, 16.0, 5).unwrap();
    adapter.b = rand_tensor(&mut rng, &[d_out, r]).with_grad();

    let tape = Tape::new();
    let wl = tape.leaf(&w);
    let al = tape.leaf(&adapter.a);
    let bl = tape.leaf(&adapter.b);
    let frozen_view = LoraAdapter {
        a: al.clone(),
        b: bl.clone(),
        rank: r,
        alpha: 16.0,
        merged: false,
    };
    let y = frozen_view.forward(&tape.leaf(&x.clone()), &wl).unwrap();
    let loss = y.square().unwrap().mean_all().unwrap();
    let grads = tape.backward(&loss).unwrap();

    assert!(grads.try_grad(&wl).is_none(), "frozen base got a gradient buffer");
    assert!(grads.try_grad(&al).is_some());
    assert!(grads.try_grad(&bl).is_some());
    assert!(grads.grad(&al).unwrap().iter().any(|g| *g != 0.0));
}

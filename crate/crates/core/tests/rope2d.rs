//! Shifted-coordinate construction and rotary application contracts.

use querydiff::fdcheck::{finite_diff_grads, max_rel_err};
use querydiff::rope::{apply_rope, collision_report, coords_for_role, PositionGrid, RopeFreqs, TokenRole};
use querydiff::tensor::{Tape, Tensor};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn reference_grid_shifts_into_positive_block() {
    let g = coords_for_role(4, 4, TokenRole::Reference(1)).unwrap();
    assert_eq!(g.coords[0], (4, 4)); // base (0,0)
    assert_eq!(g.coords[15], (7, 7)); // base (3,3)
}

#[test]
fn source_grid_mirrors_into_negative_quadrant() {
    let g = coords_for_role(4, 4, TokenRole::Source).unwrap();
    // base (i=2, j=3) is row-major index j*w + i = 14
    assert_eq!(g.coords[14], (-2, -3));
}

#[test]
fn target_grid_is_unshifted() {
    let g = coords_for_role(3, 5, TokenRole::Target).unwrap();
    for j in 0..3 {
        for i in 0..5 {
            assert_eq!(g.coords[j * 5 + i], (i as i64, j as i64));
        }
    }
}

#[test]
fn reference_index_zero_is_rejected() {
    assert!(coords_for_role(4, 4, TokenRole::Reference(0)).is_err());
}

#[test]
fn reference_blocks_are_disjoint_from_target() {
    for (h, w) in [(4usize, 4usize), (8, 8), (8, 16)] {
        let target = coords_for_role(h, w, TokenRole::Target).unwrap();
        for n in 1..=2 {
            let r = coords_for_role(h, w, TokenRole::Reference(n)).unwrap();
            // exact box occupancy
            let (imin, imax) = (w as i64 * n as i64, w as i64 * n as i64 + w as i64 - 1);
            let (jmin, jmax) = (h as i64 * n as i64, h as i64 * n as i64 + h as i64 - 1);
            for &(i, j) in &r.coords {
                assert!(i >= imin && i <= imax && j >= jmin && j <= jmax);
            }
            assert!(collision_report(&[&target, &r]).is_empty());
        }
    }
}

#[test]
fn source_and_target_collide_only_at_origin() {
    let target = coords_for_role(4, 4, TokenRole::Target).unwrap();
    let source = coords_for_role(4, 4, TokenRole::Source).unwrap();
    let report = collision_report(&[&target, &source]);
    assert_eq!(report.into_iter().collect::<Vec<_>>(), vec![(0, 0)]);
}

#[test]
fn identical_grids_collide_at_every_cell() {
    let a = coords_for_role(2, 3, TokenRole::Reference(1)).unwrap();
    let b = coords_for_role(2, 3, TokenRole::Reference(1)).unwrap();
    assert_eq!(collision_report(&[&a, &b]).len(), 6);

    // Distinct roles at the same coordinates also collide, even in one grid.
    let mut mixed = a.clone();
    mixed.extend(&PositionGrid {
        coords: a.coords.clone(),
        roles: vec![TokenRole::Text; 6],
    });
    assert_eq!(collision_report(&[&mixed]).len(), 6);

    // Repeated same-role tokens inside one grid are a single claim.
    let origin = PositionGrid::at_origin(16, TokenRole::Query);
    assert!(collision_report(&[&origin]).is_empty());
}

#[test]
fn zero_coordinate_is_identity_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = Tensor::new(rand_vec(&mut rng, 8), &[1, 8]).unwrap();
    let grid = PositionGrid::at_origin(1, TokenRole::Text);
    let freqs = RopeFreqs::with_default_theta(8).unwrap();
    let y = apply_rope(&x, &grid, &freqs).unwrap();
    assert_eq!(x.data(), y.data());
}

#[test]
fn rotation_preserves_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let freqs = RopeFreqs::with_default_theta(16).unwrap();
    for _ in 0..50 {
        let x = Tensor::new(rand_vec(&mut rng, 16), &[1, 16]).unwrap();
        let coord = (rng.random_range(-20i64..20), rng.random_range(-20i64..20));
        let grid = PositionGrid { coords: vec![coord], roles: vec![TokenRole::Target] };
        let y = apply_rope(&x, &grid, &freqs).unwrap();
        let nx: f32 = x.data().iter().map(|v| v * v).sum::<f32>().sqrt();
        let ny: f32 = y.data().iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((nx - ny).abs() <= 1e-5, "norm drift {}", (nx - ny).abs());
    }
}

fn rope_one(x: &[f32], coord: (i64, i64), freqs: &RopeFreqs) -> Vec<f32> {
    let t = Tensor::new(x.to_vec(), &[1, x.len()]).unwrap();
    let grid = PositionGrid { coords: vec![coord], roles: vec![TokenRole::Target] };
    apply_rope(&t, &grid, freqs).unwrap().data().to_vec()
}

#[test]
fn inner_products_are_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let freqs = RopeFreqs::with_default_theta(16).unwrap();
    for _ in 0..100 {
        let q = rand_vec(&mut rng, 16);
        let k = rand_vec(&mut rng, 16);
        let c1 = (rng.random_range(-10i64..10), rng.random_range(-10i64..10));
        let c2 = (rng.random_range(-10i64..10), rng.random_range(-10i64..10));
        let d = (rng.random_range(-8i64..8), rng.random_range(-8i64..8));

        let dot = |a: &[f32], b: &[f32]| -> f32 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
        let base = dot(&rope_one(&q, c1, &freqs), &rope_one(&k, c2, &freqs));
        let shifted = dot(
            &rope_one(&q, (c1.0 + d.0, c1.1 + d.1), &freqs),
            &rope_one(&k, (c2.0 + d.0, c2.1 + d.1), &freqs),
        );
        assert!((base - shifted).abs() <= 1e-4, "drift {}", (base - shifted).abs());
    }
}

#[test]
fn distinct_coordinates_rotate_a_generic_vector_distinctly() {
    let freqs = RopeFreqs::with_default_theta(8).unwrap();
    let x: Vec<f32> = vec![1.0; 8];
    let mut seen: Vec<Vec<f32>> = Vec::new();
    for i in -3i64..=3 {
        for j in -3i64..=3 {
            let y = rope_one(&x, (i, j), &freqs);
            for prev in &seen {
                let diff: f32 = prev.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
                assert!(diff > 1e-4, "two coordinates produced the same rotation");
            }
            seen.push(y);
        }
    }
}

#[test]
fn head_dim_not_multiple_of_four_is_rejected() {
    assert!(RopeFreqs::with_default_theta(6).is_err());
    assert!(RopeFreqs::with_default_theta(0).is_err());
}

#[test]
fn multi_head_layout_matches_single_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let freqs = RopeFreqs::with_default_theta(8).unwrap();
    let grid = coords_for_role(2, 2, TokenRole::Reference(1)).unwrap();
    let x = Tensor::new(rand_vec(&mut rng, 4 * 3 * 8), &[4, 3, 8]).unwrap();
    let y = apply_rope(&x, &grid, &freqs).unwrap();
    for h in 0..3 {
        let single: Vec<f32> = (0..4)
            .flat_map(|t| x.data()[t * 24 + h * 8..t * 24 + h * 8 + 8].to_vec())
            .collect();
        let xs = Tensor::new(single, &[4, 8]).unwrap();
        let ys = apply_rope(&xs, &grid, &freqs).unwrap();
        for t in 0..4 {
            assert_eq!(
                &y.data()[t * 24 + h * 8..t * 24 + h * 8 + 8],
                &ys.data()[t * 8..(t + 1) * 8]
            );
        }
    }
}

#[test]
fn apply_rope_grad_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let freqs = RopeFreqs::with_default_theta(8).unwrap();
    let grid = coords_for_role(2, 2, TokenRole::Source).unwrap();
    let x0 = rand_vec(&mut rng, 4 * 8);

    let mut f = |inputs: &[Vec<f32>]| {
        let x = Tensor::new(inputs[0].clone(), &[4, 8]).unwrap();
        apply_rope(&x, &grid, &freqs)
            .unwrap()
            .square()
            .unwrap()
            .mean_all()
            .unwrap()
            .item()
            .unwrap()
    };
    let fd = finite_diff_grads(&mut f, &[x0.clone()], 1e-3);

    let tape = Tape::new();
    let x = tape.leaf(&Tensor::new(x0, &[4, 8]).unwrap().with_grad());
    let loss = apply_rope(&x, &grid, &freqs)
        .unwrap()
        .square()
        .unwrap()
        .mean_all()
        .unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert!(max_rel_err(&grads.grad(&x).unwrap(), &fd[0]) <= 1e-3);
}

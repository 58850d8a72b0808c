//! Central finite-difference gradient verification.
//!
//! This harness is the independent oracle the test suites compare the tape
//! against: it only ever calls a black-box scalar function, never the tape's
//! own backward pass.

/// Central finite differences: d f / d inputs\[i\]\[j\] at step h, evaluated
/// one coordinate at a time.
pub fn finite_diff_grads(
    f: &mut dyn FnMut(&[Vec<f32>]) -> f32,
    inputs: &[Vec<f32>],
    h: f32,
) -> Vec<Vec<f32>> {
    let mut work: Vec<Vec<f32>> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0f32; inputs[i].len()];
        for j in 0..inputs[i].len() {
            let orig = work[i][j];
            work[i][j] = orig + h;
            let fp = f(&work);
            work[i][j] = orig - h;
            let fm = f(&work);
            work[i][j] = orig;
            g[j] = (fp - fm) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Worst per-element deviation normalized by the oracle gradient's scale.
/// Small gradients fall back to an absolute comparison against the floor.
pub fn max_rel_err(got: &[f32], oracle: &[f32]) -> f32 {
    assert_eq!(got.len(), oracle.len(), "gradient length mismatch");
    let scale = oracle
        .iter()
        .fold(0.0f32, |m, x| m.max(x.abs()))
        .max(1e-2);
    got.iter()
        .zip(oracle)
        .fold(0.0f32, |m, (a, b)| m.max((a - b).abs() / scale))
}

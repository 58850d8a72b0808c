//! Decoupled-weight-decay Adam with bias-corrected moments.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Default)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// One AdamW update over named (param, grad) pairs. Pairs must be passed in
/// a stable order; parameter and gradient lengths must agree. Weight decay
/// is applied directly to the parameter, not mixed into the gradient.
pub fn adamw_step(
    params: &mut [(&str, &mut [f32])],
    grads: &BTreeMap<String, Vec<f32>>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if cfg.lr <= 0.0 {
        return Err(Error::config(format!("learning rate must be > 0, got {}", cfg.lr)));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - (cfg.beta1 as f64).powf(t);
    let bc2 = 1.0 - (cfg.beta2 as f64).powf(t);

    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(*name) else { continue };
        if g.len() != p.len() {
            return Err(Error::dim(
                "adamw_step",
                format!("param {name}: {} values vs {} gradients", p.len(), g.len()),
            ));
        }
        let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; p.len()]);
        let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; p.len()]);
        for i in 0..p.len() {
            if cfg.weight_decay != 0.0 {
                p[i] -= cfg.lr * cfg.weight_decay * p[i];
            }
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1 as f32;
            let vhat = v[i] / bc2 as f32;
            p[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

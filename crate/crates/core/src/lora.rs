//! Low-rank adapters: an additive delta `(alpha/rank) * B . A` attached to a
//! base linear weight, trainable while the base stays frozen, and mergeable
//! into the base for adapter-free inference.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adapter for one linear weight. `a` is `[rank, d_in]`, `b` is
/// `[d_out, rank]`; `b` starts at zero so a fresh adapter is an exact no-op.
pub struct LoraAdapter {
    pub a: Tensor,
    pub b: Tensor,
    pub rank: usize,
    pub alpha: f32,
    pub merged: bool,
}

impl LoraAdapter {
    pub fn new(d_in: usize, d_out: usize, rank: usize, alpha: f32, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::config("lora rank must be >= 1".to_string()));
        }
        Ok(LoraAdapter {
            a: Tensor::randn(&[rank, d_in], 0.02, seed).with_grad(),
            b: Tensor::zeros(&[d_out, rank]).with_grad(),
            rank,
            alpha,
            merged: false,
        })
    }

    /// Rebuild from existing tensors (checkpoint load).
    pub fn from_parts(a: Tensor, b: Tensor, alpha: f32, merged: bool) -> Result<Self> {
        let rank = a.shape()[0];
        if b.shape().len() != 2 || b.shape()[1] != rank {
            return Err(Error::dim(
                "lora",
                format!("A {:?} and B {:?} disagree on rank", a.shape(), b.shape()),
            ));
        }
        Ok(LoraAdapter { a, b, rank, alpha, merged })
    }

    pub fn scaling(&self) -> f32 {
        self.alpha / self.rank as f32
    }

    /// Materialized delta in base-weight layout `[d_in, d_out]`.
    pub fn delta(&self) -> Result<Tensor> {
        let ba = self.b.detach().matmul(&self.a.detach())?; // [d_out, d_in]
        ba.transpose()?.scale(self.scaling())
    }

    /// `x . W + (alpha/rank) . x . A^T . B^T`. Rejected while merged: the
    /// base already contains the delta and adding it again double-counts.
    pub fn forward(&self, x: &Tensor, w_base: &Tensor) -> Result<Tensor> {
        if self.merged {
            return Err(Error::contract(
                "lora forward while merged would double-count the delta".to_string(),
            ));
        }
        let base = x.matmul(w_base)?;
        let low = x.matmul_nt(&self.a)?.matmul_nt(&self.b)?.scale(self.scaling())?;
        base.add(&low)
    }

    /// Fold the delta into the base weight in place.
    pub fn merge(&mut self, w_base: &mut Tensor) -> Result<()> {
        if self.merged {
            return Err(Error::contract("adapter already merged".to_string()));
        }
        let delta = self.delta()?;
        if delta.shape() != w_base.shape() {
            return Err(Error::dim(
                "lora merge",
                format!("delta {:?} vs base {:?}", delta.shape(), w_base.shape()),
            ));
        }
        let d = delta.data().to_vec();
        for (w, dv) in w_base.data_mut().iter_mut().zip(d) {
            *w += dv;
        }
        self.merged = true;
        Ok(())
    }

    /// Subtract the delta back out of the base weight.
    pub fn unmerge(&mut self, w_base: &mut Tensor) -> Result<()> {
        if !self.merged {
            return Err(Error::contract("adapter is not merged".to_string()));
        }
        let delta = self.delta()?;
        let d = delta.data().to_vec();
        for (w, dv) in w_base.data_mut().iter_mut().zip(d) {
            *w -= dv;
        }
        self.merged = false;
        Ok(())
    }
}

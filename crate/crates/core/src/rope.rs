//! Role-shifted 2D rotary position embedding.
//!
//! Latent tokens of the image being denoised keep their natural grid
//! coordinates. Conditioning latents are shifted so each image occupies its
//! own region of the coordinate plane: the n-th reference image moves to the
//! n-th diagonal block of the positive quadrant, while a source image is
//! mirrored into the negative quadrant. Text and query tokens sit at the
//! origin and receive the identity rotation.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// What a token in the diffusion sequence stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenRole {
    /// Noisy latent being denoised.
    Target,
    /// Conditioning image that demands pixel-level fidelity.
    Source,
    /// n-th conditioning image that demands identity preservation, n >= 1.
    Reference(u32),
    Text,
    Query,
}

/// Per-token signed 2D coordinates plus the role they were built for.
#[derive(Clone, Debug)]
pub struct PositionGrid {
    pub coords: Vec<(i64, i64)>,
    pub roles: Vec<TokenRole>,
}

impl PositionGrid {
    /// `count` tokens of one role, all at the origin (identity rotation).
    pub fn at_origin(count: usize, role: TokenRole) -> Self {
        PositionGrid { coords: vec![(0, 0); count], roles: vec![role; count] }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn extend(&mut self, other: &PositionGrid) {
        self.coords.extend_from_slice(&other.coords);
        self.roles.extend_from_slice(&other.roles);
    }
}

/// Row-major h-by-w grid of coordinates, shifted for the given role.
/// Base coordinates are (i, j) with i in [0, w-1] along the row and
/// j in [0, h-1] down the rows.
pub fn coords_for_role(h: usize, w: usize, role: TokenRole) -> Result<PositionGrid> {
    if h < 1 || w < 1 {
        return Err(Error::contract(format!("grid dims must be >= 1, got {h}x{w}")));
    }
    if let TokenRole::Reference(n) = role {
        if n < 1 {
            return Err(Error::contract("reference index must be >= 1".to_string()));
        }
    }
    let mut coords = Vec::with_capacity(h * w);
    for j in 0..h as i64 {
        for i in 0..w as i64 {
            let c = match role {
                TokenRole::Reference(n) => (i + w as i64 * n as i64, j + h as i64 * n as i64),
                TokenRole::Source => (-i, -j),
                _ => (i, j),
            };
            coords.push(c);
        }
    }
    Ok(PositionGrid { coords, roles: vec![role; h * w] })
}

/// Coordinates claimed more than once across the given grids: by two
/// distinct roles, or by the same role arriving in two separate grids.
/// Repeated same-role tokens inside one grid (text and query tokens all sit
/// at the origin) are a single claim.
pub fn collision_report(grids: &[&PositionGrid]) -> BTreeSet<(i64, i64)> {
    let mut seen: BTreeMap<(i64, i64), BTreeSet<(TokenRole, usize)>> = BTreeMap::new();
    for (gi, grid) in grids.iter().enumerate() {
        for (c, r) in grid.coords.iter().zip(&grid.roles) {
            seen.entry(*c).or_default().insert((*r, gi));
        }
    }
    seen.into_iter()
        .filter(|(_, claims)| claims.len() >= 2)
        .map(|(c, _)| c)
        .collect()
}

/// Rotary frequency layout: the first half of the rotation pairs encodes the
/// i coordinate, the second half the j coordinate.
#[derive(Clone, Copy, Debug)]
pub struct RopeFreqs {
    pub head_dim: usize,
    pub base_theta: f32,
}

impl RopeFreqs {
    pub fn new(head_dim: usize, base_theta: f32) -> Result<Self> {
        if head_dim % 4 != 0 || head_dim == 0 {
            return Err(Error::contract(format!(
                "head_dim must be a positive multiple of 4, got {head_dim}"
            )));
        }
        Ok(RopeFreqs { head_dim, base_theta })
    }

    pub fn with_default_theta(head_dim: usize) -> Result<Self> {
        Self::new(head_dim, 10000.0)
    }

    fn pairs_per_axis(&self) -> usize {
        self.head_dim / 4
    }

    /// Per-pair frequencies within one axis.
    pub fn axis_freqs(&self) -> Vec<f32> {
        let p = self.pairs_per_axis();
        (0..p)
            .map(|k| self.base_theta.powf(-(k as f32) / p as f32))
            .collect()
    }

    /// cos/sin tables for one head: `[tokens, head_dim/2]` each, pair k
    /// rotated by coord.i * freq_k for the first half and coord.j * freq_k
    /// for the second. Angles use signed coordinates directly.
    pub fn tables(&self, grid: &PositionGrid) -> (Vec<f32>, Vec<f32>) {
        let freqs = self.axis_freqs();
        let half = self.head_dim / 2;
        let mut cos = Vec::with_capacity(grid.len() * half);
        let mut sin = Vec::with_capacity(grid.len() * half);
        for &(i, j) in &grid.coords {
            for f in &freqs {
                let a = i as f32 * f;
                cos.push(a.cos());
                sin.push(a.sin());
            }
            for f in &freqs {
                let a = j as f32 * f;
                cos.push(a.cos());
                sin.push(a.sin());
            }
        }
        (cos, sin)
    }
}

/// Rotate `x[tokens, heads, head_dim]` (or `[tokens, head_dim]` for a single
/// head) by the grid's per-token angles. Differentiable.
pub fn apply_rope(x: &Tensor, grid: &PositionGrid, freqs: &RopeFreqs) -> Result<Tensor> {
    let (tokens, heads, head_dim) = match x.shape() {
        [t, h, d] => (*t, *h, *d),
        [t, d] => (*t, 1, *d),
        s => return Err(Error::dim("apply_rope", format!("unsupported shape {s:?}"))),
    };
    if head_dim != freqs.head_dim {
        return Err(Error::contract(format!(
            "head_dim {head_dim} does not match rope layout {}",
            freqs.head_dim
        )));
    }
    if tokens != grid.len() {
        return Err(Error::dim(
            "apply_rope",
            format!("{tokens} tokens vs grid of {}", grid.len()),
        ));
    }
    let (cos1, sin1) = freqs.tables(grid);
    let half = head_dim / 2;
    // One table row per (token, head): heads share the token's angles.
    let (cos, sin) = if heads == 1 {
        (cos1, sin1)
    } else {
        let mut cos = Vec::with_capacity(tokens * heads * half);
        let mut sin = Vec::with_capacity(tokens * heads * half);
        for t in 0..tokens {
            for _ in 0..heads {
                cos.extend_from_slice(&cos1[t * half..(t + 1) * half]);
                sin.extend_from_slice(&sin1[t * half..(t + 1) * half]);
            }
        }
        (cos, sin)
    };
    let shape = x.shape().to_vec();
    let flat = x.reshape(&[tokens * heads, head_dim])?;
    let rotated = flat.rope(&cos, &sin)?;
    rotated.reshape(&shape)
}

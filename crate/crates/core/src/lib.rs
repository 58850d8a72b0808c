//! Query-token conditioned flow-matching diffusion on a procedural toy
//! image world.
//!
//! A small vision-language transformer emits text and learnable-query hidden
//! states; a two-layer connector projects them into the embedding space of an
//! in-context diffusion transformer trained with a rectified-flow objective.
//! Conditioning images enter twice: as patch tokens on the VLM side and, in
//! the final training stage, as clean latent tokens on the diffusion side,
//! positioned by a role-shifted 2D rotary embedding. A three-stage curriculum
//! with per-group freeze masks ties the pieces together.

pub mod checkpoint;
pub mod codec;
pub mod error;
pub mod fdcheck;
pub mod lora;
pub mod params;
pub mod rope;
pub mod tensor;
pub mod toyworld;

pub use error::{Error, Result};

//! Dense f32 tensors with reverse-mode automatic differentiation.
//!
//! The engine is define-by-run: a [`Tape`] records every op executed on
//! tensors attached to it, and [`Tape::backward`] replays the records in
//! exact reverse order. Tensors not attached to any tape compute eagerly
//! with no recording, which is the inference path.
//!
//! Matrix products are delegated to the `matrixmultiply` sgemm kernel;
//! everything else (VJPs, tape bookkeeping, optimizer) lives here.

mod ops;
mod tape;

pub mod optim;

pub use tape::{GradMap, Tape};

use std::rc::Rc;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Dense row-major f32 tensor. Cloning is cheap (the buffer is shared).
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
    requires_grad: bool,
    /// Present while the tensor is a node on an active tape.
    node: Option<NodeRef>,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub tape: Tape,
    pub id: usize,
}

impl Tensor {
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::dim(
                "tensor",
                format!("data length {} does not match shape {:?}", data.len(), shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            requires_grad: false,
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; numel]),
            requires_grad: false,
            node: None,
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; numel]),
            requires_grad: false,
            node: None,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor::full(&[1], value)
    }

    /// Gaussian init, deterministic per seed.
    pub fn randn(shape: &[usize], sigma: f32, seed: u64) -> Self {
        let numel: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..numel)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut rng);
                z * sigma
            })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            requires_grad: false,
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn buf(&self) -> Arc<Vec<f32>> {
        Arc::clone(&self.data)
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, value: bool) {
        self.requires_grad = value;
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// Scalar extraction; errors unless the tensor has exactly one element.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Mutable access to the underlying buffer. Only legal between forward
    /// passes (optimizer updates); copies if the buffer is still shared.
    pub fn data_mut(&mut self) -> &mut Vec<f32> {
        debug_assert!(self.node.is_none(), "mutating a tensor recorded on a tape");
        Arc::make_mut(&mut self.data)
    }

    pub(crate) fn node(&self) -> Option<&NodeRef> {
        self.node.as_ref()
    }

    pub(crate) fn from_parts(
        data: Arc<Vec<f32>>,
        shape: Vec<usize>,
        requires_grad: bool,
        node: Option<NodeRef>,
    ) -> Self {
        Tensor { shape, data, requires_grad, node }
    }

    /// Detached copy sharing the buffer: no tape link, no grad requirement.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            requires_grad: false,
            node: None,
        }
    }

    /// The tape an op over these inputs should record onto. Errors if two
    /// inputs live on different tapes.
    pub(crate) fn common_tape(inputs: &[&Tensor]) -> Result<Option<Tape>> {
        let mut found: Option<Tape> = None;
        for t in inputs {
            if let Some(nref) = &t.node {
                match &found {
                    None => found = Some(nref.tape.clone()),
                    Some(tape) => {
                        if !Rc::ptr_eq(&tape.inner, &nref.tape.inner) {
                            return Err(Error::contract(
                                "op inputs recorded on two different tapes",
                            ));
                        }
                    }
                }
            }
        }
        Ok(found)
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor{:?} grad={} tape={}",
            self.shape,
            self.requires_grad,
            self.node.is_some()
        )
    }
}

//! Gradient tape: ordered op records replayed in reverse for backprop.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::ops::OpRecord;
use super::{NodeRef, Tensor};

/// One recorded node: the op that produced it, its saved output, and which
/// earlier nodes fed it.
pub(crate) struct Node {
    pub op: OpRecord,
    pub inputs: Vec<Src>,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f32>>,
    /// False when no differentiated leaf can be reached through this node;
    /// backward skips such nodes entirely.
    pub requires_grad: bool,
}

/// An op input: either an earlier tape node or a constant captured by value.
pub(crate) enum Src {
    Node(usize),
    Const { data: Arc<Vec<f32>>, shape: Vec<usize> },
}

impl Src {
    pub fn data<'a>(&'a self, nodes: &'a [Node]) -> &'a [f32] {
        match self {
            Src::Node(i) => &nodes[*i].data,
            Src::Const { data, .. } => data,
        }
    }

    pub fn shape<'a>(&'a self, nodes: &'a [Node]) -> &'a [usize] {
        match self {
            Src::Node(i) => &nodes[*i].shape,
            Src::Const { shape, .. } => shape,
        }
    }
}

pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
    /// Leaf-dedup cache keyed by parameter buffer address, so a parameter
    /// used twice in one forward pass accumulates into a single gradient.
    leaf_ids: HashMap<usize, usize>,
}

/// Reverse-mode gradient tape. Rebuilt per forward pass; single-threaded.
#[derive(Clone)]
pub struct Tape {
    pub(crate) inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                leaf_ids: HashMap::new(),
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a tensor as a differentiable leaf on this tape. Repeated
    /// registration of the same buffer returns the same node.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let key = Arc::as_ptr(&t.buf()) as usize;
        let mut inner = self.inner.borrow_mut();
        let id = match inner.leaf_ids.get(&key) {
            Some(&id) => id,
            None => {
                let id = inner.nodes.len();
                inner.nodes.push(Node {
                    op: OpRecord::Leaf,
                    inputs: vec![],
                    shape: t.shape().to_vec(),
                    data: t.buf(),
                    requires_grad: t.requires_grad(),
                });
                inner.leaf_ids.insert(key, id);
                id
            }
        };
        Tensor::from_parts(
            t.buf(),
            t.shape().to_vec(),
            t.requires_grad(),
            Some(NodeRef { tape: self.clone(), id }),
        )
    }

    /// Node id a tensor's buffer was registered under, if any.
    pub fn leaf_id(&self, t: &Tensor) -> Option<usize> {
        let key = Arc::as_ptr(&t.buf()) as usize;
        self.inner.borrow().leaf_ids.get(&key).copied()
    }

    pub(crate) fn record(
        &self,
        op: OpRecord,
        inputs: Vec<Src>,
        shape: Vec<usize>,
        data: Vec<f32>,
    ) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        let requires_grad = inputs.iter().any(|s| match s {
            Src::Node(i) => inner.nodes[*i].requires_grad,
            Src::Const { .. } => false,
        });
        let data = Arc::new(data);
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            inputs,
            shape: shape.clone(),
            data: Arc::clone(&data),
            requires_grad,
        });
        Tensor::from_parts(
            data,
            shape,
            requires_grad,
            Some(NodeRef { tape: self.clone(), id }),
        )
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients for every
    /// `requires_grad` leaf reachable from the loss; unreachable leaves read
    /// back as zeros through [`GradMap::grad`].
    pub fn backward(&self, loss: &Tensor) -> Result<GradMap> {
        let node_ref = loss
            .node()
            .ok_or_else(|| Error::contract("backward: loss is not on an active tape"))?;
        if !Rc::ptr_eq(&self.inner, &node_ref.tape.inner) {
            return Err(Error::contract("backward: loss belongs to a different tape"));
        }
        if loss.numel() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; nodes.len()];
        grads[node_ref.id] = Some(vec![1.0]);

        for id in (0..=node_ref.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else { continue };
            if matches!(nodes[id].op, OpRecord::Leaf) {
                grads[id] = Some(gout);
                continue;
            }
            let needs: Vec<bool> = nodes[id]
                .inputs
                .iter()
                .map(|s| match s {
                    Src::Node(i) => nodes[*i].requires_grad,
                    Src::Const { .. } => false,
                })
                .collect();
            let gins = nodes[id].op.vjp(&gout, &nodes[id], nodes, &needs);
            for (src, gin) in nodes[id].inputs.iter().zip(gins) {
                let (Src::Node(i), Some(gin)) = (src, gin) else { continue };
                if !nodes[*i].requires_grad {
                    continue;
                }
                match &mut grads[*i] {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&gin) {
                            *a += g;
                        }
                    }
                    None => grads[*i] = Some(gin),
                }
            }
        }

        // Keep only leaf gradients; interior buffers are dropped here.
        let mut leaf_grads: HashMap<usize, Vec<f32>> = HashMap::new();
        for (id, g) in grads.into_iter().enumerate() {
            if let (Some(g), OpRecord::Leaf) = (g, &nodes[id].op) {
                leaf_grads.insert(id, g);
            }
        }
        Ok(GradMap { grads: leaf_grads, tape: self.clone() })
    }
}

/// Gradients keyed by tape leaf. Look up through the original parameter
/// tensor; a reachable leaf yields its accumulated gradient, an unreachable
/// one yields zeros of the right shape.
pub struct GradMap {
    grads: HashMap<usize, Vec<f32>>,
    tape: Tape,
}

impl GradMap {
    pub fn grad(&self, param: &Tensor) -> Result<Vec<f32>> {
        let id = self
            .tape
            .leaf_id(param)
            .ok_or_else(|| Error::contract("grad: tensor was never registered as a leaf"))?;
        if !param.requires_grad() {
            return Err(Error::contract("grad: tensor does not require gradients"));
        }
        Ok(match self.grads.get(&id) {
            Some(g) => g.clone(),
            None => vec![0.0; param.numel()],
        })
    }

    /// Gradient without the zero-fill fallback; None when the leaf was
    /// unreachable from the loss.
    pub fn try_grad(&self, param: &Tensor) -> Option<&[f32]> {
        let id = self.tape.leaf_id(param)?;
        self.grads.get(&id).map(|v| v.as_slice())
    }
}

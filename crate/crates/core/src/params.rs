//! Named parameter store with group-level freeze control.
//!
//! Parameter groups are the unit of the staged curriculum's freeze masks:
//! a name maps to its group through [`group_of`], and SHA-256 digests over
//! groups back the freeze-soundness checks.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Group a parameter name belongs to. Adapter parameters are grouped apart
/// from their host weights so a stage can train only the adapters.
pub fn group_of(name: &str) -> &'static str {
    let lora = name.contains(".lora.");
    if let Some(rest) = name.strip_prefix("vlm.") {
        let _ = rest;
        return if lora { "vlm.lora" } else { "vlm" };
    }
    if name.starts_with("diffusion.head.") {
        return if lora { "diffusion.head.lora" } else { "diffusion.head" };
    }
    if name.starts_with("diffusion.full.") {
        return if lora { "diffusion.lora" } else { "diffusion.full" };
    }
    if name.starts_with("connector.") {
        return "connector";
    }
    if name == "query_tokens" {
        return "query_tokens";
    }
    if name.starts_with("codec.") {
        return "codec";
    }
    "other"
}

/// All model parameters, keyed by dotted name. Iteration order is the sorted
/// name order everywhere, which keeps optimizer updates and checkpoints
/// deterministic.
#[derive(Default)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t.with_grad());
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.map.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter: {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter: {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Names whose group is `group`, in sorted order.
    pub fn names_in_group(&self, group: &str) -> Vec<String> {
        self.map
            .keys()
            .filter(|n| group_of(n) == group)
            .cloned()
            .collect()
    }

    /// Distinct groups present in the store, sorted.
    pub fn groups(&self) -> Vec<&'static str> {
        let mut gs: Vec<&'static str> = self.map.keys().map(|n| group_of(n)).collect();
        gs.sort_unstable();
        gs.dedup();
        gs
    }

    /// Parameter count over a group.
    pub fn group_param_count(&self, group: &str) -> usize {
        self.map
            .iter()
            .filter(|(n, _)| group_of(n) == group)
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// SHA-256 over the group's parameters: names, shapes, and raw f32 bytes,
    /// in sorted name order.
    pub fn group_digest(&self, group: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in &self.map {
            if group_of(name) != group {
                continue;
            }
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in t.data() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Remove every parameter in a group, returning how many were dropped.
    pub fn remove_group(&mut self, group: &str) -> usize {
        let names = self.names_in_group(group);
        for n in &names {
            self.map.remove(n);
        }
        names.len()
    }
}

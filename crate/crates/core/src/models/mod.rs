//! Permutation-equivariant partial-score networks.
//!
//! `ScoreModelX` estimates the partial score with respect to node features
//! from a stack of GCN layers; `ScoreModelA` estimates the partial score with
//! respect to the adjacency from graph multi-head attention blocks over
//! higher-order adjacency channels. Time enters only through the output
//! scaling by the transition standard deviation.

mod checkpoint;
mod gcn;
mod gmh;
mod mlp;
mod score;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gcn::{gcn_layer, normalize_adjacency, GcnLayer};
pub use gmh::{gmh_block, GmhBlock};
pub use mlp::{Linear, Mlp};
pub use score::{ScoreModelA, ScoreModelAConfig, ScoreModelX, ScoreModelXConfig};

use crate::autodiff::{Tape, Tensor};
use crate::rng::NoiseSource;

/// Anything holding named parameter tensors in a stable order.
pub trait ParamSet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_params(&mut self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.numel());
        n
    }

    /// Copy of the set with every parameter registered as a tape variable, so
    /// one registration serves all forward calls within the step.
    fn bind(&self, tape: &Tape) -> Self
    where
        Self: Clone,
    {
        let mut bound = self.clone();
        bound.visit_params(&mut |_, t| *t = tape.var(t));
        bound
    }
}

/// Assigns checkpointed tensors to a model's parameters by name, after
/// stripping `prefix`. Missing or shape-mismatched entries are errors.
pub fn assign_named_params<M: ParamSet>(
    model: &mut M,
    named: &[(String, Tensor)],
    prefix: &str,
) -> Result<(), crate::error::CheckpointError> {
    use crate::error::CheckpointError;
    let map: std::collections::HashMap<&str, &Tensor> =
        named.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let mut missing: Vec<String> = Vec::new();
    let mut mismatched: Vec<String> = Vec::new();
    model.visit_params(&mut |name, t| {
        let key = format!("{prefix}{name}");
        match map.get(key.as_str()) {
            Some(saved) if saved.shape() == t.shape() => *t = (*saved).detach(),
            Some(_) => mismatched.push(key),
            None => missing.push(key),
        }
    });
    if !missing.is_empty() || !mismatched.is_empty() {
        return Err(CheckpointError::CheckpointMismatch(format!(
            "missing: {missing:?}, shape-mismatched: {mismatched:?}"
        )));
    }
    Ok(())
}

pub(crate) fn init_weight(
    rows: usize,
    cols: usize,
    noise: &mut dyn NoiseSource,
) -> Tensor {
    let scale = 1.0 / (rows as f64).sqrt();
    let data = noise.normal_vec(rows * cols).iter().map(|z| z * scale).collect();
    Tensor::from_parts(vec![rows, cols], data, None)
}

/// Column-vector tensor (n x 1) holding the node mask as 0/1.
pub(crate) fn mask_column(mask: &[bool]) -> Tensor {
    let data = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    Tensor::from_parts(vec![mask.len(), 1], data, None)
}

/// Dense n x n tensor with 1 at entries where both endpoints are active.
pub(crate) fn mask_pair(mask: &[bool]) -> Tensor {
    let n = mask.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if mask[i] && mask[j] {
                data[i * n + j] = 1.0;
            }
        }
    }
    Tensor::from_parts(vec![n, n], data, None)
}

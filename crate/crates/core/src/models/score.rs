use serde::{Deserialize, Serialize};

use super::{mask_column, mask_pair, GcnLayer, GmhBlock, Mlp, ParamSet};
use crate::autodiff::{Activation, Tape, Tensor};
use crate::error::{ModelError, SdeError};
use crate::rng::NoiseSource;
use crate::sde::SdeSpec;

fn check_time(spec: &SdeSpec, t: f64) -> Result<f64, ModelError> {
    if !(t > 0.0 && t <= spec.t_terminal) {
        return Err(ModelError::Sde(SdeError::TimeOutOfRange { t, t_max: spec.t_terminal }));
    }
    Ok(spec.marginal_params(t)?.std())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScoreModelXConfig {
    pub feature_dim: usize,
    pub gcn_layers: usize,
    pub hidden_dim: usize,
    pub mlp_hidden: usize,
}

impl ScoreModelXConfig {
    pub fn community_small(feature_dim: usize) -> Self {
        Self { feature_dim, gcn_layers: 3, hidden_dim: 32, mlp_hidden: 32 }
    }
}

/// Partial-score network for node features: a GCN stack whose per-depth
/// representations are concatenated and mapped row-wise back to feature
/// space, scaled by 1/std of the transition distribution at t.
#[derive(Clone, Debug)]
pub struct ScoreModelX {
    pub config: ScoreModelXConfig,
    pub gcns: Vec<GcnLayer>,
    pub mlp: Mlp,
}

impl ScoreModelX {
    pub fn new(config: ScoreModelXConfig, noise: &mut dyn NoiseSource) -> Self {
        let mut gcns = Vec::with_capacity(config.gcn_layers);
        let mut din = config.feature_dim;
        for _ in 0..config.gcn_layers {
            gcns.push(GcnLayer::new(din, config.hidden_dim, Activation::Elu, noise));
            din = config.hidden_dim;
        }
        let concat_dim = config.feature_dim + config.gcn_layers * config.hidden_dim;
        let mlp = Mlp::new(&[concat_dim, config.mlp_hidden, config.feature_dim], noise);
        Self { config, gcns, mlp }
    }

    /// `s_x(X_t, A_t, t)`: shape of the output equals the shape of `x`.
    pub fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        a: &Tensor,
        mask: &[bool],
        t: f64,
        spec: &SdeSpec,
    ) -> Result<Tensor, ModelError> {
        let std = check_time(spec, t)?;
        let a_norm = super::gcn::normalize_adjacency(tape, a, mask)?;
        let mut reps = vec![x.clone()];
        let mut h = x.clone();
        for layer in &self.gcns {
            h = layer.forward(tape, &h, &a_norm, mask)?;
            reps.push(h.clone());
        }
        let refs: Vec<&Tensor> = reps.iter().collect();
        let concat = tape.concat_last_dim(&refs)?;
        let out = self.mlp.forward(tape, &concat)?;
        let out = tape.mul(&out, &mask_column(mask))?;
        Ok(tape.scalar_mul(&out, 1.0 / std)?)
    }
}

impl ParamSet for ScoreModelX {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, g) in self.gcns.iter_mut().enumerate() {
            f(&format!("gcn{i}.w"), &mut g.w);
        }
        for (i, layer) in self.mlp.layers.iter_mut().enumerate() {
            f(&format!("mlp{i}.w"), &mut layer.w);
            f(&format!("mlp{i}.b"), &mut layer.b);
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScoreModelAConfig {
    pub feature_dim: usize,
    pub gmh_blocks: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub init_channels: usize,
    pub hidden_channels: usize,
    pub final_channels: usize,
    pub edge_mlp_hidden: usize,
    pub final_mlp_hidden: usize,
    /// Number of adjacency powers fed as initial channels.
    pub powers: usize,
}

impl ScoreModelAConfig {
    pub fn community_small(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            gmh_blocks: 5,
            hidden_dim: 32,
            heads: 4,
            head_dim: 8,
            init_channels: 2,
            hidden_channels: 8,
            final_channels: 4,
            edge_mlp_hidden: 32,
            final_mlp_hidden: 32,
            powers: 2,
        }
    }

    fn channel_chain(&self) -> Vec<(usize, usize)> {
        let k = self.gmh_blocks;
        (0..k)
            .map(|i| {
                let c_in = if i == 0 { self.init_channels } else { self.hidden_channels };
                let c_out = if i + 1 == k { self.final_channels } else { self.hidden_channels };
                (c_in, c_out)
            })
            .collect()
    }
}

/// Partial-score network for the adjacency: GMH blocks chained over edge
/// channels seeded with normalized adjacency powers, interleaved with GCN
/// updates of the node track; all channel stages are concatenated into a
/// final per-edge MLP. Output is symmetric with zero diagonal, masked, and
/// scaled by 1/std.
#[derive(Clone, Debug)]
pub struct ScoreModelA {
    pub config: ScoreModelAConfig,
    pub blocks: Vec<GmhBlock>,
    pub gcns: Vec<GcnLayer>,
    pub final_mlp: Mlp,
}

impl ScoreModelA {
    pub fn new(config: ScoreModelAConfig, noise: &mut dyn NoiseSource) -> Self {
        assert_eq!(
            config.init_channels, config.powers,
            "initial channels are the adjacency powers"
        );
        let chain = config.channel_chain();
        let mut blocks = Vec::with_capacity(config.gmh_blocks);
        let mut gcns = Vec::with_capacity(config.gmh_blocks);
        let mut din = config.feature_dim;
        for (c_in, c_out) in &chain {
            blocks.push(GmhBlock::new(
                din,
                config.hidden_dim,
                *c_in,
                *c_out,
                config.heads,
                config.head_dim,
                config.edge_mlp_hidden,
                noise,
            ));
            gcns.push(GcnLayer::new(config.hidden_dim, config.hidden_dim, Activation::Elu, noise));
            din = config.hidden_dim;
        }
        let total_channels: usize =
            config.init_channels + chain.iter().map(|(_, c)| *c).sum::<usize>();
        // raw adjacency channels saturate a tanh head; elu keeps gradients
        let mut final_mlp = Mlp::new(
            &[total_channels, config.final_mlp_hidden, config.final_mlp_hidden, 1],
            noise,
        );
        final_mlp.hidden_act = Activation::Elu;
        Self { config, blocks, gcns, final_mlp }
    }

    /// Initial edge channels: adjacency powers, each rescaled by its largest
    /// absolute entry (clamped at 1) to keep magnitudes O(1). The normalizer
    /// is read from data, so no gradient flows through the max itself.
    fn power_channels(
        &self,
        tape: &Tape,
        a: &Tensor,
        pair: &Tensor,
        n: usize,
    ) -> Result<Vec<Tensor>, ModelError> {
        let masked = tape.mul(a, pair)?;
        let mut channels = Vec::with_capacity(self.config.powers);
        let mut power = masked.clone();
        for p in 0..self.config.powers {
            if p > 0 {
                power = tape.matmul(&power, &masked)?;
            }
            let norm = power.amax().max(1.0);
            let scaled = tape.scalar_mul(&power, 1.0 / norm)?;
            channels.push(tape.reshape(&scaled, &[n * n, 1])?);
        }
        Ok(channels)
    }

    /// `s_a(X_t, A_t, t)`: symmetric, zero diagonal, masked, scaled by 1/std.
    pub fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        a: &Tensor,
        mask: &[bool],
        t: f64,
        spec: &SdeSpec,
    ) -> Result<Tensor, ModelError> {
        let std = check_time(spec, t)?;
        let n = mask.len();
        let pair = mask_pair(mask);
        let a_norm = super::gcn::normalize_adjacency(tape, a, mask)?;

        let power_cols = self.power_channels(tape, a, &pair, n)?;
        let refs: Vec<&Tensor> = power_cols.iter().collect();
        let mut edges = tape.concat_last_dim(&refs)?;
        let mut stages = vec![edges.clone()];
        let mut h = x.clone();
        for (block, gcn) in self.blocks.iter().zip(&self.gcns) {
            let (h_att, e_next) = block.forward(tape, &h, &edges, mask)?;
            h = gcn.forward(tape, &h_att, &a_norm, mask)?;
            edges = e_next;
            stages.push(edges.clone());
        }
        let stage_refs: Vec<&Tensor> = stages.iter().collect();
        let all_channels = tape.concat_last_dim(&stage_refs)?;
        let out = self.final_mlp.forward(tape, &all_channels)?;
        let out = tape.reshape(&out, &[n, n])?;

        // symmetrize, zero diagonal, mask, scale
        let sym = tape.scalar_mul(&tape.add(&out, &tape.transpose(&out)?)?, 0.5)?;
        let diag = {
            let mut d = vec![0.0; n * n];
            for i in 0..n {
                d[i * n + i] = 1.0;
            }
            Tensor::from_parts(vec![n, n], d, None)
        };
        let sym = tape.masked_fill(&sym, &diag, 0.0)?;
        let sym = tape.mul(&sym, &pair)?;
        Ok(tape.scalar_mul(&sym, 1.0 / std)?)
    }
}

impl ParamSet for ScoreModelA {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let prefix = format!("blk{i}");
            b.visit_params(&mut |name, t| f(&format!("{prefix}.{name}"), t));
        }
        for (i, g) in self.gcns.iter_mut().enumerate() {
            f(&format!("gcn{i}.w"), &mut g.w);
        }
        for (i, layer) in self.final_mlp.layers.iter_mut().enumerate() {
            f(&format!("fmlp{i}.w"), &mut layer.w);
            f(&format!("fmlp{i}.b"), &mut layer.b);
        }
    }
}

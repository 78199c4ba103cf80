use super::{init_weight, mask_column, mask_pair, Mlp, ParamSet};
use crate::autodiff::{Activation, Tape, Tensor};
use crate::error::ModelError;
use crate::rng::NoiseSource;

/// Graph multi-head attention block.
///
/// Edge channels are carried as an `(n*n) x C` matrix (row = node pair, in
/// row-major (i, j) order). Each block fuses per-head dot-product attention
/// logits with the incoming channels through a per-entry MLP, emits
/// symmetrized edge channels, and updates node features by
/// softmax-normalized aggregation.
#[derive(Clone, Debug)]
pub struct GmhBlock {
    pub heads: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub head_dim: usize,
    /// Query/key projections indexed by head * c_in + channel.
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Tensor,
    pub edge_mlp: Mlp,
}

impl GmhBlock {
    pub fn new(
        din: usize,
        dout: usize,
        c_in: usize,
        c_out: usize,
        heads: usize,
        head_dim: usize,
        edge_hidden: usize,
        noise: &mut dyn NoiseSource,
    ) -> Self {
        let mut wq = Vec::with_capacity(heads * c_in);
        let mut wk = Vec::with_capacity(heads * c_in);
        for _ in 0..heads * c_in {
            wq.push(init_weight(din, head_dim, noise));
            wk.push(init_weight(din, head_dim, noise));
        }
        let mut edge_mlp = Mlp::new(&[heads * c_in + c_in, edge_hidden, c_out], noise);
        edge_mlp.hidden_act = Activation::Elu;
        Self { heads, c_in, c_out, head_dim, wq, wk, wv: init_weight(din, dout, noise), edge_mlp }
    }

    /// Returns the updated node features and the new edge-channel matrix.
    pub fn forward(
        &self,
        tape: &Tape,
        h: &Tensor,
        edges: &Tensor,
        mask: &[bool],
    ) -> Result<(Tensor, Tensor), ModelError> {
        let n = mask.len();
        debug_assert_eq!(edges.rows(), n * n);
        debug_assert_eq!(edges.cols(), self.c_in);
        let pair = mask_pair(mask);
        let mask_e = tape.reshape(&pair, &[n * n, 1])?;

        // per-(head, channel) attention logits, flattened to (n*n) x 1 columns
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut feat_cols: Vec<Tensor> = Vec::with_capacity(self.heads * self.c_in + 1);
        for hc in 0..self.heads * self.c_in {
            let q = tape.matmul(h, &self.wq[hc])?;
            let k = tape.matmul(h, &self.wk[hc])?;
            let logits = tape.scalar_mul(&tape.matmul(&q, &tape.transpose(&k)?)?, scale)?;
            let logits = tape.mul(&logits, &pair)?;
            feat_cols.push(tape.reshape(&logits, &[n * n, 1])?);
        }
        feat_cols.push(edges.clone());
        let feat_refs: Vec<&Tensor> = feat_cols.iter().collect();
        let feat = tape.concat_last_dim(&feat_refs)?;

        let e_new = self.edge_mlp.forward(tape, &feat)?;
        // symmetrize over the (i, j) pair structure
        let swap: Vec<usize> = (0..n * n).map(|r| (r % n) * n + r / n).collect();
        let e_sym = tape.scalar_mul(&tape.add(&e_new, &tape.permute_rows(&e_new, &swap)?)?, 0.5)?;
        let e_sym = tape.mul(&e_sym, &mask_e)?;

        // node update: sum over channels of row-softmax-normalized edge maps
        let inactive_cols = Tensor::from_parts(
            vec![n, n],
            (0..n * n)
                .map(|r| if mask[r % n] { 0.0 } else { 1.0 })
                .collect(),
            None,
        );
        let mut acc: Option<Tensor> = None;
        for c in 0..self.c_out {
            let chan = tape.reshape(&tape.slice_cols(&e_sym, c, c + 1)?, &[n, n])?;
            let filled = tape.masked_fill(&chan, &inactive_cols, -1e9)?;
            let att = tape.mul(&tape.row_softmax(&filled)?, &pair)?;
            acc = Some(match acc {
                Some(prev) => tape.add(&prev, &att)?,
                None => att,
            });
        }
        let att_sum = acc.expect("c_out >= 1");
        let hv = tape.matmul(h, &self.wv)?;
        let h_new = tape.activation(&tape.matmul(&att_sum, &hv)?, Activation::Elu)?;
        let h_new = tape.mul(&h_new, &mask_column(mask))?;
        Ok((h_new, e_sym))
    }
}

/// Functional form used by the spec's operation contract: edge channels in
/// and out as (n*n) x C matrices.
pub fn gmh_block(
    tape: &Tape,
    block: &GmhBlock,
    h: &Tensor,
    edges: &Tensor,
    mask: &[bool],
) -> Result<(Tensor, Tensor), ModelError> {
    block.forward(tape, h, edges, mask)
}

impl ParamSet for GmhBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, t) in self.wq.iter_mut().enumerate() {
            f(&format!("wq{i}"), t);
        }
        for (i, t) in self.wk.iter_mut().enumerate() {
            f(&format!("wk{i}"), t);
        }
        f("wv", &mut self.wv);
        for (i, layer) in self.edge_mlp.layers.iter_mut().enumerate() {
            f(&format!("emlp{i}.w"), &mut layer.w);
            f(&format!("emlp{i}.b"), &mut layer.b);
        }
    }
}

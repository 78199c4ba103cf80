use super::{init_weight, mask_column, mask_pair, ParamSet};
use crate::autodiff::{Activation, Tape, Tensor};
use crate::error::ModelError;
use crate::rng::NoiseSource;

/// Symmetric degree normalization of `(A + I)` restricted to the mask:
/// `D^{-1/2} (A + I) D^{-1/2}` with degrees clamped at 1 so isolated and
/// masked rows stay well-defined.
///
/// Degrees are magnitude row sums: on 0/1 data adjacencies this is the usual
/// degree matrix, and on the signed matrices seen mid-diffusion it keeps the
/// propagation non-amplifying. The normalizer is read from data, so no
/// gradient flows through the degree path itself.
pub fn normalize_adjacency(
    tape: &Tape,
    a: &Tensor,
    mask: &[bool],
) -> Result<Tensor, ModelError> {
    let n = mask.len();
    let pair = mask_pair(mask);
    let with_loops = tape.mul(&tape.add(a, &Tensor::eye(n))?, &pair)?;
    let mut inv_sqrt = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = with_loops.data()[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum();
        inv_sqrt[i] = 1.0 / deg.max(1.0).sqrt();
    }
    let mut outer = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            outer[i * n + j] = inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let outer = Tensor::from_parts(vec![n, n], outer, None);
    Ok(tape.mul(&with_loops, &outer)?)
}

/// One graph-convolution layer: `H' = act(A_norm H W)`, masked rows zeroed.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub w: Tensor,
    pub act: Activation,
}

impl GcnLayer {
    pub fn new(din: usize, dout: usize, act: Activation, noise: &mut dyn NoiseSource) -> Self {
        Self { w: init_weight(din, dout, noise), act }
    }

    pub fn forward(
        &self,
        tape: &Tape,
        h: &Tensor,
        a_norm: &Tensor,
        mask: &[bool],
    ) -> Result<Tensor, ModelError> {
        let out = tape.matmul(&tape.matmul(a_norm, h)?, &self.w)?;
        let out = tape.activation(&out, self.act)?;
        Ok(tape.mul(&out, &mask_column(mask))?)
    }
}

/// Functional form used by the spec's operation contract.
pub fn gcn_layer(
    tape: &Tape,
    h: &Tensor,
    a: &Tensor,
    mask: &[bool],
    w: &Tensor,
    act: Activation,
) -> Result<Tensor, ModelError> {
    let a_norm = normalize_adjacency(tape, a, mask)?;
    let out = tape.matmul(&tape.matmul(&a_norm, h)?, w)?;
    let out = tape.activation(&out, act)?;
    Ok(tape.mul(&out, &mask_column(mask))?)
}

impl ParamSet for GcnLayer {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("w", &mut self.w);
    }
}

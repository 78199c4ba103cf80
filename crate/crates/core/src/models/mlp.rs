use super::{init_weight, ParamSet};
use crate::autodiff::{Activation, Tape, Tensor};
use crate::error::ModelError;
use crate::rng::NoiseSource;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(din: usize, dout: usize, noise: &mut dyn NoiseSource) -> Self {
        Self { w: init_weight(din, dout, noise), b: Tensor::zeros(&[1, dout]) }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, ModelError> {
        Ok(tape.add(&tape.matmul(x, &self.w)?, &self.b)?)
    }
}

/// Row-wise multilayer perceptron; tanh between layers, linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_act: Activation,
}

impl Mlp {
    pub fn new(dims: &[usize], noise: &mut dyn NoiseSource) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], noise))
            .collect();
        Self { layers, hidden_act: Activation::Tanh }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, ModelError> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, &h)?;
            if i < last {
                h = tape.activation(&h, self.hidden_act)?;
            }
        }
        Ok(h)
    }
}

impl ParamSet for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

impl ParamSet for Mlp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            f(&format!("l{i}.w"), &mut layer.w);
            f(&format!("l{i}.b"), &mut layer.b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianNoise;

    #[test]
    fn mlp_shapes_and_determinism() {
        let mut noise = GaussianNoise::from_seed(1);
        let mlp = Mlp::new(&[4, 8, 2], &mut noise);
        let tape = Tape::inference();
        let x = Tensor::from_vec(&[3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let y = mlp.forward(&tape, &x).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        let y2 = mlp.forward(&tape, &x).unwrap();
        assert_eq!(y.data(), y2.data());
    }
}

use super::{Tape, Tensor};
use crate::error::AutodiffError;
use crate::rng::NoiseSource;

/// Hutchinson estimate of the squared Frobenius norm of the Jacobian of `f`
/// at `input`.
///
/// Each probe draws a standard-normal `v`, forms the scalar `<f(x), v>` on a
/// fresh tape and differentiates it with respect to `x`; the mean of the
/// squared gradient norms converges to `||J||_F^2`.
pub fn jacobian_frobenius_sq<F>(
    f: F,
    input: &Tensor,
    probes: usize,
    noise: &mut dyn NoiseSource,
) -> Result<f64, AutodiffError>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor, AutodiffError>,
{
    assert!(probes >= 1, "jacobian_frobenius_sq needs at least one probe");
    let mut acc = 0.0;
    for _ in 0..probes {
        let tape = Tape::recording();
        let x = tape.var(input);
        let out = f(&tape, &x)?;
        let mut v = vec![0.0; out.numel()];
        noise.fill_standard_normal(&mut v);
        let v = Tensor::from_parts(out.shape().to_vec(), v, None);
        let prod = tape.mul(&out, &v)?;
        let loss = tape.sum(&prod)?;
        let grads = tape.backward(&loss)?;
        let g = grads.get(&x);
        acc += g.data().iter().map(|x| x * x).sum::<f64>();
    }
    Ok(acc / probes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianNoise;

    #[test]
    fn identity_map_gives_dimension() {
        // J = I on an n-vector -> ||J||_F^2 = n
        let n = 6;
        let x = Tensor::zeros(&[1, n]);
        let mut noise = GaussianNoise::from_seed(11);
        let est = jacobian_frobenius_sq(
            |tape, x| tape.scalar_mul(x, 1.0),
            &x,
            1000,
            &mut noise,
        )
        .unwrap();
        assert!((est - n as f64).abs() / (n as f64) < 0.10, "est {est}");
    }

    #[test]
    fn doubling_map_gives_four_n() {
        let n = 5;
        let x = Tensor::zeros(&[1, n]);
        let mut noise = GaussianNoise::from_seed(12);
        let est = jacobian_frobenius_sq(
            |tape, x| tape.scalar_mul(x, 2.0),
            &x,
            1000,
            &mut noise,
        )
        .unwrap();
        let target = 4.0 * n as f64;
        assert!((est - target).abs() / target < 0.10, "est {est}");
    }

    #[test]
    fn linear_map_matches_weight_norm() {
        let w = Tensor::from_vec(&[3, 4], (0..12).map(|i| 0.1 * i as f64 - 0.5).collect()).unwrap();
        let wf2: f64 = w.data().iter().map(|v| v * v).sum();
        let x = Tensor::zeros(&[1, 3]);
        let mut noise = GaussianNoise::from_seed(13);
        let est =
            jacobian_frobenius_sq(|tape, x| tape.matmul(x, &w), &x, 1000, &mut noise).unwrap();
        assert!((est - wf2).abs() / wf2 < 0.10, "est {est} vs {wf2}");
    }

    #[test]
    fn converges_within_five_percent_at_ten_thousand_probes() {
        let w = Tensor::from_vec(&[4, 4], (0..16).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        let wf2: f64 = w.data().iter().map(|v| v * v).sum();
        let x = Tensor::zeros(&[1, 4]);
        let mut noise = GaussianNoise::from_seed(14);
        let est =
            jacobian_frobenius_sq(|tape, x| tape.matmul(x, &w), &x, 10_000, &mut noise).unwrap();
        assert!((est - wf2).abs() / wf2 < 0.05, "est {est} vs {wf2}");
    }
}

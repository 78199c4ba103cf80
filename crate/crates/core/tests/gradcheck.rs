//! Central-finite-difference gradient checks for every differentiable tape
//! operation, over randomized shapes.

use gdiff_core::autodiff::{Activation, Tape, Tensor};
use gdiff_core::rng::{GaussianNoise, NoiseSource};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Compares tape gradients of `loss = sum(op(inputs) * w)` against central
/// finite differences at a handful of coordinates of every input.
fn grad_check<F>(op: F, inputs: &[Tensor], noise: &mut GaussianNoise, label: &str)
where
    F: Fn(&Tape, &[Tensor]) -> Tensor,
{
    let probe_w = {
        let tape = Tape::inference();
        let out = op(&tape, inputs);
        Tensor::from_vec(out.shape(), noise.normal_vec(out.numel())).unwrap()
    };
    let loss_of = |ins: &[Tensor]| -> f64 {
        let tape = Tape::inference();
        let out = op(&tape, ins);
        out.data().iter().zip(probe_w.data()).map(|(a, b)| a * b).sum()
    };

    let tape = Tape::recording();
    let vars: Vec<Tensor> = inputs.iter().map(|t| tape.var(t)).collect();
    let out = op(&tape, &vars);
    let prod = tape.mul(&out, &probe_w).unwrap();
    let loss = tape.sum(&prod).unwrap();
    let grads = tape.backward(&loss).unwrap();

    for (vi, var) in vars.iter().enumerate() {
        let g = grads.get(var);
        let n = inputs[vi].numel();
        let coords: Vec<usize> = if n <= 4 {
            (0..n).collect()
        } else {
            vec![0, n / 3, n / 2, n - 1]
        };
        for &c in &coords {
            let mut plus = inputs.to_vec();
            plus[vi].data_mut()[c] += H;
            let mut minus = inputs.to_vec();
            minus[vi].data_mut()[c] -= H;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * H);
            let an = g.data()[c];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                (fd - an).abs() / denom < TOL,
                "{label}: input {vi} coord {c}: fd {fd} vs analytic {an}"
            );
        }
    }
}

fn random_tensor(shape: &[usize], noise: &mut GaussianNoise) -> Tensor {
    Tensor::from_vec(shape, noise.normal_vec(shape.iter().product())).unwrap()
}

/// Inputs bounded away from relu/elu kinks and power singularities.
fn random_tensor_offset(shape: &[usize], noise: &mut GaussianNoise) -> Tensor {
    let data = noise
        .normal_vec(shape.iter().product())
        .iter()
        .map(|z| z + if *z >= 0.0 { 0.3 } else { -0.3 })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

#[test]
fn all_ops_pass_randomized_gradient_checks() {
    let mut noise = GaussianNoise::from_seed(2024);
    for trial in 0..20 {
        let m = 1 + (noise.uniform() * 5.0) as usize;
        let k = 1 + (noise.uniform() * 5.0) as usize;
        let n = 1 + (noise.uniform() * 5.0) as usize;
        let label = format!("trial {trial} (m={m}, k={k}, n={n})");

        let a = random_tensor(&[m, k], &mut noise);
        let b = random_tensor(&[k, n], &mut noise);
        grad_check(
            |t, ins| t.matmul(&ins[0], &ins[1]).unwrap(),
            &[a.clone(), b.clone()],
            &mut noise,
            &format!("matmul {label}"),
        );

        let c = random_tensor(&[m, k], &mut noise);
        grad_check(
            |t, ins| t.add(&ins[0], &ins[1]).unwrap(),
            &[a.clone(), c.clone()],
            &mut noise,
            &format!("add {label}"),
        );
        let row = random_tensor(&[1, k], &mut noise);
        grad_check(
            |t, ins| t.add(&ins[0], &ins[1]).unwrap(),
            &[a.clone(), row],
            &mut noise,
            &format!("add-broadcast {label}"),
        );
        grad_check(
            |t, ins| t.sub(&ins[0], &ins[1]).unwrap(),
            &[a.clone(), c.clone()],
            &mut noise,
            &format!("sub {label}"),
        );
        grad_check(
            |t, ins| t.mul(&ins[0], &ins[1]).unwrap(),
            &[a.clone(), c.clone()],
            &mut noise,
            &format!("mul {label}"),
        );
        let col = random_tensor(&[m, 1], &mut noise);
        grad_check(
            |t, ins| t.mul(&ins[0], &ins[1]).unwrap(),
            &[a.clone(), col],
            &mut noise,
            &format!("mul-column {label}"),
        );
        grad_check(
            |t, ins| t.scalar_mul(&ins[0], -1.7).unwrap(),
            &[a.clone()],
            &mut noise,
            &format!("scalar_mul {label}"),
        );
        grad_check(
            |t, ins| t.transpose(&ins[0]).unwrap(),
            &[a.clone()],
            &mut noise,
            &format!("transpose {label}"),
        );
        let d = random_tensor(&[m, n], &mut noise);
        grad_check(
            |t, ins| t.concat_last_dim(&[&ins[0], &ins[1]]).unwrap(),
            &[a.clone(), d],
            &mut noise,
            &format!("concat {label}"),
        );
        grad_check(
            |t, ins| t.row_softmax(&ins[0]).unwrap(),
            &[a.clone()],
            &mut noise,
            &format!("row_softmax {label}"),
        );
        let off = random_tensor_offset(&[m, k], &mut noise);
        for act in [Activation::Tanh, Activation::Relu, Activation::Elu] {
            grad_check(
                |t, ins| t.activation(&ins[0], act).unwrap(),
                &[off.clone()],
                &mut noise,
                &format!("activation-{act:?} {label}"),
            );
        }
        grad_check(
            |t, ins| t.sum(&ins[0]).unwrap(),
            &[a.clone()],
            &mut noise,
            &format!("sum {label}"),
        );
        grad_check(
            |t, ins| t.mean(&ins[0]).unwrap(),
            &[a.clone()],
            &mut noise,
            &format!("mean {label}"),
        );
        grad_check(
            |t, ins| t.power(&ins[0], 3.0).unwrap(),
            &[a.clone()],
            &mut noise,
            &format!("power-3 {label}"),
        );
        let positive = Tensor::from_vec(
            &[m, k],
            noise.normal_vec(m * k).iter().map(|z| 1.0 + z.abs()).collect(),
        )
        .unwrap();
        grad_check(
            |t, ins| t.power(&ins[0], -0.5).unwrap(),
            &[positive],
            &mut noise,
            &format!("power-rsqrt {label}"),
        );
        let mask = Tensor::from_vec(
            &[m, k],
            (0..m * k).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        grad_check(
            |t, ins| t.masked_fill(&ins[0], &mask, 5.0).unwrap(),
            &[a.clone()],
            &mut noise,
            &format!("masked_fill {label}"),
        );
        grad_check(
            |t, ins| t.reshape(&ins[0], &[k * m]).unwrap(),
            &[a.clone()],
            &mut noise,
            &format!("reshape {label}"),
        );
        grad_check(
            |t, ins| t.slice_cols(&ins[0], 0, (k + 1) / 2).unwrap(),
            &[a.clone()],
            &mut noise,
            &format!("slice_cols {label}"),
        );
        let perm: Vec<usize> = (0..m).rev().collect();
        grad_check(
            |t, ins| t.permute_rows(&ins[0], &perm).unwrap(),
            &[a.clone()],
            &mut noise,
            &format!("permute_rows {label}"),
        );
    }
}

/// Gradient flow through both score models on a small graph, matching finite
/// differences through the full forward passes.
#[test]
fn score_model_gradients_match_finite_differences() {
    use gdiff_core::models::{
        ParamSet, ScoreModelA, ScoreModelAConfig, ScoreModelX, ScoreModelXConfig,
    };
    use gdiff_core::sde::SdeSpec;

    let mut noise = GaussianNoise::from_seed(9);
    let n = 5;
    let f = 3;
    // random symmetric 5-node graph
    let mut adj = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if noise.uniform() < 0.5 {
                adj[i][j] = 1.0;
                adj[j][i] = 1.0;
            }
        }
    }
    let g = gdiff_core::graph::Graph::from_adjacency(&adj, n, f).unwrap();
    let spec = SdeSpec::vp(0.1, 1.0, 100).unwrap();
    let cfg_x = ScoreModelXConfig { feature_dim: f, gcn_layers: 2, hidden_dim: 6, mlp_hidden: 6 };
    let cfg_a = ScoreModelAConfig {
        feature_dim: f,
        gmh_blocks: 2,
        hidden_dim: 6,
        heads: 2,
        head_dim: 3,
        init_channels: 2,
        hidden_channels: 3,
        final_channels: 2,
        edge_mlp_hidden: 4,
        final_mlp_hidden: 4,
        powers: 2,
    };
    let sx = ScoreModelX::new(cfg_x, &mut noise);
    let sa = ScoreModelA::new(cfg_a, &mut noise);
    let t = 0.6;

    let loss_x = |m: &ScoreModelX| -> f64 {
        let tape = Tape::inference();
        let out = m.forward(&tape, &g.x, &g.a, &g.mask, t, &spec).unwrap();
        out.data().iter().map(|v| v * v).sum()
    };
    let loss_a = |m: &ScoreModelA| -> f64 {
        let tape = Tape::inference();
        let out = m.forward(&tape, &g.x, &g.a, &g.mask, t, &spec).unwrap();
        out.data().iter().map(|v| v * v).sum()
    };

    // analytic gradients of sum(out^2)
    let tape = Tape::recording();
    let bx = sx.bind(&tape);
    let out = bx.forward(&tape, &g.x, &g.a, &g.mask, t, &spec).unwrap();
    let sq = tape.mul(&out, &out).unwrap();
    let loss = tape.sum(&sq).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let mut first_grad = None;
    {
        let mut b = bx.clone();
        b.visit_params(&mut |name, p| {
            if name == "gcn0.w" {
                first_grad = Some(grads.get(p));
            }
        });
    }
    let gx = first_grad.unwrap();
    for c in [0usize, 5, 11] {
        let mut plus = sx.clone();
        plus.visit_params(&mut |nm, p| {
            if nm == "gcn0.w" {
                p.data_mut()[c] += H;
            }
        });
        let mut minus = sx.clone();
        minus.visit_params(&mut |nm, p| {
            if nm == "gcn0.w" {
                p.data_mut()[c] -= H;
            }
        });
        let fd = (loss_x(&plus) - loss_x(&minus)) / (2.0 * H);
        let an = gx.data()[c];
        let denom = fd.abs().max(an.abs()).max(1e-6);
        assert!((fd - an).abs() / denom < 1e-3, "x-model coord {c}: {fd} vs {an}");
    }

    let tape = Tape::recording();
    let ba = sa.bind(&tape);
    let out = ba.forward(&tape, &g.x, &g.a, &g.mask, t, &spec).unwrap();
    let sq = tape.mul(&out, &out).unwrap();
    let loss = tape.sum(&sq).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let mut wq_grad = None;
    {
        let mut b = ba.clone();
        b.visit_params(&mut |name, p| {
            if name == "blk0.wq0" {
                wq_grad = Some(grads.get(p));
            }
        });
    }
    let ga = wq_grad.unwrap();
    for c in [0usize, 4, 8] {
        let mut plus = sa.clone();
        plus.visit_params(&mut |nm, p| {
            if nm == "blk0.wq0" {
                p.data_mut()[c] += H;
            }
        });
        let mut minus = sa.clone();
        minus.visit_params(&mut |nm, p| {
            if nm == "blk0.wq0" {
                p.data_mut()[c] -= H;
            }
        });
        let fd = (loss_a(&plus) - loss_a(&minus)) / (2.0 * H);
        let an = ga.data()[c];
        let denom = fd.abs().max(an.abs()).max(1e-6);
        assert!((fd - an).abs() / denom < 1e-3, "a-model coord {c}: {fd} vs {an}");
    }
}

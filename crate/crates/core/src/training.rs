//! Denoising score-matching training of both partial-score models: Adam with
//! weight decay and gradient clipping, optional EMA shadow parameters,
//! per-epoch metrics, and periodic checkpoints.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor};
use crate::error::TrainError;
use crate::graph::{Graph, GraphDataset};
use crate::models::{
    save_checkpoint, Checkpoint, ParamSet, ScoreModelA, ScoreModelX,
};
use crate::rng::{NoiseSource, SeedStream};
use crate::sde::{perturb, NoisePattern, SdeSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LambdaMode {
    /// lambda(t) = Sigma(t), the per-component marginal variance; makes the
    /// loss an eps-prediction MSE.
    SigmaSq,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_mode: LambdaMode,
    pub t_eps: f64,
    pub batch_size: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_mode: LambdaMode::SigmaSq, t_eps: 1e-3, batch_size: 128 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub ema_decay: Option<f64>,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            weight_decay: 1e-4,
            epochs: 5000,
            ema_decay: None,
            grad_clip: Some(1.0),
            seed: 42,
        }
    }
}

/// Scalar pair of taped losses, kept attached so a caller can backprop.
pub struct DsmLosses {
    pub loss_x: Tensor,
    pub loss_a: Tensor,
}

/// Eq-style DSM losses over a batch: per graph, draw t ~ U(t_eps, T), perturb
/// X and A independently through their SDEs, and regress the model outputs on
/// the transition-kernel scores `-eps/std` with lambda(t) weighting and
/// masked mean-square reduction.
#[allow(clippy::too_many_arguments)]
pub fn dsm_losses(
    tape: &Tape,
    batch: &[&Graph],
    model_x: &ScoreModelX,
    model_a: &ScoreModelA,
    spec_x: &SdeSpec,
    spec_a: &SdeSpec,
    cfg: &LossConfig,
    noise: &mut dyn NoiseSource,
) -> Result<DsmLosses, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let t_max = spec_x.t_terminal;
    let mut acc_x: Option<Tensor> = None;
    let mut acc_a: Option<Tensor> = None;
    for g in batch {
        let t = cfg.t_eps + noise.uniform() * (t_max - cfg.t_eps);
        let n_max = g.n_max();
        let f = g.feature_dim();
        let pat_x = NoisePattern::MaskedRows { rows: n_max, cols: f, mask: g.mask.clone() };
        let pat_a = NoisePattern::SymmetricAdj { n: n_max, mask: g.mask.clone() };
        let px = perturb(spec_x, &g.x, t, &pat_x, noise)?;
        let pa = perturb(spec_a, &g.a, t, &pat_a, noise)?;

        let out_x = model_x.forward(tape, &px.x_t, &pa.x_t, &g.mask, t, spec_x)?;
        let out_a = model_a.forward(tape, &px.x_t, &pa.x_t, &g.mask, t, spec_a)?;

        let target_x = scale_plain(&px.eps, -1.0 / px.std);
        let target_a = scale_plain(&pa.eps, -1.0 / pa.std);

        let lam_x = spec_x.marginal_params(t)?.var;
        let lam_a = spec_a.marginal_params(t)?.var;
        let active = g.n as f64;

        let dx = tape.sub(&out_x, &target_x)?;
        let dx2 = tape.mul(&dx, &dx)?;
        let lx = tape.scalar_mul(&tape.sum(&dx2)?, lam_x / (active * f as f64))?;

        let da = tape.sub(&out_a, &target_a)?;
        let da2 = tape.mul(&da, &da)?;
        let la = tape.scalar_mul(&tape.sum(&da2)?, lam_a / (active * active))?;

        acc_x = Some(match acc_x {
            Some(prev) => tape.add(&prev, &lx)?,
            None => lx,
        });
        acc_a = Some(match acc_a {
            Some(prev) => tape.add(&prev, &la)?,
            None => la,
        });
    }
    let inv = 1.0 / batch.len() as f64;
    Ok(DsmLosses {
        loss_x: tape.scalar_mul(&acc_x.expect("nonempty"), inv)?,
        loss_a: tape.scalar_mul(&acc_a.expect("nonempty"), inv)?,
    })
}

fn scale_plain(t: &Tensor, c: f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect(), None)
}

/// Adam with L2 weight decay folded into the gradient (per the usual
/// non-decoupled convention).
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: vec![], v: vec![] }
    }

    /// One update over an ordered parameter list with matching gradients.
    /// `clip` rescales the global gradient norm (over all parameters) when it
    /// exceeds the threshold.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], clip: Option<f64>) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        let scale = match clip {
            Some(c) => {
                let norm: f64 = grads
                    .iter()
                    .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let grad = g.data()[i] * scale + self.weight_decay * pd[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * grad;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * grad * grad;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// `shadow' = decay * shadow + (1 - decay) * params`, elementwise.
pub fn ema_update(shadow: &mut [Tensor], params: &[&Tensor], decay: f64) {
    assert_eq!(shadow.len(), params.len());
    for (s, p) in shadow.iter_mut().zip(params) {
        assert_eq!(s.shape(), p.shape(), "ema shape mismatch");
        let sd = s.data_mut();
        for (a, b) in sd.iter_mut().zip(p.data()) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_x: f64,
    pub loss_a: f64,
    pub seconds: f64,
}

/// One line per epoch: `epoch<TAB>loss_x<TAB>loss_a<TAB>seconds`.
pub fn format_metrics_log(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch\tloss_x\tloss_a\tseconds\n");
    for e in history {
        s.push_str(&format!("{}\t{:.6}\t{:.6}\t{:.3}\n", e.epoch, e.loss_x, e.loss_a, e.seconds));
    }
    s
}

pub struct CheckpointSink {
    pub dir: PathBuf,
    pub every: usize,
    pub config_json: String,
}

pub struct TrainOutput {
    pub history: Vec<EpochStats>,
    /// EMA shadows aligned with the concatenated (model_x, model_a) parameter
    /// order, when EMA was enabled.
    pub ema: Option<Vec<Tensor>>,
    /// Final state of the perturbation noise stream.
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

/// Trains both models jointly: shared batches and t draws, one Adam over the
/// concatenated parameter lists. Deterministic given `cfg.seed`. On a
/// non-finite loss the models are rolled back to the last finished epoch and
/// `DivergenceDetected` is returned.
pub fn train(
    dataset: &GraphDataset,
    model_x: &mut ScoreModelX,
    model_a: &mut ScoreModelA,
    spec_x: &SdeSpec,
    spec_a: &SdeSpec,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    ckpt: Option<&CheckpointSink>,
) -> Result<TrainOutput, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let stream = SeedStream::new(cfg.seed);
    let mut order_rng = stream.rng("batch-order");
    let mut noise = stream.noise("perturbation");
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let mut ema: Option<Vec<Tensor>> = cfg.ema_decay.map(|_| {
        let mut shadows = Vec::new();
        let mut mx = model_x.clone();
        mx.visit_params(&mut |_, t| shadows.push(t.detach()));
        let mut ma = model_a.clone();
        ma.visit_params(&mut |_, t| shadows.push(t.detach()));
        shadows
    });

    let mut history = Vec::with_capacity(cfg.epochs);
    let started = Instant::now();
    let n = dataset.len();
    let mut snapshot = (model_x.clone(), model_a.clone());

    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut order_rng);

        let mut ep_lx = 0.0;
        let mut ep_la = 0.0;
        let mut batches = 0.0;
        for chunk in idx.chunks(loss_cfg.batch_size.max(1)) {
            let batch: Vec<&Graph> = chunk.iter().map(|&i| &dataset.graphs[i]).collect();
            let tape = Tape::recording();
            let bx = model_x.bind(&tape);
            let ba = model_a.bind(&tape);
            let losses =
                dsm_losses(&tape, &batch, &bx, &ba, spec_x, spec_a, loss_cfg, &mut noise)?;
            let total = tape.add(&losses.loss_x, &losses.loss_a)?;
            let lx = losses.loss_x.item();
            let la = losses.loss_a.item();
            if !lx.is_finite() || !la.is_finite() {
                *model_x = snapshot.0;
                *model_a = snapshot.1;
                return Err(TrainError::DivergenceDetected { epoch });
            }
            let grads = tape.backward(&total)?;
            apply_step(model_x, model_a, &bx, &ba, &grads, &mut adam, cfg, &mut ema);
            ep_lx += lx;
            ep_la += la;
            batches += 1.0;
        }
        snapshot = (model_x.clone(), model_a.clone());
        history.push(EpochStats {
            epoch,
            loss_x: ep_lx / batches,
            loss_a: ep_la / batches,
            seconds: started.elapsed().as_secs_f64(),
        });
        if let Some(sink) = ckpt {
            if sink.every > 0 && (epoch + 1) % sink.every == 0 {
                let path = sink.dir.join(format!("epoch{:06}.ckpt", epoch + 1));
                save_snapshot(model_x, model_a, &ema, epoch as u64 + 1, &sink.config_json, &path)?;
            }
        }
    }
    let (rng_seed, rng_word_pos) = noise.state();
    Ok(TrainOutput { history, ema, rng_seed, rng_word_pos })
}

fn apply_step(
    model_x: &mut ScoreModelX,
    model_a: &mut ScoreModelA,
    bound_x: &ScoreModelX,
    bound_a: &ScoreModelA,
    grads: &Gradients,
    adam: &mut Adam,
    cfg: &TrainConfig,
    ema: &mut Option<Vec<Tensor>>,
) {
    let mut grad_list = Vec::new();
    {
        let mut bx = bound_x.clone();
        bx.visit_params(&mut |_, t| grad_list.push(grads.get(t)));
        let mut ba = bound_a.clone();
        ba.visit_params(&mut |_, t| grad_list.push(grads.get(t)));
    }
    let mut updated: Vec<Tensor> = Vec::new();
    model_x.visit_params(&mut |_, t| updated.push(t.detach()));
    model_a.visit_params(&mut |_, t| updated.push(t.detach()));
    {
        let mut refs: Vec<&mut Tensor> = updated.iter_mut().collect();
        adam.step(&mut refs, &grad_list, cfg.grad_clip);
    }
    let mut it = updated.into_iter();
    model_x.visit_params(&mut |_, t| *t = it.next().expect("param count stable"));
    model_a.visit_params(&mut |_, t| *t = it.next().expect("param count stable"));

    if let (Some(shadows), Some(decay)) = (ema.as_mut(), cfg.ema_decay) {
        let mut current = Vec::new();
        model_x.visit_params(&mut |_, t| current.push(t.detach()));
        model_a.visit_params(&mut |_, t| current.push(t.detach()));
        let refs: Vec<&Tensor> = current.iter().collect();
        ema_update(shadows, &refs, decay);
    }
}

fn save_snapshot(
    model_x: &mut ScoreModelX,
    model_a: &mut ScoreModelA,
    ema: &Option<Vec<Tensor>>,
    step: u64,
    config_json: &str,
    path: &std::path::Path,
) -> Result<(), TrainError> {
    let mut params = Vec::new();
    model_x.visit_params(&mut |name, t| params.push((format!("x.{name}"), t.detach())));
    model_a.visit_params(&mut |name, t| params.push((format!("a.{name}"), t.detach())));
    let ema_named = match ema {
        Some(shadows) => params
            .iter()
            .map(|(n, _)| n.clone())
            .zip(shadows.iter().cloned())
            .collect(),
        None => Vec::new(),
    };
    let ckpt = Checkpoint {
        config_json: config_json.to_string(),
        step,
        rng_seed: [0; 32],
        rng_word_pos: 0,
        params,
        ema: ema_named,
    };
    save_checkpoint(&ckpt, path).map_err(|e| {
        TrainError::Io(std::io::Error::other(e.to_string()))
    })?;
    Ok(())
}

//! Reverse-time integration of the coupled score system: Euler-Maruyama and
//! ancestral-style reverse predictors, a Langevin corrector, their
//! predictor-corrector composition, and the symmetric-splitting S4 scheme
//! that reuses one score evaluation per step for both the correction and the
//! Euler action between two analytic half-step kernel transitions.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::SolverError;
use crate::graph::{Graph, GraphDataset, QuantizeMode};
use crate::models::{ScoreModelA, ScoreModelX};
use crate::rng::{NoiseSource, SeedStream};
use crate::sde::{sample_prior, NoisePattern, SdeSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Em,
    Reverse,
    PcEm,
    PcReverse,
    S4,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Em => "em",
            SolverKind::Reverse => "reverse",
            SolverKind::PcEm => "pc-em",
            SolverKind::PcReverse => "pc-reverse",
            SolverKind::S4 => "s4",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyMode {
    Joint,
    Sequential,
    Independent,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub solver: SolverKind,
    pub steps: usize,
    pub snr: f64,
    pub scale_eps: f64,
    pub mode: DependencyMode,
    pub n_corrector_steps: usize,
    pub t_eps: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::PcEm,
            steps: 1000,
            snr: 0.05,
            scale_eps: 0.7,
            mode: DependencyMode::Joint,
            n_corrector_steps: 1,
            t_eps: 1e-3,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        assert!(self.steps >= 1, "steps must be >= 1");
        assert!(self.snr >= 0.0, "snr must be nonnegative");
        assert!((0.0..=1.0).contains(&self.scale_eps), "scale_eps must be in [0,1]");
        Ok(())
    }
}

/// Provider of partial scores, either trained models or analytic oracles.
/// Every call that computes scores for the pair (or one component) counts as
/// one evaluation toward the instrumentation.
pub trait ScoreSource: Sync {
    fn joint(
        &self,
        x: &Tensor,
        a: &Tensor,
        mask: &[bool],
        t: f64,
    ) -> Result<(Tensor, Tensor), SolverError>;

    fn marginal_x(&self, x: &Tensor, mask: &[bool], t: f64) -> Result<Tensor, SolverError>;

    fn marginal_a(&self, a: &Tensor, mask: &[bool], t: f64) -> Result<Tensor, SolverError>;

    /// Sequential-mode adjacency score: the joint score evaluated with the
    /// finished x substituted for the diffused one.
    fn seq_a(
        &self,
        x0: &Tensor,
        a: &Tensor,
        mask: &[bool],
        t: f64,
    ) -> Result<Tensor, SolverError> {
        self.joint(x0, a, mask, t).map(|(_, sa)| sa)
    }

    fn eval_count(&self) -> usize;
}

/// How the marginal x-score is approximated when only joint models exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalApprox {
    /// Evaluate the joint model at (x, A = 0); the GCN normalization reduces
    /// to self-loops.
    ZeroAdjacency,
}

/// Score source backed by the two trained models.
pub struct ModelScoreSource<'m> {
    pub model_x: &'m ScoreModelX,
    pub model_a: &'m ScoreModelA,
    pub spec_x: SdeSpec,
    pub spec_a: SdeSpec,
    pub marginal_approx: MarginalApprox,
    count: AtomicUsize,
}

impl<'m> ModelScoreSource<'m> {
    pub fn new(
        model_x: &'m ScoreModelX,
        model_a: &'m ScoreModelA,
        spec_x: SdeSpec,
        spec_a: SdeSpec,
    ) -> Self {
        Self {
            model_x,
            model_a,
            spec_x,
            spec_a,
            marginal_approx: MarginalApprox::ZeroAdjacency,
            count: AtomicUsize::new(0),
        }
    }
}

impl ScoreSource for ModelScoreSource<'_> {
    fn joint(
        &self,
        x: &Tensor,
        a: &Tensor,
        mask: &[bool],
        t: f64,
    ) -> Result<(Tensor, Tensor), SolverError> {
        self.count.fetch_add(1, Ordering::Relaxed);
        let tape = Tape::inference();
        let sx = self.model_x.forward(&tape, x, a, mask, t, &self.spec_x)?;
        let sa = self.model_a.forward(&tape, x, a, mask, t, &self.spec_a)?;
        Ok((sx, sa))
    }

    fn marginal_x(&self, x: &Tensor, mask: &[bool], t: f64) -> Result<Tensor, SolverError> {
        self.count.fetch_add(1, Ordering::Relaxed);
        let tape = Tape::inference();
        let MarginalApprox::ZeroAdjacency = self.marginal_approx;
        let zero_a = Tensor::zeros(&[mask.len(), mask.len()]);
        Ok(self.model_x.forward(&tape, x, &zero_a, mask, t, &self.spec_x)?)
    }

    fn marginal_a(&self, a: &Tensor, mask: &[bool], t: f64) -> Result<Tensor, SolverError> {
        self.count.fetch_add(1, Ordering::Relaxed);
        let tape = Tape::inference();
        let f = self.model_x.config.feature_dim;
        let zero_x = Tensor::zeros(&[mask.len(), f]);
        Ok(self.model_a.forward(&tape, &zero_x, a, mask, t, &self.spec_a)?)
    }

    fn eval_count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

/// Score source from closures, for analytic oracles.
#[allow(clippy::type_complexity)]
pub struct AnalyticScoreSource {
    pub joint_fn: Box<dyn Fn(&Tensor, &Tensor, f64) -> (Tensor, Tensor) + Sync>,
    pub marginal_x_fn: Box<dyn Fn(&Tensor, f64) -> Tensor + Sync>,
    pub marginal_a_fn: Box<dyn Fn(&Tensor, f64) -> Tensor + Sync>,
    count: AtomicUsize,
}

impl AnalyticScoreSource {
    #[allow(clippy::type_complexity)]
    pub fn new(
        joint_fn: Box<dyn Fn(&Tensor, &Tensor, f64) -> (Tensor, Tensor) + Sync>,
        marginal_x_fn: Box<dyn Fn(&Tensor, f64) -> Tensor + Sync>,
        marginal_a_fn: Box<dyn Fn(&Tensor, f64) -> Tensor + Sync>,
    ) -> Self {
        Self { joint_fn, marginal_x_fn, marginal_a_fn, count: AtomicUsize::new(0) }
    }
}

impl ScoreSource for AnalyticScoreSource {
    fn joint(
        &self,
        x: &Tensor,
        a: &Tensor,
        _mask: &[bool],
        t: f64,
    ) -> Result<(Tensor, Tensor), SolverError> {
        self.count.fetch_add(1, Ordering::Relaxed);
        Ok((self.joint_fn)(x, a, t))
    }

    fn marginal_x(&self, x: &Tensor, _mask: &[bool], t: f64) -> Result<Tensor, SolverError> {
        self.count.fetch_add(1, Ordering::Relaxed);
        Ok((self.marginal_x_fn)(x, t))
    }

    fn marginal_a(&self, a: &Tensor, _mask: &[bool], t: f64) -> Result<Tensor, SolverError> {
        self.count.fetch_add(1, Ordering::Relaxed);
        Ok((self.marginal_a_fn)(a, t))
    }

    fn eval_count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

// ---- elementwise helpers (plain tensors, no tape) ----

fn axpy(y: &Tensor, alpha: f64, x: &Tensor) -> Tensor {
    debug_assert_eq!(y.shape(), x.shape());
    Tensor::from_parts(
        y.shape().to_vec(),
        y.data().iter().zip(x.data()).map(|(a, b)| a + alpha * b).collect(),
        None,
    )
}

fn scale(x: &Tensor, c: f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect(), None)
}

/// One Euler-Maruyama reverse step for one component:
/// `x' = x - [c(t) x - g^2 s] dt + g sqrt(dt) z`.
pub fn predictor_em(
    x: &Tensor,
    t: f64,
    dt: f64,
    score: &Tensor,
    spec: &SdeSpec,
    pattern: &NoisePattern,
    noise: &mut dyn NoiseSource,
) -> Result<Tensor, SolverError> {
    let (c, g) = spec.drift_diffusion(t)?;
    let z = pattern.sample(noise);
    let mut out = axpy(x, -c * dt, x); // x - c x dt
    out = axpy(&out, g * g * dt, score);
    out = axpy(&out, g * dt.sqrt(), &z);
    Ok(out)
}

/// Ancestral-style reverse step: the deterministic part inverts the one-step
/// forward transition mean, then applies the score and noise terms.
pub fn predictor_reverse(
    x: &Tensor,
    t: f64,
    dt: f64,
    score: &Tensor,
    spec: &SdeSpec,
    pattern: &NoisePattern,
    noise: &mut dyn NoiseSource,
) -> Result<Tensor, SolverError> {
    let (_, g) = spec.drift_diffusion(t)?;
    let trans = spec.transition_params(t, t - dt)?;
    let z = pattern.sample(noise);
    let mut out = scale(x, trans.mean_coef);
    out = axpy(&out, g * g * dt, score);
    out = axpy(&out, g * dt.sqrt(), &z);
    Ok(out)
}

/// One Langevin correction pass:
/// `alpha = 2 (snr ||z|| / ||s||)^2`, `x' = x + (alpha/2) s + eps_s sqrt(alpha) z`.
/// With a vanishing score norm the correction is skipped.
pub fn corrector_langevin(
    x: &Tensor,
    score: &Tensor,
    snr: f64,
    scale_eps: f64,
    pattern: &NoisePattern,
    noise: &mut dyn NoiseSource,
) -> Tensor {
    if snr == 0.0 {
        return x.clone();
    }
    let z = pattern.sample(noise);
    let s_norm = score.norm();
    if s_norm == 0.0 {
        eprintln!("warning: zero score norm, skipping langevin correction");
        return x.clone();
    }
    let ratio = snr * z.norm() / s_norm;
    let alpha = 2.0 * ratio * ratio;
    let mut out = axpy(x, 0.5 * alpha, score);
    out = axpy(&out, scale_eps * alpha.sqrt(), &z);
    out
}

/// The S4 prediction for one component, given the precomputed score at the
/// step's starting state: half-step kernel transition, Euler score action,
/// second half-step kernel transition.
pub fn s4_predict(
    x: &Tensor,
    t: f64,
    dt: f64,
    score: &Tensor,
    spec: &SdeSpec,
    pattern: &NoisePattern,
    noise: &mut dyn NoiseSource,
) -> Result<Tensor, SolverError> {
    let (_, g) = spec.drift_diffusion(t)?;
    let half = 0.5 * dt;
    let p1 = spec.transition_params(t, t - half)?;
    let z1 = pattern.sample(noise);
    let mut out = axpy(&scale(x, p1.mean_coef), p1.std(), &z1);
    out = axpy(&out, g * g * dt, score);
    let p2 = spec.transition_params(t - half, t - dt)?;
    let z2 = pattern.sample(noise);
    out = axpy(&scale(&out, p2.mean_coef), p2.std(), &z2);
    Ok(out)
}

struct ComponentCtx<'a> {
    spec: &'a SdeSpec,
    pattern: &'a NoisePattern,
}

/// Advances both components one step from time `t` using `cfg.solver`.
#[allow(clippy::too_many_arguments)]
fn joint_step(
    source: &dyn ScoreSource,
    x: &mut Tensor,
    a: &mut Tensor,
    mask: &[bool],
    t: f64,
    dt: f64,
    cfg: &SamplerConfig,
    cx: &ComponentCtx,
    ca: &ComponentCtx,
    noise: &mut dyn NoiseSource,
) -> Result<(), SolverError> {
    match cfg.solver {
        SolverKind::Em | SolverKind::Reverse => {
            let (sx, sa) = source.joint(x, a, mask, t)?;
            let pred = if cfg.solver == SolverKind::Em { predictor_em } else { predictor_reverse };
            *x = pred(x, t, dt, &sx, cx.spec, cx.pattern, noise)?;
            *a = pred(a, t, dt, &sa, ca.spec, ca.pattern, noise)?;
        }
        SolverKind::PcEm | SolverKind::PcReverse => {
            if cfg.snr > 0.0 {
                for _ in 0..cfg.n_corrector_steps.max(1) {
                    let (sx, sa) = source.joint(x, a, mask, t)?;
                    *x = corrector_langevin(x, &sx, cfg.snr, cfg.scale_eps, cx.pattern, noise);
                    *a = corrector_langevin(a, &sa, cfg.snr, cfg.scale_eps, ca.pattern, noise);
                }
            }
            let (sx, sa) = source.joint(x, a, mask, t)?;
            let pred =
                if cfg.solver == SolverKind::PcEm { predictor_em } else { predictor_reverse };
            *x = pred(x, t, dt, &sx, cx.spec, cx.pattern, noise)?;
            *a = pred(a, t, dt, &sa, ca.spec, ca.pattern, noise)?;
        }
        SolverKind::S4 => {
            let (sx, sa) = source.joint(x, a, mask, t)?;
            if cfg.snr > 0.0 {
                *x = corrector_langevin(x, &sx, cfg.snr, cfg.scale_eps, cx.pattern, noise);
                *a = corrector_langevin(a, &sa, cfg.snr, cfg.scale_eps, ca.pattern, noise);
            }
            *x = s4_predict(x, t, dt, &sx, cx.spec, cx.pattern, noise)?;
            *a = s4_predict(a, t, dt, &sa, ca.spec, ca.pattern, noise)?;
        }
    }
    Ok(())
}

/// Advances a single component one step with its own score function.
#[allow(clippy::too_many_arguments)]
fn single_step(
    score_fn: &mut dyn FnMut(&Tensor, f64) -> Result<Tensor, SolverError>,
    x: &mut Tensor,
    t: f64,
    dt: f64,
    cfg: &SamplerConfig,
    ctx: &ComponentCtx,
    noise: &mut dyn NoiseSource,
) -> Result<(), SolverError> {
    match cfg.solver {
        SolverKind::Em | SolverKind::Reverse => {
            let s = score_fn(x, t)?;
            let pred = if cfg.solver == SolverKind::Em { predictor_em } else { predictor_reverse };
            *x = pred(x, t, dt, &s, ctx.spec, ctx.pattern, noise)?;
        }
        SolverKind::PcEm | SolverKind::PcReverse => {
            if cfg.snr > 0.0 {
                for _ in 0..cfg.n_corrector_steps.max(1) {
                    let s = score_fn(x, t)?;
                    *x = corrector_langevin(x, &s, cfg.snr, cfg.scale_eps, ctx.pattern, noise);
                }
            }
            let s = score_fn(x, t)?;
            let pred =
                if cfg.solver == SolverKind::PcEm { predictor_em } else { predictor_reverse };
            *x = pred(x, t, dt, &s, ctx.spec, ctx.pattern, noise)?;
        }
        SolverKind::S4 => {
            let s = score_fn(x, t)?;
            if cfg.snr > 0.0 {
                *x = corrector_langevin(x, &s, cfg.snr, cfg.scale_eps, ctx.pattern, noise);
            }
            *x = s4_predict(x, t, dt, &s, ctx.spec, ctx.pattern, noise)?;
        }
    }
    Ok(())
}

fn time_grid(spec: &SdeSpec, cfg: &SamplerConfig) -> Vec<(f64, f64)> {
    let t_max = spec.t_terminal;
    let m = cfg.steps;
    let dt = (t_max - cfg.t_eps) / m as f64;
    (0..m)
        .map(|i| {
            let t = t_max - i as f64 * dt;
            (t, dt)
        })
        .collect()
}

/// Integrates one single-component chain over the full reverse schedule.
pub fn integrate_component(
    mut score_fn: impl FnMut(&Tensor, f64) -> Result<Tensor, SolverError>,
    init: Tensor,
    spec: &SdeSpec,
    pattern: &NoisePattern,
    cfg: &SamplerConfig,
    noise: &mut dyn NoiseSource,
) -> Result<Tensor, SolverError> {
    cfg.validate()?;
    let ctx = ComponentCtx { spec, pattern };
    let mut x = init;
    for (t, dt) in time_grid(spec, cfg) {
        if t - dt < cfg.t_eps - 1e-9 {
            return Err(SolverError::TimeUnderflow { t, dt, t_eps: cfg.t_eps });
        }
        single_step(&mut score_fn, &mut x, t, dt, cfg, &ctx, noise)?;
    }
    Ok(x)
}

/// Integrates the coupled system from the given initial state, honoring the
/// dependency mode. Sequential mode integrates x first (marginal score), then
/// a fresh-prior a-chain driven by the joint score at the finished x.
#[allow(clippy::too_many_arguments)]
pub fn solve_reverse_state(
    source: &dyn ScoreSource,
    cfg: &SamplerConfig,
    spec_x: &SdeSpec,
    spec_a: &SdeSpec,
    pattern_x: &NoisePattern,
    pattern_a: &NoisePattern,
    init: (Tensor, Tensor),
    mask: &[bool],
    noise: &mut dyn NoiseSource,
) -> Result<(Tensor, Tensor), SolverError> {
    cfg.validate()?;
    let (mut x, mut a) = init;
    match cfg.mode {
        DependencyMode::Joint => {
            let cx = ComponentCtx { spec: spec_x, pattern: pattern_x };
            let ca = ComponentCtx { spec: spec_a, pattern: pattern_a };
            for (t, dt) in time_grid(spec_x, cfg) {
                if t - dt < cfg.t_eps - 1e-9 {
                    return Err(SolverError::TimeUnderflow { t, dt, t_eps: cfg.t_eps });
                }
                joint_step(source, &mut x, &mut a, mask, t, dt, cfg, &cx, &ca, noise)?;
            }
        }
        DependencyMode::Sequential => {
            let x0 = integrate_component(
                |v, t| source.marginal_x(v, mask, t),
                x,
                spec_x,
                pattern_x,
                cfg,
                noise,
            )?;
            a = integrate_component(
                |v, t| source.seq_a(&x0, v, mask, t),
                a,
                spec_a,
                pattern_a,
                cfg,
                noise,
            )?;
            x = x0;
        }
        DependencyMode::Independent => {
            x = integrate_component(
                |v, t| source.marginal_x(v, mask, t),
                x,
                spec_x,
                pattern_x,
                cfg,
                noise,
            )?;
            a = integrate_component(
                |v, t| source.marginal_a(v, mask, t),
                a,
                spec_a,
                pattern_a,
                cfg,
                noise,
            )?;
        }
    }
    Ok((x, a))
}

/// Samples priors for an n-node graph chain and integrates the reverse
/// system, returning the raw (pre-quantization) graph state.
#[allow(clippy::too_many_arguments)]
pub fn solve_reverse(
    source: &dyn ScoreSource,
    cfg: &SamplerConfig,
    spec_x: &SdeSpec,
    spec_a: &SdeSpec,
    n: usize,
    n_max: usize,
    f: usize,
    noise: &mut dyn NoiseSource,
) -> Result<Graph, SolverError> {
    let mut mask = vec![false; n_max];
    for m in mask.iter_mut().take(n) {
        *m = true;
    }
    let pattern_x = NoisePattern::MaskedRows { rows: n_max, cols: f, mask: mask.clone() };
    let pattern_a = NoisePattern::SymmetricAdj { n: n_max, mask: mask.clone() };
    let x_t = sample_prior(spec_x, &pattern_x, noise);
    let a_t = sample_prior(spec_a, &pattern_a, noise);
    let (x, a) = solve_reverse_state(
        source, cfg, spec_x, spec_a, &pattern_x, &pattern_a, (x_t, a_t), &mask, noise,
    )?;
    Ok(Graph { x, a, mask, n })
}

/// Per-run metadata emitted next to generated graphs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub solver: String,
    pub steps: usize,
    pub snr: f64,
    pub scale_eps: f64,
    pub seed: u64,
    pub wall_clock_secs: f64,
    pub score_evaluations: usize,
    pub count: usize,
}

/// Degree one-hot with saturation into the last bin, for generated graphs
/// whose degrees may exceed the training feature width.
fn degree_onehot_saturating(a: &Tensor, mask: &[bool], f: usize) -> Tensor {
    let n_max = mask.len();
    let mut x = vec![0.0; n_max * f];
    for i in 0..n_max {
        if !mask[i] {
            continue;
        }
        let deg = (0..n_max).filter(|&j| a.at(i, j) != 0.0).count();
        x[i * f + deg.min(f - 1)] = 1.0;
    }
    Tensor::from_parts(vec![n_max, f], x, None)
}

/// Generates `count` quantized graphs: node counts from the dataset
/// histogram, priors, reverse integration, binary quantization, and
/// degree-one-hot feature reconstruction. Chains run in parallel with
/// independent seed-derived noise streams.
pub fn generate(
    source: &dyn ScoreSource,
    cfg: &SamplerConfig,
    spec_x: &SdeSpec,
    spec_a: &SdeSpec,
    dataset: &GraphDataset,
    count: usize,
    seed: u64,
) -> Result<(Vec<Graph>, RunMetadata), SolverError> {
    use rayon::prelude::*;
    let started = Instant::now();
    let stream = SeedStream::new(seed);
    let mut ns: Vec<usize> = Vec::with_capacity(count);
    {
        let mut hist_noise = stream.noise("node-counts");
        for _ in 0..count {
            ns.push(dataset.sample_node_count(&mut hist_noise));
        }
    }
    let n_max = dataset.n_max;
    let f = dataset.f;
    let graphs: Result<Vec<Graph>, SolverError> = ns
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut noise =
                crate::rng::GaussianNoise::from_rng(stream.chain_rng("generate", i as u64));
            let raw = solve_reverse(source, cfg, spec_x, spec_a, n, n_max, f, &mut noise)?;
            let a = crate::graph::quantize(&raw.a, QuantizeMode::Binary, &raw.mask);
            let x = degree_onehot_saturating(&a, &raw.mask, f);
            let g = Graph { x, a, mask: raw.mask, n };
            debug_assert!(g.validate().is_ok());
            Ok(g)
        })
        .collect();
    let graphs = graphs?;
    let meta = RunMetadata {
        solver: cfg.solver.name().to_string(),
        steps: cfg.steps,
        snr: cfg.snr,
        scale_eps: cfg.scale_eps,
        seed,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        score_evaluations: source.eval_count(),
        count,
    };
    Ok((graphs, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{GaussianNoise, ZeroNoise};

    fn vp() -> SdeSpec {
        SdeSpec::vp(0.1, 1.0, 1000).unwrap()
    }

    fn ve() -> SdeSpec {
        SdeSpec::ve(0.1, 1.0, 1000).unwrap()
    }

    fn zero_source() -> AnalyticScoreSource {
        AnalyticScoreSource::new(
            Box::new(|x, a, _| (Tensor::zeros(x.shape()), Tensor::zeros(a.shape()))),
            Box::new(|x, _| Tensor::zeros(x.shape())),
            Box::new(|a, _| Tensor::zeros(a.shape())),
        )
    }

    #[test]
    fn em_pure_brownian_increment_variance() {
        // zero score, zero drift (VE): x' - x has variance g^2 dt
        let spec = ve();
        let n = 100_000;
        let x = Tensor::zeros(&[n]);
        let s = Tensor::zeros(&[n]);
        let t = 0.5;
        let dt = 0.01;
        let mut noise = GaussianNoise::from_seed(70);
        let out = predictor_em(&x, t, dt, &s, &spec, &NoisePattern::dense(&[n]), &mut noise)
            .unwrap();
        let (_, g) = spec.drift_diffusion(t).unwrap();
        let var = out.data().iter().map(|v| v * v).sum::<f64>() / n as f64;
        let expect = g * g * dt;
        assert!((var - expect).abs() / expect < 0.02, "{var} vs {expect}");
    }

    #[test]
    fn em_zero_noise_matches_euler() {
        let spec = vp();
        let x = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let s = Tensor::from_vec(&[3], vec![0.2, 0.0, -0.1]).unwrap();
        let (t, dt) = (0.7, 0.01);
        let out = predictor_em(&x, t, dt, &s, &spec, &NoisePattern::dense(&[3]), &mut ZeroNoise)
            .unwrap();
        let (c, g) = spec.drift_diffusion(t).unwrap();
        for i in 0..3 {
            let expect = x.data()[i] - c * x.data()[i] * dt + g * g * s.data()[i] * dt;
            assert!((out.data()[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn reverse_equals_em_for_ve() {
        let spec = ve();
        let x = Tensor::from_vec(&[4], vec![0.3, -0.4, 1.2, 0.0]).unwrap();
        let s = Tensor::from_vec(&[4], vec![0.1, 0.2, -0.3, 0.05]).unwrap();
        let (t, dt) = (0.6, 0.001);
        let run = |pred: fn(&Tensor, f64, f64, &Tensor, &SdeSpec, &NoisePattern, &mut dyn NoiseSource) -> Result<Tensor, SolverError>| {
            let mut noise = GaussianNoise::from_seed(71);
            pred(&x, t, dt, &s, &spec, &NoisePattern::dense(&[4]), &mut noise).unwrap()
        };
        let a = run(predictor_em);
        let b = run(predictor_reverse);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn reverse_zero_score_zero_noise_inverts_transition_mean() {
        let spec = vp();
        let x = Tensor::from_vec(&[2], vec![1.0, -0.5]).unwrap();
        let s = Tensor::zeros(&[2]);
        let (t, dt) = (0.8, 0.01);
        let out =
            predictor_reverse(&x, t, dt, &s, &spec, &NoisePattern::dense(&[2]), &mut ZeroNoise)
                .unwrap();
        let mu = spec.transition_params(t, t - dt).unwrap().mean_coef;
        for i in 0..2 {
            assert!((out.data()[i] - x.data()[i] * mu).abs() < 1e-14);
        }
    }

    #[test]
    fn corrector_snr_zero_is_identity() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = Tensor::from_vec(&[3], vec![0.5, -0.5, 0.1]).unwrap();
        let mut noise = GaussianNoise::from_seed(72);
        let out = corrector_langevin(&x, &s, 0.0, 0.7, &NoisePattern::dense(&[3]), &mut noise);
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn corrector_alpha_formula() {
        // ||z|| == ||s||, snr = 0.2 -> alpha = 0.08
        // use a noise source that emits exactly the score values
        struct FixedNoise(Vec<f64>);
        impl NoiseSource for FixedNoise {
            fn fill_standard_normal(&mut self, out: &mut [f64]) {
                out.copy_from_slice(&self.0);
            }
            fn uniform(&mut self) -> f64 {
                0.0
            }
        }
        let x = Tensor::zeros(&[2]);
        let s = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let mut noise = FixedNoise(vec![3.0, 4.0]);
        let out = corrector_langevin(&x, &s, 0.2, 1.0, &NoisePattern::dense(&[2]), &mut noise);
        // alpha = 0.08: x' = 0 + 0.04*s + sqrt(0.08)*z
        let alpha: f64 = 0.08;
        for i in 0..2 {
            let expect = 0.5 * alpha * s.data()[i] + alpha.sqrt() * s.data()[i];
            assert!((out.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn langevin_contracts_to_gaussian_mode() {
        // analytic score of N(2, 0.25): repeated correction moves samples
        // toward the mode
        let n = 2000;
        let mut noise = GaussianNoise::from_seed(73);
        let mut x = Tensor::from_parts(
            vec![n],
            noise.normal_vec(n).iter().map(|z| 5.0 + z).collect(),
            None,
        );
        let pattern = NoisePattern::dense(&[n]);
        let dist = |x: &Tensor| {
            x.data().iter().map(|v| (v - 2.0).abs()).sum::<f64>() / n as f64
        };
        let d0 = dist(&x);
        for _ in 0..50 {
            let s = Tensor::from_parts(
                vec![n],
                x.data().iter().map(|v| -(v - 2.0) / 0.25).collect(),
                None,
            );
            x = corrector_langevin(&x, &s, 0.16, 1.0, &pattern, &mut noise);
        }
        let d1 = dist(&x);
        // the snr-adaptive step is tiny far from the mode, so the contraction
        // is slow but strictly monotone in expectation
        assert!(d1 < d0 * 0.99, "distance to mode should shrink: {d0} -> {d1}");
    }

    #[test]
    fn s4_uses_one_eval_per_step_pc_uses_two() {
        let spec = vp();
        for (solver, factor) in [
            (SolverKind::S4, 1),
            (SolverKind::PcEm, 2),
            (SolverKind::Em, 1),
            (SolverKind::Reverse, 1),
        ] {
            let source = zero_source();
            let cfg = SamplerConfig {
                solver,
                steps: 17,
                snr: 0.1,
                scale_eps: 1.0,
                ..SamplerConfig::default()
            };
            let mut noise = GaussianNoise::from_seed(74);
            let _ = solve_reverse(&source, &cfg, &spec, &spec, 3, 3, 2, &mut noise).unwrap();
            assert_eq!(source.eval_count(), 17 * factor, "{solver:?}");
        }
    }

    #[test]
    fn s4_short_step_stays_close() {
        // dt -> 0: one s4 step barely changes the state in distribution
        let spec = vp();
        let x = Tensor::from_vec(&[1], vec![0.4]).unwrap();
        let s = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let out =
            s4_predict(&x, 0.5, 1e-8, &s, &spec, &NoisePattern::dense(&[1]), &mut ZeroNoise)
                .unwrap();
        assert!((out.data()[0] - x.data()[0]).abs() < 1e-6);
    }

    #[test]
    fn pc_em_with_zero_snr_is_bit_exact_em() {
        let spec = vp();
        let run = |solver: SolverKind| {
            let source = zero_source();
            let cfg = SamplerConfig {
                solver,
                steps: 25,
                snr: 0.0,
                mode: DependencyMode::Joint,
                ..SamplerConfig::default()
            };
            let mut noise = GaussianNoise::from_seed(75);
            let g = solve_reverse(&source, &cfg, &spec, &spec, 4, 4, 3, &mut noise).unwrap();
            (g.x.data().to_vec(), g.a.data().to_vec())
        };
        assert_eq!(run(SolverKind::Em), run(SolverKind::PcEm));
    }

    #[test]
    fn solvers_preserve_adjacency_symmetry() {
        let spec = vp();
        for solver in [
            SolverKind::Em,
            SolverKind::Reverse,
            SolverKind::PcEm,
            SolverKind::PcReverse,
            SolverKind::S4,
        ] {
            let source = zero_source();
            let cfg = SamplerConfig {
                solver,
                steps: 20,
                snr: 0.1,
                scale_eps: 0.9,
                ..SamplerConfig::default()
            };
            let mut noise = GaussianNoise::from_seed(76);
            let g = solve_reverse(&source, &cfg, &spec, &spec, 5, 6, 3, &mut noise).unwrap();
            for i in 0..6 {
                assert_eq!(g.a.at(i, i), 0.0);
                for j in 0..6 {
                    assert_eq!(g.a.at(i, j), g.a.at(j, i), "{solver:?}");
                    if i >= 5 || j >= 5 {
                        assert_eq!(g.a.at(i, j), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn single_predictor_step_config() {
        let spec = vp();
        let source = zero_source();
        let cfg = SamplerConfig {
            solver: SolverKind::Em,
            steps: 1,
            snr: 0.0,
            ..SamplerConfig::default()
        };
        let mut noise = GaussianNoise::from_seed(77);
        let _ = solve_reverse(&source, &cfg, &spec, &spec, 3, 3, 2, &mut noise).unwrap();
        assert_eq!(source.eval_count(), 1);
    }

    #[test]
    fn solver_determinism_under_fixed_seed() {
        let spec = vp();
        for solver in [SolverKind::Em, SolverKind::PcEm, SolverKind::S4] {
            let run = || {
                let source = zero_source();
                let cfg = SamplerConfig { solver, steps: 12, ..SamplerConfig::default() };
                let mut noise = GaussianNoise::from_seed(78);
                let g = solve_reverse(&source, &cfg, &spec, &spec, 4, 4, 2, &mut noise).unwrap();
                g.a.data().to_vec()
            };
            assert_eq!(run(), run(), "{solver:?}");
        }
    }

    #[test]
    fn generate_respects_invariants_and_counts() {
        use crate::graph::{generate_community_small, CommunityParams};
        let mut noise = GaussianNoise::from_seed(79);
        let ds = generate_community_small(10, &CommunityParams::default(), &mut noise).unwrap();
        let source = zero_source();
        let cfg = SamplerConfig { steps: 5, ..SamplerConfig::default() };
        let spec = vp();
        let (graphs, meta) = generate(&source, &cfg, &spec, &spec, &ds, 7, 123).unwrap();
        assert_eq!(graphs.len(), 7);
        assert_eq!(meta.count, 7);
        for g in &graphs {
            g.validate().unwrap();
            assert!(ds.node_count_histogram.iter().any(|(n, _)| *n == g.n));
        }
        let (empty, _) = generate(&source, &cfg, &spec, &spec, &ds, 0, 123).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn generate_node_counts_match_histogram() {
        use crate::graph::{generate_community_small, CommunityParams};
        let mut noise = GaussianNoise::from_seed(80);
        let ds = generate_community_small(30, &CommunityParams::default(), &mut noise).unwrap();
        let source = zero_source();
        let cfg = SamplerConfig { steps: 1, snr: 0.0, ..SamplerConfig::default() };
        let spec = vp();
        let (graphs, _) = generate(&source, &cfg, &spec, &spec, &ds, 4000, 7).unwrap();
        let total: usize = ds.node_count_histogram.iter().map(|(_, c)| c).sum();
        for (n, c) in &ds.node_count_histogram {
            let want = *c as f64 / total as f64;
            let got =
                graphs.iter().filter(|g| g.n == *n).count() as f64 / graphs.len() as f64;
            assert!((got - want).abs() < 0.03, "n={n}: {got} vs {want}");
        }
    }
}

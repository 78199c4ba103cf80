use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use gdiff_core::graph::CommunityParams;
use gdiff_core::models::{ScoreModelAConfig, ScoreModelXConfig};
use gdiff_core::sde::{SdeKind, SdeSpec};
use gdiff_core::solvers::{DependencyMode, SamplerConfig, SolverKind};
use gdiff_core::training::{LambdaMode, LossConfig, TrainConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetKind {
    CommunitySmall,
    Grid,
    File,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default = "default_count")]
    pub count: usize,
    /// Edge-list path for `kind = file`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub community: Option<CommunityParams>,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
}

fn default_count() -> usize {
    100
}

fn default_split_seed() -> u64 {
    42
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeFamily {
    Vp,
    Ve,
    SubVp,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    pub kind: SdeFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_max: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    1000
}

impl SdeConfig {
    pub fn vp(beta_min: f64, beta_max: f64) -> Self {
        Self {
            kind: SdeFamily::Vp,
            beta_min: Some(beta_min),
            beta_max: Some(beta_max),
            sigma_min: None,
            sigma_max: None,
            steps: 1000,
        }
    }

    pub fn to_spec(&self) -> Result<SdeSpec> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| anyhow::anyhow!("missing key '{name}' for this sde kind"))
        };
        let kind = match self.kind {
            SdeFamily::Vp => SdeKind::Vp {
                beta_min: need(self.beta_min, "beta_min")?,
                beta_max: need(self.beta_max, "beta_max")?,
            },
            SdeFamily::Ve => SdeKind::Ve {
                sigma_min: need(self.sigma_min, "sigma_min")?,
                sigma_max: need(self.sigma_max, "sigma_max")?,
            },
            SdeFamily::SubVp => SdeKind::SubVp {
                beta_min: need(self.beta_min, "beta_min")?,
                beta_max: need(self.beta_max, "beta_max")?,
            },
        };
        SdeSpec::new(kind, self.steps).map_err(|e| anyhow::anyhow!("{e}"))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelXSection {
    pub gcn_layers: usize,
    pub hidden_dim: usize,
    pub mlp_hidden: usize,
}

impl Default for ModelXSection {
    fn default() -> Self {
        Self { gcn_layers: 3, hidden_dim: 32, mlp_hidden: 32 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelASection {
    pub gmh_blocks: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub init_channels: usize,
    pub hidden_channels: usize,
    pub final_channels: usize,
    pub edge_mlp_hidden: usize,
    pub final_mlp_hidden: usize,
    pub powers: usize,
}

impl Default for ModelASection {
    fn default() -> Self {
        Self {
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
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub solver: SolverKind,
    pub steps: usize,
    pub snr: f64,
    pub scale_eps: f64,
    pub mode: DependencyMode,
    #[serde(default = "default_corr_steps")]
    pub n_corrector_steps: usize,
    #[serde(default = "default_t_eps")]
    pub t_eps: f64,
}

fn default_corr_steps() -> usize {
    1
}

fn default_t_eps() -> f64 {
    1e-3
}

impl Default for SamplerSection {
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

impl SamplerSection {
    pub fn to_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            solver: self.solver,
            steps: self.steps,
            snr: self.snr,
            scale_eps: self.scale_eps,
            mode: self.mode,
            n_corrector_steps: self.n_corrector_steps,
            t_eps: self.t_eps,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "default_t_eps")]
    pub t_eps: f64,
    pub batch_size: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { t_eps: 1e-3, batch_size: 128 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    #[serde(default)]
    pub ema_decay: Option<f64>,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

fn default_grad_clip() -> Option<f64> {
    Some(1.0)
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            weight_decay: 1e-4,
            epochs: 5000,
            ema_decay: None,
            grad_clip: Some(1.0),
            checkpoint_every: None,
        }
    }
}

/// Full run configuration; unknown keys are rejected at parse time.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub sde_x: SdeConfig,
    pub sde_a: SdeConfig,
    #[serde(default)]
    pub model_x: ModelXSection,
    #[serde(default)]
    pub model_a: ModelASection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sampler: SamplerSection,
}

impl RunConfig {
    pub fn community_small_default() -> Self {
        Self {
            seed: 42,
            out_dir: None,
            dataset: DatasetConfig {
                kind: DatasetKind::CommunitySmall,
                count: 100,
                path: None,
                community: None,
                split_seed: 42,
            },
            sde_x: SdeConfig::vp(0.1, 1.0),
            sde_a: SdeConfig::vp(0.1, 1.0),
            model_x: ModelXSection::default(),
            model_a: ModelASection::default(),
            loss: LossSection::default(),
            train: TrainSection::default(),
            sampler: SamplerSection::default(),
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sde_x.to_spec().context("sde_x")?;
        self.sde_a.to_spec().context("sde_a")?;
        if self.train.lr <= 0.0 {
            bail!("train.lr must be positive");
        }
        if let Some(d) = self.train.ema_decay {
            if !(0.0..1.0).contains(&d) {
                bail!("train.ema_decay must be in (0, 1)");
            }
        }
        if !(0.0 < self.loss.t_eps && self.loss.t_eps < 1.0) {
            bail!("loss.t_eps must be in (0, 1)");
        }
        if self.sampler.steps < 1 {
            bail!("sampler.steps must be >= 1");
        }
        if self.sampler.snr < 0.0 {
            bail!("sampler.snr must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.sampler.scale_eps) {
            bail!("sampler.scale_eps must be in [0, 1]");
        }
        if matches!(self.dataset.kind, DatasetKind::File) && self.dataset.path.is_none() {
            bail!("dataset.kind = file requires dataset.path");
        }
        Ok(())
    }

    pub fn to_loss_config(&self) -> LossConfig {
        LossConfig {
            lambda_mode: LambdaMode::SigmaSq,
            t_eps: self.loss.t_eps,
            batch_size: self.loss.batch_size,
        }
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            epochs: self.train.epochs,
            ema_decay: self.train.ema_decay,
            grad_clip: self.train.grad_clip,
            seed: self.seed,
        }
    }

    pub fn model_x_config(&self, feature_dim: usize) -> ScoreModelXConfig {
        ScoreModelXConfig {
            feature_dim,
            gcn_layers: self.model_x.gcn_layers,
            hidden_dim: self.model_x.hidden_dim,
            mlp_hidden: self.model_x.mlp_hidden,
        }
    }

    pub fn model_a_config(&self, feature_dim: usize) -> ScoreModelAConfig {
        ScoreModelAConfig {
            feature_dim,
            gmh_blocks: self.model_a.gmh_blocks,
            hidden_dim: self.model_a.hidden_dim,
            heads: self.model_a.heads,
            head_dim: self.model_a.head_dim,
            init_channels: self.model_a.init_channels,
            hidden_channels: self.model_a.hidden_channels,
            final_channels: self.model_a.final_channels,
            edge_mlp_hidden: self.model_a.edge_mlp_hidden,
            final_mlp_hidden: self.model_a.final_mlp_hidden,
            powers: self.model_a.powers,
        }
    }

    /// Canonical JSON echo used for checkpoint compatibility checks.
    pub fn echo_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

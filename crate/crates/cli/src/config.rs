//! Declarative experiment configuration.
//!
//! One TOML file with a flat table per module. Every key has a default and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use fav_core::generators::{DriftingConfig, GeneratorKind, GeneratorSpec, MeanFlowConfig, NetShape, PretrainConfig, VaeConfig};
use fav_core::numeric::KernelSpec;
use fav_core::policy::{BanditTask, PolicyConfig};
use fav_core::stein::{FavConfig, FeatureMap, GradientMode, RefKind, TermSwitches};
use fav_core::target::{GaussianMixture, SoftClusterReward, TiltedTarget};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Ring mixture and tilt strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    pub components: usize,
    pub radius: f64,
    pub std: f64,
    pub beta: f64,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            components: 8,
            radius: 4.0 / std::f64::consts::SQRT_2,
            std: 0.5 / std::f64::consts::SQRT_2,
            beta: 1.0,
        }
    }
}

impl TargetSection {
    pub fn mixture(&self) -> GaussianMixture {
        GaussianMixture::ring(self.components, self.radius, self.std)
    }

    /// Normalized tilted target.
    pub fn build(&self) -> Result<TiltedTarget> {
        let gmm = self.mixture();
        let reward = SoftClusterReward::for_mixture(&gmm);
        Ok(TiltedTarget::new(gmm, reward, self.beta)?.normalized()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub kind: GeneratorKind,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let shape = NetShape::default();
        Self {
            kind: GeneratorKind::MeanFlow,
            hidden_width: shape.hidden_width,
            hidden_layers: shape.hidden_layers,
        }
    }
}

/// Zeroth-order reward gradient settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZerothOrder {
    pub eta: f64,
    pub samples: usize,
}

impl ZerothOrder {
    pub fn mode(opt: Option<Self>) -> GradientMode {
        match opt {
            Some(z) => GradientMode::ZerothOrder {
                eta: z.eta,
                samples: z.samples,
            },
            None => GradientMode::Analytic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FavSection {
    /// RBF kernel width `τ = 2σ²`.
    pub tau: f64,
    /// Replace `tau` with Scott's rule on the reference batch.
    pub adaptive_bandwidth: bool,
    pub n_gen: usize,
    pub n_ref: usize,
    pub steps: u64,
    pub refs: RefKind,
    pub terms: TermSwitches,
    pub feature_map: FeatureMap,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeroth_order: Option<ZerothOrder>,
    /// MeanFlow sampler steps during fine-tuning and evaluation.
    pub sample_steps: usize,
}

impl Default for FavSection {
    fn default() -> Self {
        Self {
            tau: 0.5,
            adaptive_bandwidth: false,
            n_gen: 256,
            n_ref: 256,
            steps: 5000,
            refs: RefKind::Data,
            terms: TermSwitches::default(),
            feature_map: FeatureMap::Identity,
            zeroth_order: None,
            sample_steps: 1,
        }
    }
}

impl FavSection {
    pub fn fav_config(&self, beta: f64) -> Result<FavConfig> {
        let mut cfg = FavConfig::new(beta, KernelSpec::gaussian(self.tau)?, self.n_gen, self.n_ref);
        cfg.terms = self.terms;
        cfg.feature_map = self.feature_map.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Analytic mixture score.
    Exact,
    /// KDE score from fresh data references.
    Kde,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvgdSection {
    pub particles: usize,
    pub step_size: f64,
    pub iters: usize,
    pub tau: f64,
    pub score: ScoreKind,
    /// References for the KDE score.
    pub n_ref: usize,
    /// Particles start from `N(0, init_scale²·I)`.
    pub init_scale: f64,
}

impl Default for SvgdSection {
    fn default() -> Self {
        Self {
            particles: 512,
            step_size: 0.05,
            iters: 500,
            tau: 2.0,
            score: ScoreKind::Exact,
            n_ref: 512,
            init_scale: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Samples drawn for each metric record.
    pub samples: usize,
    /// Steps between metric records; 0 records only the start and end.
    pub every: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { samples: 4096, every: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub states: usize,
    pub actions_per_state: usize,
    /// Draws used by each policy evaluation.
    pub eval_draws: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            states: 2000,
            actions_per_state: 4,
            eval_draws: 4096,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub betas: Vec<f64>,
    pub taus: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            betas: vec![0.5, 1.0, 2.0, 3.0, 5.0],
            taus: Vec::new(),
            seeds: vec![0, 1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub target: TargetSection,
    pub generator: GeneratorSection,
    pub vae: VaeConfig,
    pub drifting: DriftingConfig,
    pub meanflow: MeanFlowConfig,
    pub pretrain: PretrainConfig,
    pub fav: FavSection,
    pub svgd: SvgdSection,
    pub eval: EvalSection,
    pub bandit: BanditTask,
    pub dataset: DatasetSection,
    pub policy: PolicyConfig,
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            kind: self.generator.kind,
            shape: NetShape {
                hidden_width: self.generator.hidden_width,
                hidden_layers: self.generator.hidden_layers,
            },
            vae: self.vae,
            drifting: self.drifting,
            meanflow: self.meanflow,
        }
    }

    pub fn gradient_mode(&self) -> GradientMode {
        ZerothOrder::mode(self.fav.zeroth_order)
    }

    /// Pre-training at the 1M-step, 8192-batch scale.
    pub fn apply_paper_scale(&mut self) {
        self.pretrain = PretrainConfig::paper_scale();
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(CliError::Config(format!("{key}: {why}")));
        if self.target.components == 0 {
            return bad("target.components", "must be positive");
        }
        if !(self.target.std > 0.0) {
            return bad("target.std", "must be positive");
        }
        if !(self.target.beta >= 0.0) {
            return bad("target.beta", "must be non-negative");
        }
        if self.generator.hidden_width == 0 {
            return bad("generator.hidden_width", "must be positive");
        }
        if self.pretrain.batch_size == 0 || self.pretrain.pool_size == 0 {
            return bad("pretrain", "batch_size and pool_size must be positive");
        }
        if !(self.fav.tau > 0.0) {
            return bad("fav.tau", "must be positive");
        }
        if self.fav.n_gen < 2 || self.fav.n_ref == 0 {
            return bad("fav", "n_gen must be at least 2 and n_ref positive");
        }
        if self.fav.sample_steps == 0 {
            return bad("fav.sample_steps", "must be positive");
        }
        if let Some(z) = self.fav.zeroth_order {
            if !(z.eta > 0.0) || z.samples == 0 {
                return bad("fav.zeroth_order", "needs eta > 0 and samples ≥ 1");
            }
        }
        if !(self.svgd.tau > 0.0) || !(self.svgd.step_size > 0.0) || self.svgd.particles < 2 {
            return bad("svgd", "tau and step_size must be positive and particles ≥ 2");
        }
        if self.eval.samples < 2 {
            return bad("eval.samples", "must be at least 2");
        }
        if self.dataset.states == 0 || self.dataset.actions_per_state == 0 {
            return bad("dataset", "states and actions_per_state must be positive");
        }
        if self.dataset.eval_draws < 1000 {
            return bad("dataset.eval_draws", "must be at least 1000");
        }
        if !(self.policy.tau > 0.0) || self.policy.n_particles < 2 {
            return bad("policy", "tau must be positive and n_particles ≥ 2");
        }
        if self.sweep.seeds.is_empty() {
            return bad("sweep.seeds", "must not be empty");
        }
        Ok(())
    }
}

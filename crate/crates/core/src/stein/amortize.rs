use serde::{Deserialize, Serialize};

use super::velocity::{velocity_kde_with_grads, FavConfig, RewardOracle, VelocityReport};
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::nn::{GradBundle, OptState};
use crate::numeric::{Batch, RngStream};
use crate::target::GaussianMixture;

/// One amortization step before the optimizer update.
#[derive(Clone, Debug)]
pub struct FavStep {
    pub loss: f64,
    pub grads: GradBundle,
    /// Generated samples in sample space.
    pub samples: Batch,
    /// Frozen targets `ψ(x) + φ̂` in feature space.
    pub targets: Batch,
    pub report: VelocityReport,
}

/// Regresses `ψ(f_θ(ε))` onto `stopgrad(ψ(f_θ(ε)) + φ̂)` with `φ̂` the KDE
/// Stein velocity computed in feature space.
pub fn fav_loss_step(
    generator: &Generator,
    refs: &Batch,
    oracle: &mut RewardOracle,
    cfg: &FavConfig,
    rng: &mut RngStream,
) -> Result<FavStep> {
    let noise = generator.draw_noise(cfg.n_gen, rng);
    fav_loss_from_noise(generator, &noise, refs, oracle, cfg)
}

pub fn fav_loss_from_noise(
    generator: &Generator,
    noise: &Batch,
    refs: &Batch,
    oracle: &mut RewardOracle,
    cfg: &FavConfig,
) -> Result<FavStep> {
    cfg.validate()?;
    let (x, tape) = generator.generate_taped(noise)?;
    let fm = &cfg.feature_map;
    let y = fm.apply_batch(&x)?;
    let y_ref = fm.apply_batch(refs)?;
    let grads = if cfg.terms.reward && cfg.beta != 0.0 {
        Some(fm.pushforward_grad(&oracle.grads(&x)?)?)
    } else {
        None
    };
    let report = velocity_kde_with_grads(&y, &y_ref, grads.as_ref(), cfg)?;
    let targets = y.add_scaled(&report.velocities, 1.0)?;
    let n = y.rows() as f64;
    let mut loss = 0.0;
    let mut d_y = Batch::zeros(y.rows(), y.dim());
    for ((d, o), t) in d_y
        .as_mut_slice()
        .iter_mut()
        .zip(y.as_slice())
        .zip(targets.as_slice())
    {
        let e = o - t;
        loss += e * e;
        *d = 2.0 * e / n;
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::NumericDomain(format!("amortization loss is {loss}")));
    }
    let d_x = fm.pullback(&d_y)?;
    let grads = generator.backward_sample(&tape, &d_x)?;
    Ok(FavStep {
        loss,
        grads,
        samples: x,
        targets,
        report,
    })
}

/// Source of reference samples for the KDE score.
#[derive(Clone, Debug)]
pub enum RefSource {
    /// Fresh draws from the data distribution each step.
    Data(GaussianMixture),
    /// Fresh draws from a frozen copy of a pretrained generator each step.
    Frozen(Generator),
}

impl RefSource {
    pub fn draw(&self, n: usize, rng: &mut RngStream) -> Result<Batch> {
        match self {
            RefSource::Data(m) => Ok(m.sample(n, rng)),
            RefSource::Frozen(g) => g.sample(n, rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefKind {
    Data,
    Pretrained,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub mean_velocity: f64,
    pub far_from_support: usize,
}

/// Amortized fine-tuning: `steps` rounds of [`fav_loss_step`] plus an
/// optimizer update on the sampler parameters.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    generator: &mut Generator,
    opt: &mut OptState,
    refs: &RefSource,
    oracle: &mut RewardOracle,
    cfg: &FavConfig,
    steps: u64,
    rng: &mut RngStream,
    mut on_step: impl FnMut(&StepLog, &Generator) -> Result<()>,
) -> Result<()> {
    let clip = generator.grad_clip();
    for step in 1..=steps {
        let r = refs.draw(cfg.n_ref, rng)?;
        let out = fav_loss_step(generator, &r, oracle, cfg, rng)?;
        let grad_norm = opt.step(generator.sampler_params_mut(), &out.grads, clip)?;
        let log = StepLog {
            step,
            loss: out.loss,
            grad_norm,
            mean_velocity: out.report.mean_norm(),
            far_from_support: out.report.far_from_support,
        };
        on_step(&log, generator)?;
    }
    Ok(())
}

/// Fine-tuning optimizer inherited from the generator's pre-training recipe.
pub fn finetune_optimizer(generator: &Generator) -> OptState {
    OptState::new(generator.kind().default_optimizer(), generator.sampler_params().len())
}

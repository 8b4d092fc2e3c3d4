use super::velocity::{stein_velocity_exact, stein_velocity_kde, FavConfig, RewardOracle, VelocityReport};
use crate::error::{Error, Result};
use crate::numeric::Batch;

/// Where the reference score comes from.
pub enum ScoreSource<'a> {
    Analytic(&'a dyn Fn(&[f64]) -> Result<Vec<f64>>),
    Kde(&'a Batch),
}

/// Mean particle norm above which a run is considered divergent.
pub const DIVERGENCE_NORM: f64 = 1e3;
/// Step-size halvings attempted before giving up.
pub const MAX_RESTARTS: usize = 12;

#[derive(Clone, Debug)]
pub struct SvgdOutcome {
    pub particles: Batch,
    /// Step size of the completed run.
    pub step_size: f64,
    pub restarts: usize,
    pub far_from_support: usize,
}

pub fn velocity(
    particles: &Batch,
    source: &ScoreSource,
    oracle: &mut RewardOracle,
    cfg: &FavConfig,
) -> Result<VelocityReport> {
    match source {
        ScoreSource::Analytic(f) => stein_velocity_exact(particles, *f, oracle, cfg),
        ScoreSource::Kde(refs) => stein_velocity_kde(particles, refs, oracle, cfg),
    }
}

/// `x ← x + ε·φ(x)` for `iters` rounds.
///
/// If the mean particle norm exceeds [`DIVERGENCE_NORM`] the run restarts
/// from `init` with half the step size.
pub fn svgd_sample(
    init: &Batch,
    source: &ScoreSource,
    oracle: &mut RewardOracle,
    cfg: &FavConfig,
    step_size: f64,
    iters: usize,
) -> Result<SvgdOutcome> {
    svgd_sample_with(init, source, oracle, cfg, step_size, iters, |_, _| {})
}

/// As [`svgd_sample`], calling `on_iter(iteration, particles)` after each
/// update of the run that completes.
pub fn svgd_sample_with(
    init: &Batch,
    source: &ScoreSource,
    oracle: &mut RewardOracle,
    cfg: &FavConfig,
    step_size: f64,
    iters: usize,
    mut on_iter: impl FnMut(usize, &Batch),
) -> Result<SvgdOutcome> {
    if !(step_size > 0.0) || iters == 0 {
        return Err(Error::InvalidArgument("svgd needs a positive step size and at least one iteration".into()));
    }
    let mut eps = step_size;
    'restart: for restarts in 0..=MAX_RESTARTS {
        let mut x = init.clone();
        let mut far = 0;
        let mut history = Vec::new();
        for _ in 0..iters {
            let report = velocity(&x, source, oracle, cfg)?;
            far += report.far_from_support;
            x = x.add_scaled(&report.velocities, eps)?;
            if !x.all_finite() || x.mean_norm() > DIVERGENCE_NORM {
                eps *= 0.5;
                continue 'restart;
            }
            history.push(x.clone());
        }
        for (it, h) in history.iter().enumerate() {
            on_iter(it + 1, h);
        }
        return Ok(SvgdOutcome {
            particles: x,
            step_size: eps,
            restarts,
            far_from_support: far,
        });
    }
    Err(Error::Diverged(format!(
        "svgd diverged after {MAX_RESTARTS} step-size halvings (last step {eps})"
    )))
}

//! Stein transport toward reward-tilted targets and its amortization.

mod amortize;
mod bandwidth;
mod kde;
mod svgd;
mod velocity;

pub use amortize::{
    fav_loss_from_noise, fav_loss_step, finetune, finetune_optimizer, FavStep, RefKind, RefSource, StepLog,
};
pub use bandwidth::{data_scale, scott_bandwidth, zeroth_order_grad, Bandwidth};
pub use kde::{kde_score, kde_scores, KdeScore};
pub use svgd::{svgd_sample, svgd_sample_with, velocity, ScoreSource, SvgdOutcome, DIVERGENCE_NORM, MAX_RESTARTS};
pub use velocity::{
    stein_velocity_exact, stein_velocity_kde, write_velocity_csv, FavConfig, FeatureMap, GradientMode,
    RewardOracle, TermSwitches, VelocityReport,
};

//! Reward-tilted alignment of few-step generators by amortized Stein transport.
//!
//! A generator `f_θ` is pulled toward `q*(x) ∝ p_ref(x)·exp(β·r(x))` by
//! regressing its samples onto `stopgrad(x + φ̂(x))`, where `φ̂` is the
//! kernelized Stein velocity toward the tilted target and the reference score
//! is estimated from samples with a Gaussian KDE.
//!
//! Modules:
//! - [`numeric`]: batches, seeded streams, kernels, 2-D quadrature
//! - [`nn`]: MLPs with reverse/forward-mode derivatives and Adam(W)
//! - [`target`]: 8-Gaussians mixture, soft cluster reward, tilted target
//! - [`generators`]: VAE, drifting model and MeanFlow toy generators
//! - [`stein`]: Stein velocities, KDE scores, SVGD, amortized fine-tuning
//! - [`policy`]: conditional extraction on a synthetic continuous bandit
//! - [`eval`]: KL, MMD, energy distance, mode masses

pub mod error;
pub mod eval;
pub mod generators;
pub mod nn;
pub mod numeric;
pub mod policy;
pub mod stein;
pub mod target;

pub use error::{Error, Result};

//! Deterministic numeric substrate: point batches, seeded random streams,
//! kernels and 2-D midpoint quadrature.

mod batch;
mod kernel;
mod quadrature;
mod rng;

pub use batch::{dot, norm, sq_dist, Batch};
pub use kernel::{KernelFamily, KernelSpec};
pub use quadrature::{grid_quadrature_2d, Box2, MidpointGrid, MIXTURE_BOX, MIXTURE_RESOLUTION};
pub use rng::RngStream;

/// Numerically stable `log Σ exp(v)`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// In-place softmax of log-weights; returns the log normalizer.
pub fn softmax_in_place(values: &mut [f64]) -> f64 {
    let lse = log_sum_exp(values);
    for v in values.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}

use serde::{Deserialize, Serialize};

use super::NetShape;
use crate::error::{ensure_dim, Error, Result};
use crate::nn::{GradBundle, Mlp, MlpConfig};
use crate::numeric::{norm, softmax_in_place, Batch, KernelSpec, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftingConfig {
    pub latent_dim: usize,
    /// Laplacian kernel temperature.
    pub tau: f64,
    /// Leave each generated point out of its own negative set.
    pub exclude_self: bool,
}

impl Default for DriftingConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            tau: 0.15,
            exclude_self: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftingModel {
    pub config: DriftingConfig,
    pub net: Mlp,
}

/// Drift at one point, with a flag raised when the raw normalizers underflow.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftValue {
    pub v: Vec<f64>,
    pub underflow: bool,
}

/// Raw normalizer product below which the underflow flag is raised.
pub const DRIFT_NORMALIZER_FLOOR: f64 = 1e-30;

fn normalized_mean(x: &[f64], ys: &Batch, tau: f64, skip: Option<usize>) -> (Vec<f64>, f64) {
    let mut logits: Vec<f64> = ys
        .iter_rows()
        .enumerate()
        .map(|(j, y)| if Some(j) == skip { f64::NEG_INFINITY } else { -distance(x, y) / tau })
        .collect();
    let lse = softmax_in_place(&mut logits);
    let mut m = vec![0.0; x.len()];
    for (y, w) in ys.iter_rows().zip(&logits) {
        for (mi, yi) in m.iter_mut().zip(y) {
            *mi += w * yi;
        }
    }
    let count = ys.rows() - skip.map_or(0, |_| 1);
    (m, lse - (count as f64).ln())
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    crate::numeric::sq_dist(x, y).sqrt()
}

/// `V(x) = E[k(x,y⁺)k(x,y⁻)(y⁺−y⁻)] / (Z⁺Z⁻)` under a Laplacian kernel.
///
/// The double expectation factorizes into the difference of the two
/// kernel-weighted means; weights are normalized in the log domain.
pub fn drifting_field(x: &[f64], positives: &Batch, negatives: &Batch, kernel: &KernelSpec) -> Result<DriftValue> {
    drifting_field_excluding(x, positives, negatives, None, kernel)
}

/// As [`drifting_field`] with negative row `skip` left out of the expectation.
pub fn drifting_field_excluding(
    x: &[f64],
    positives: &Batch,
    negatives: &Batch,
    skip: Option<usize>,
    kernel: &KernelSpec,
) -> Result<DriftValue> {
    let remaining = negatives.rows() - skip.filter(|&s| s < negatives.rows()).map_or(0, |_| 1);
    if positives.is_empty() || remaining == 0 {
        return Err(Error::InvalidArgument("drifting field needs positives and negatives".into()));
    }
    ensure_dim(x.len(), positives.dim())?;
    ensure_dim(x.len(), negatives.dim())?;
    let skip = skip.filter(|&s| s < negatives.rows());
    let (mp, log_zp) = normalized_mean(x, positives, kernel.tau, None);
    let (mn, log_zn) = normalized_mean(x, negatives, kernel.tau, skip);
    let v = mp.iter().zip(&mn).map(|(a, b)| a - b).collect();
    Ok(DriftValue {
        v,
        underflow: log_zp + log_zn < DRIFT_NORMALIZER_FLOOR.ln(),
    })
}

/// Output of one drifting update.
#[derive(Clone, Debug)]
pub struct DriftStep {
    pub loss: f64,
    pub grads: GradBundle,
    /// Number of points whose normalizers fell below the floor.
    pub underflows: usize,
}

impl DriftingModel {
    pub fn new(config: DriftingConfig, shape: NetShape, rng: &mut RngStream) -> Self {
        let net = Mlp::init(
            MlpConfig::new(config.latent_dim, 2, shape.hidden_width, shape.hidden_layers),
            rng,
        );
        Self { config, net }
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::laplacian(self.config.tau)
    }

    /// Regresses `f(ε)` onto the frozen targets `f(ε) + V(f(ε))` with the
    /// generated batch itself as negatives.
    pub fn loss_grad(&self, data: &Batch, eps: &Batch) -> Result<DriftStep> {
        let kernel = self.kernel()?;
        let x = self.net.forward_batch(eps)?;
        let mut targets = x.clone();
        let mut underflows = 0;
        for i in 0..x.rows() {
            let skip = self.config.exclude_self.then_some(i);
            let dv = drifting_field_excluding(x.row(i), data, &x, skip, &kernel)?;
            underflows += dv.underflow as usize;
            for (t, v) in targets.row_mut(i).iter_mut().zip(&dv.v) {
                *t += v;
            }
        }
        let (loss, grads) = self.net.backward_mse(eps, &targets)?;
        Ok(DriftStep { loss, grads, underflows })
    }

    /// Mean drift magnitude at the current generator, for monitoring.
    pub fn mean_drift(&self, data: &Batch, eps: &Batch) -> Result<f64> {
        let kernel = self.kernel()?;
        let x = self.net.forward_batch(eps)?;
        let mut total = 0.0;
        for (i, row) in x.iter_rows().enumerate() {
            let skip = self.config.exclude_self.then_some(i);
            total += norm(&drifting_field_excluding(row, data, &x, skip, &kernel)?.v);
        }
        Ok(total / x.rows() as f64)
    }
}

use serde::{Deserialize, Serialize};

use super::batch::sq_dist;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `exp(-‖x−y‖² / τ)`, with τ = 2σ².
    GaussianRbf,
    /// `exp(-‖x−y‖ / τ)`; only the drifting model's training field uses it.
    Laplacian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub tau: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel temperature must be positive and finite, got {tau}"
            )));
        }
        Ok(Self { family, tau })
    }

    pub fn gaussian(tau: f64) -> Result<Self> {
        Self::new(KernelFamily::GaussianRbf, tau)
    }

    /// Gaussian RBF with bandwidth σ, i.e. τ = 2σ².
    pub fn gaussian_sigma(sigma: f64) -> Result<Self> {
        Self::gaussian(2.0 * sigma * sigma)
    }

    pub fn laplacian(tau: f64) -> Result<Self> {
        Self::new(KernelFamily::Laplacian, tau)
    }

    /// σ = sqrt(τ/2). Meaningful for the Gaussian family.
    pub fn sigma(&self) -> f64 {
        (self.tau / 2.0).sqrt()
    }

    /// Kernel value from a precomputed squared distance.
    #[inline]
    pub fn eval_sq(&self, d2: f64) -> f64 {
        match self.family {
            KernelFamily::GaussianRbf => (-d2 / self.tau).exp(),
            KernelFamily::Laplacian => (-d2.sqrt() / self.tau).exp(),
        }
    }

    /// `k(x, y)`. Panics on mismatched dimensions.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), y.len(), "kernel arguments differ in dimension");
        self.eval_sq(sq_dist(x, y))
    }

    /// `∇_x k(x, y) = k(x, y) · (y − x) · 2/τ` for the Gaussian family.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if self.family != KernelFamily::GaussianRbf {
            return Err(Error::Unsupported(
                "kernel gradient is only defined for the gaussian-rbf family".into(),
            ));
        }
        assert_eq!(x.len(), y.len(), "kernel arguments differ in dimension");
        let k = self.eval(x, y);
        let c = 2.0 * k / self.tau;
        Ok(x.iter().zip(y).map(|(a, b)| c * (b - a)).collect())
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Batch, KernelSpec, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    /// Mean per-dimension standard deviation.
    pub sigma_hat: f64,
    pub h: f64,
    /// `τ = 2h²`
    pub tau: f64,
}

impl Bandwidth {
    /// Scott's rule `h = n^{-1/(d+4)}·σ̂` for sample size `n` in dimension `d`.
    pub fn scott(sigma_hat: f64, n: usize, d: usize) -> Result<Self> {
        if !(sigma_hat > 0.0 && sigma_hat.is_finite()) {
            return Err(Error::DegenerateBandwidth(format!("data scale is {sigma_hat}")));
        }
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument("Scott's rule needs n ≥ 1 and d ≥ 1".into()));
        }
        let h = (n as f64).powf(-1.0 / (d as f64 + 4.0)) * sigma_hat;
        Ok(Self {
            sigma_hat,
            h,
            tau: 2.0 * h * h,
        })
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::gaussian(self.tau)
    }
}

/// Mean of the per-dimension population standard deviations.
pub fn data_scale(data: &Batch) -> f64 {
    let s = data.column_std();
    s.iter().sum::<f64>() / s.len() as f64
}

/// Scott's rule with `n` and `σ̂` both taken from `data`.
pub fn scott_bandwidth(data: &Batch) -> Result<Bandwidth> {
    if data.rows() < 2 {
        return Err(Error::InvalidArgument("Scott's rule needs at least two rows".into()));
    }
    Bandwidth::scott(data_scale(data), data.rows(), data.dim())
}

/// `(1/K) Σ_k [(r(x+ηu_k) − r(x−ηu_k))/(2η)]·u_k` with `u_k ~ N(0, I)`.
pub fn zeroth_order_grad(
    reward: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    eta: f64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if !(eta > 0.0) || samples == 0 {
        return Err(Error::InvalidArgument("zeroth-order estimate needs eta > 0 and K ≥ 1".into()));
    }
    let d = x.len();
    let mut g = vec![0.0; d];
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for _ in 0..samples {
        let u = rng.normal_vec(d);
        for j in 0..d {
            plus[j] = x[j] + eta * u[j];
            minus[j] = x[j] - eta * u[j];
        }
        let (a, b) = (reward(&plus), reward(&minus));
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NumericDomain(format!("reward evaluated to {a} / {b} near {x:?}")));
        }
        let c = (a - b) / (2.0 * eta);
        for (gj, uj) in g.iter_mut().zip(&u) {
            *gj += c * uj;
        }
    }
    for gj in &mut g {
        *gj /= samples as f64;
    }
    Ok(g)
}

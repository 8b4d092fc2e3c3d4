use serde::{Deserialize, Serialize};

use super::NetShape;
use crate::error::{ensure_dim, Error, Result};
use crate::nn::{ForwardCache, GradBundle, Mlp, MlpConfig};
use crate::numeric::{Batch, RngStream};

/// Step counts the flow-map sampler accepts.
pub const MEANFLOW_STEPS: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanFlowConfig {
    /// Probability of replacing `r` by `t`.
    pub p_eq: f64,
    /// Adaptive-weighting power.
    pub power: f64,
    /// Adaptive-weighting floor.
    pub floor: f64,
    /// Location and scale of the logit-normal time draws.
    pub time_mean: f64,
    pub time_std: f64,
    pub grad_clip: f64,
    /// Sampler steps used when the model acts as a generator.
    pub sample_steps: usize,
}

impl Default for MeanFlowConfig {
    fn default() -> Self {
        Self {
            p_eq: 0.5,
            power: 1.0,
            floor: 1e-2,
            time_mean: -0.4,
            time_std: 1.0,
            grad_clip: 1.0,
            sample_steps: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanFlowModel {
    pub config: MeanFlowConfig,
    /// `u(x_t, r, t)` with input `[x_t, t, t − r]`.
    pub net: Mlp,
}

/// Frozen regression targets and weights for one MeanFlow batch.
#[derive(Clone, Debug)]
pub struct MeanFlowTargets {
    pub inputs: Batch,
    pub u_star: Batch,
    /// Per-row divisor `(sg‖u − u*‖² + c)^p`.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MeanFlowLoss {
    pub loss: f64,
    pub grads: GradBundle,
}

/// Tape of a multi-step sample: one network cache per jump.
#[derive(Clone, Debug)]
pub struct FlowTape {
    pub(crate) caches: Vec<ForwardCache>,
    pub(crate) dts: Vec<f64>,
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl MeanFlowModel {
    pub fn new(config: MeanFlowConfig, shape: NetShape, rng: &mut RngStream) -> Self {
        let net = Mlp::init(MlpConfig::new(4, 2, shape.hidden_width, shape.hidden_layers), rng);
        Self { config, net }
    }

    /// `(t, r)` with `0 ≤ r ≤ t ≤ 1`; `r = t` with probability `p_eq`.
    pub fn sample_times(&self, rng: &mut RngStream) -> (f64, f64) {
        let c = &self.config;
        let a = sigmoid(c.time_mean + c.time_std * rng.normal());
        let b = sigmoid(c.time_mean + c.time_std * rng.normal());
        let (t, r) = (a.max(b), a.min(b));
        if rng.uniform() < c.p_eq {
            (t, t)
        } else {
            (t, r)
        }
    }

    /// Frozen targets `u* = v_t − (t − r)·du/dt` from a forward-mode pass
    /// along the input tangent `(v_t, 1, 1)`.
    pub fn targets(&self, x0: &Batch, x1: &Batch, times: &[(f64, f64)]) -> Result<MeanFlowTargets> {
        x0.check_same_shape(x1)?;
        ensure_dim(2, x0.dim())?;
        if times.len() != x0.rows() {
            return Err(Error::Shape("one (t, r) pair per row required".into()));
        }
        let n = x0.rows();
        let mut inputs = Batch::zeros(n, 4);
        let mut tangent = Batch::zeros(n, 4);
        let mut v = Batch::zeros(n, 2);
        for i in 0..n {
            let (t, r) = times[i];
            let (a, b) = (x0.row(i), x1.row(i));
            let row = inputs.row_mut(i);
            for j in 0..2 {
                row[j] = (1.0 - t) * a[j] + t * b[j];
                v.row_mut(i)[j] = b[j] - a[j];
            }
            row[2] = t;
            row[3] = t - r;
            let tr = tangent.row_mut(i);
            tr[..2].copy_from_slice(v.row(i));
            tr[2] = 1.0;
            tr[3] = 1.0;
        }
        let (u, du) = self.net.jvp(&inputs, &tangent)?;
        let mut u_star = v.clone();
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let (t, r) = times[i];
            let mut err = 0.0;
            for j in 0..2 {
                let s = v.row(i)[j] - (t - r) * du.row(i)[j];
                u_star.row_mut(i)[j] = s;
                err += (u.row(i)[j] - s).powi(2);
            }
            weights.push((err + self.config.floor).powf(self.config.power));
        }
        Ok(MeanFlowTargets { inputs, u_star, weights })
    }

    /// `mean_rows ‖u − u*‖² / w` with `u*` and `w` frozen.
    pub fn weighted_loss_grad(&self, targets: &MeanFlowTargets) -> Result<MeanFlowLoss> {
        let (u, cache) = self.net.forward_cached(&targets.inputs)?;
        let n = u.rows() as f64;
        let mut loss = 0.0;
        let mut d_out = Batch::zeros(u.rows(), 2);
        for i in 0..u.rows() {
            let w = targets.weights[i];
            for j in 0..2 {
                let e = u.row(i)[j] - targets.u_star.row(i)[j];
                loss += e * e / w;
                d_out.row_mut(i)[j] = 2.0 * e / (w * n);
            }
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::NumericDomain(format!("meanflow loss is {loss}")));
        }
        let mut grads = self.net.zero_grads();
        self.net.backward(&cache, &d_out, &mut grads)?;
        Ok(MeanFlowLoss { loss, grads })
    }

    pub fn loss_grad(&self, x0: &Batch, x1: &Batch, times: &[(f64, f64)]) -> Result<MeanFlowLoss> {
        let targets = self.targets(x0, x1, times)?;
        self.weighted_loss_grad(&targets)
    }

    fn check_steps(steps: usize) -> Result<()> {
        if MEANFLOW_STEPS.contains(&steps) {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "meanflow sampler supports steps {MEANFLOW_STEPS:?}, got {steps}"
            )))
        }
    }

    /// `x_{k+1} = x_k − Δ·u(x_k, t_{k+1}, t_k)` on the uniform grid from 1 to 0.
    pub fn sample_from(&self, x1: &Batch, steps: usize) -> Result<Batch> {
        Ok(self.sample_taped(x1, steps)?.0)
    }

    pub(crate) fn sample_taped(&self, x1: &Batch, steps: usize) -> Result<(Batch, FlowTape)> {
        Self::check_steps(steps)?;
        ensure_dim(2, x1.dim())?;
        let n = x1.rows();
        let dt = 1.0 / steps as f64;
        let mut x = x1.clone();
        let mut caches = Vec::with_capacity(steps);
        for k in 0..steps {
            let t = 1.0 - k as f64 * dt;
            let mut input = Batch::zeros(n, 4);
            for i in 0..n {
                let row = input.row_mut(i);
                row[..2].copy_from_slice(x.row(i));
                row[2] = t;
                row[3] = dt;
            }
            let (u, cache) = self.net.forward_cached(&input)?;
            x = x.add_scaled(&u, -dt)?;
            caches.push(cache);
        }
        Ok((
            x,
            FlowTape {
                caches,
                dts: vec![dt; steps],
            },
        ))
    }

    /// Reverse pass through every jump of a taped sample.
    pub(crate) fn backward_taped(&self, tape: &FlowTape, d_out: &Batch) -> Result<GradBundle> {
        let mut grads = self.net.zero_grads();
        let mut g = d_out.clone();
        for (cache, &dt) in tape.caches.iter().zip(&tape.dts).rev() {
            let d_u = g.map(|v| -dt * v);
            let d_in = self.net.backward(cache, &d_u, &mut grads)?;
            for i in 0..g.rows() {
                let gi = g.row_mut(i);
                gi[0] += d_in.row(i)[0];
                gi[1] += d_in.row(i)[1];
            }
        }
        Ok(grads)
    }
}

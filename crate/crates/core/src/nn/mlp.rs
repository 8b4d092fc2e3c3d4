use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::numeric::{Batch, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl Activation {
    #[inline]
    fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Silu => u * sigmoid(u),
        }
    }

    #[inline]
    fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(u);
                s * (1.0 + u * (1.0 - s))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_width: usize,
    /// Number of hidden (activated) layers. Zero gives a single affine map.
    pub hidden_layers: usize,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(input_dim: usize, output_dim: usize, hidden_width: usize, hidden_layers: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden_width,
            hidden_layers,
            activation: Activation::Silu,
        }
    }

    /// Toy-study backbone: 3 hidden SiLU layers of width 256.
    pub fn toy(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, output_dim, 256, 3)
    }

    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, output_dim, 0, 0)
    }

    /// `(fan_in, fan_out)` for each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument("mlp dims must be positive".into()));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::InvalidArgument("hidden width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerSlot {
    weight: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Gradient (or any parameter-shaped vector) laid out like [`Mlp::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle {
    pub values: Vec<f64>,
}

impl GradBundle {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|g| *g *= s);
    }

    pub fn add_assign(&mut self, other: &GradBundle) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Activations saved by a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each affine layer.
    inputs: Vec<Batch>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Batch>,
}

/// Fully connected network with SiLU hidden layers and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(config: MlpConfig) -> Self {
        let n = config.param_count();
        Self {
            config,
            params: vec![0.0; n],
        }
    }

    /// Fan-in scaled uniform init: weights and biases in ±1/sqrt(fan_in).
    pub fn init(config: MlpConfig, rng: &mut RngStream) -> Self {
        let mut mlp = Self::zeros(config);
        for slot in mlp.slots() {
            let bound = 1.0 / (slot.fan_in as f64).sqrt();
            let end = slot.bias + slot.fan_out;
            for p in &mut mlp.params[slot.weight..end] {
                *p = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
        mlp
    }

    pub fn from_params(config: MlpConfig, params: Vec<f64>) -> Result<Self> {
        if params.len() != config.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grads(&self) -> GradBundle {
        GradBundle::zeros(self.params.len())
    }

    fn slots(&self) -> Vec<LayerSlot> {
        let mut off = 0;
        self.config
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let slot = LayerSlot {
                    weight: off,
                    bias: off + fan_in * fan_out,
                    fan_in,
                    fan_out,
                };
                off += fan_in * fan_out + fan_out;
                slot
            })
            .collect()
    }

    /// Mutable view of layer `l`'s weight matrix (`fan_out × fan_in`, row-major).
    pub fn weight_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.slots()[layer];
        &mut self.params[s.weight..s.bias]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.slots()[layer];
        &mut self.params[s.bias..s.bias + s.fan_out]
    }

    fn affine(&self, slot: &LayerSlot, input: &Batch) -> Batch {
        let n = input.rows();
        let mut out = Batch::zeros(n, slot.fan_out);
        let bias = &self.params[slot.bias..slot.bias + slot.fan_out];
        for r in 0..n {
            out.row_mut(r).copy_from_slice(bias);
        }
        // out (n×o) += input (n×i) · Wᵀ
        unsafe {
            matrixmultiply::dgemm(
                n,
                slot.fan_in,
                slot.fan_out,
                1.0,
                input.as_slice().as_ptr(),
                slot.fan_in as isize,
                1,
                self.params[slot.weight..].as_ptr(),
                1,
                slot.fan_in as isize,
                1.0,
                out.as_mut_slice().as_mut_ptr(),
                slot.fan_out as isize,
                1,
            );
        }
        out
    }

    fn linear_only(&self, slot: &LayerSlot, tangent: &Batch) -> Batch {
        let n = tangent.rows();
        let mut out = Batch::zeros(n, slot.fan_out);
        unsafe {
            matrixmultiply::dgemm(
                n,
                slot.fan_in,
                slot.fan_out,
                1.0,
                tangent.as_slice().as_ptr(),
                slot.fan_in as isize,
                1,
                self.params[slot.weight..].as_ptr(),
                1,
                slot.fan_in as isize,
                0.0,
                out.as_mut_slice().as_mut_ptr(),
                slot.fan_out as isize,
                1,
            );
        }
        out
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Batch::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward_batch(&x)?.into_vec())
    }

    pub fn forward_batch(&self, input: &Batch) -> Result<Batch> {
        ensure_dim(self.config.input_dim, input.dim())?;
        let slots = self.slots();
        let act = self.config.activation;
        let mut h = input.clone();
        for (l, slot) in slots.iter().enumerate() {
            h = self.affine(slot, &h);
            if l + 1 < slots.len() {
                h = h.map(|u| act.apply(u));
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, input: &Batch) -> Result<(Batch, ForwardCache)> {
        ensure_dim(self.config.input_dim, input.dim())?;
        let slots = self.slots();
        let act = self.config.activation;
        let mut inputs = Vec::with_capacity(slots.len());
        let mut pre = Vec::with_capacity(slots.len().saturating_sub(1));
        let mut h = input.clone();
        for (l, slot) in slots.iter().enumerate() {
            let u = self.affine(slot, &h);
            inputs.push(h);
            if l + 1 < slots.len() {
                h = u.map(|v| act.apply(v));
                pre.push(u);
            } else {
                h = u;
            }
        }
        Ok((h, ForwardCache { inputs, pre }))
    }

    /// Reverse pass: accumulates `∂L/∂θ` into `grads` and returns `∂L/∂input`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Batch, grads: &mut GradBundle) -> Result<Batch> {
        ensure_dim(self.config.output_dim, d_out.dim())?;
        if grads.values.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        let slots = self.slots();
        let act = self.config.activation;
        let n = d_out.rows();
        let mut delta = d_out.clone();
        for l in (0..slots.len()).rev() {
            let slot = slots[l];
            let input = &cache.inputs[l];
            if input.rows() != n {
                return Err(Error::Shape("cache and upstream gradient disagree on rows".into()));
            }
            // dW (o×i) += deltaᵀ (o×n) · input (n×i)
            unsafe {
                matrixmultiply::dgemm(
                    slot.fan_out,
                    n,
                    slot.fan_in,
                    1.0,
                    delta.as_slice().as_ptr(),
                    1,
                    slot.fan_out as isize,
                    input.as_slice().as_ptr(),
                    slot.fan_in as isize,
                    1,
                    1.0,
                    grads.values[slot.weight..].as_mut_ptr(),
                    slot.fan_in as isize,
                    1,
                );
            }
            let db = &mut grads.values[slot.bias..slot.bias + slot.fan_out];
            for r in delta.iter_rows() {
                for (g, d) in db.iter_mut().zip(r) {
                    *g += d;
                }
            }
            // d_in (n×i) = delta (n×o) · W (o×i)
            let mut d_in = Batch::zeros(n, slot.fan_in);
            unsafe {
                matrixmultiply::dgemm(
                    n,
                    slot.fan_out,
                    slot.fan_in,
                    1.0,
                    delta.as_slice().as_ptr(),
                    slot.fan_out as isize,
                    1,
                    self.params[slot.weight..].as_ptr(),
                    slot.fan_in as isize,
                    1,
                    0.0,
                    d_in.as_mut_slice().as_mut_ptr(),
                    slot.fan_in as isize,
                    1,
                );
            }
            if l > 0 {
                let pre = &cache.pre[l - 1];
                for (d, &u) in d_in.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    *d *= act.derivative(u);
                }
            }
            delta = d_in;
        }
        Ok(delta)
    }

    /// Forward-mode directional derivative: returns `(f(x), J_f(x)·tangent)` row by row.
    pub fn jvp(&self, input: &Batch, tangent: &Batch) -> Result<(Batch, Batch)> {
        ensure_dim(self.config.input_dim, input.dim())?;
        input.check_same_shape(tangent)?;
        let slots = self.slots();
        let act = self.config.activation;
        let mut h = input.clone();
        let mut dh = tangent.clone();
        for (l, slot) in slots.iter().enumerate() {
            let u = self.affine(slot, &h);
            let du = self.linear_only(slot, &dh);
            if l + 1 < slots.len() {
                h = u.map(|v| act.apply(v));
                dh = du;
                for (d, &v) in dh.as_mut_slice().iter_mut().zip(u.as_slice()) {
                    *d *= act.derivative(v);
                }
            } else {
                h = u;
                dh = du;
            }
        }
        Ok((h, dh))
    }

    /// `mean_rows ‖f(x) − target‖²` and its exact parameter gradient.
    pub fn backward_mse(&self, inputs: &Batch, targets: &Batch) -> Result<(f64, GradBundle)> {
        let (out, cache) = self.forward_cached(inputs)?;
        out.check_same_shape(targets)?;
        let n = out.rows() as f64;
        let mut loss = 0.0;
        let mut d_out = Batch::zeros(out.rows(), out.dim());
        for ((d, o), t) in d_out
            .as_mut_slice()
            .iter_mut()
            .zip(out.as_slice())
            .zip(targets.as_slice())
        {
            let e = o - t;
            loss += e * e;
            *d = 2.0 * e / n;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::NumericDomain(format!(
                "mse loss is {loss} (max |output| = {}, max |target| = {})",
                out.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())),
                targets.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()))
            )));
        }
        let mut grads = self.zero_grads();
        self.backward(&cache, &d_out, &mut grads)?;
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(seed: u64) -> Mlp {
        Mlp::init(MlpConfig::new(3, 2, 8, 3), &mut RngStream::new(seed))
    }

    #[test]
    fn zero_params_give_zero_output() {
        let m = Mlp::zeros(MlpConfig::new(3, 2, 16, 3));
        assert_eq!(m.forward(&[1.0, -2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut m = Mlp::zeros(MlpConfig::linear(2, 2));
        m.weight_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.forward(&[0.25, -3.0]).unwrap(), vec![0.25, -3.0]);
    }

    #[test]
    fn outputs_stay_finite_for_large_inputs() {
        let m = Mlp::init(MlpConfig::toy(4, 2), &mut RngStream::new(1));
        let out = m.forward(&[1e3, -1e3, 5e2, 0.0]).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shape_errors() {
        let m = net(0);
        assert!(m.forward(&[1.0]).is_err());
        let x = Batch::zeros(4, 3);
        assert!(m.backward_mse(&x, &Batch::zeros(3, 2)).is_err());
    }

    #[test]
    fn hand_differentiated_linear_model() {
        let mut m = Mlp::zeros(MlpConfig::linear(1, 1));
        m.weight_mut(0)[0] = 2.0;
        let x = Batch::from_rows(&[[1.0]]).unwrap();
        let t = Batch::from_rows(&[[0.0]]).unwrap();
        let (loss, g) = m.backward_mse(&x, &t).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(g.values[0], 4.0);
        assert_eq!(g.values[1], 4.0);
    }

    #[test]
    fn fixed_point_has_zero_gradient() {
        let m = net(2);
        let x = RngStream::new(3).normal_batch(5, 3);
        let y = m.forward_batch(&x).unwrap();
        let (loss, g) = m.backward_mse(&x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    fn mse(m: &Mlp, x: &Batch, t: &Batch) -> f64 {
        let y = m.forward_batch(x).unwrap();
        y.as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / x.rows() as f64
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(4);
        for trial in 0..50 {
            let m = net(100 + trial);
            let x = rng.normal_batch(4, 3);
            let t = rng.normal_batch(4, 2);
            let (_, g) = m.backward_mse(&x, &t).unwrap();
            let h = 1e-5;
            for k in 0..m.param_count() {
                let mut p = m.clone();
                p.params_mut()[k] += h;
                let up = mse(&p, &x, &t);
                p.params_mut()[k] -= 2.0 * h;
                let down = mse(&p, &x, &t);
                let fd = (up - down) / (2.0 * h);
                let err = (fd - g.values[k]).abs();
                assert!(
                    err <= 1e-4 * fd.abs().max(g.values[k].abs()) || err < 1e-8,
                    "param {k}: fd {fd} vs {}",
                    g.values[k]
                );
            }
        }
    }

    #[test]
    fn jvp_examples() {
        let m = net(5);
        let x = RngStream::new(6).normal_batch(3, 3);
        let (_, dz) = m.jvp(&x, &Batch::zeros(3, 3)).unwrap();
        assert_eq!(dz.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs())), 0.0);

        let mut lin = Mlp::zeros(MlpConfig::linear(2, 2));
        lin.weight_mut(0).copy_from_slice(&[1.0, 2.0, -3.0, 0.5]);
        let u = Batch::from_rows(&[[1.0, 1.0]]).unwrap();
        let (_, du) = lin.jvp(&Batch::zeros(1, 2), &u).unwrap();
        assert_eq!(du.row(0), &[3.0, -2.5]);
    }

    #[test]
    fn jvp_matches_central_differences() {
        let mut rng = RngStream::new(7);
        let m = net(8);
        let x = rng.normal_batch(6, 3);
        let u = rng.normal_batch(6, 3);
        let (_, du) = m.jvp(&x, &u).unwrap();
        let h = 1e-5;
        let up = m.forward_batch(&x.add_scaled(&u, h).unwrap()).unwrap();
        let down = m.forward_batch(&x.add_scaled(&u, -h).unwrap()).unwrap();
        for i in 0..du.as_slice().len() {
            let fd = (up.as_slice()[i] - down.as_slice()[i]) / (2.0 * h);
            let a = du.as_slice()[i];
            assert!((fd - a).abs() <= 1e-5 * a.abs().max(1e-3), "{fd} vs {a}");
        }
    }

    #[test]
    fn jvp_and_vjp_agree() {
        let mut rng = RngStream::new(9);
        let m = net(10);
        let x = rng.normal_batch(5, 3);
        let u = rng.normal_batch(5, 3);
        let w = rng.normal_batch(5, 2);
        let (_, ju) = m.jvp(&x, &u).unwrap();
        let (_, cache) = m.forward_cached(&x).unwrap();
        let mut g = m.zero_grads();
        let vjp = m.backward(&cache, &w, &mut g).unwrap();
        let lhs: f64 = u.as_slice().iter().zip(vjp.as_slice()).map(|(a, b)| a * b).sum();
        let rhs: f64 = w.as_slice().iter().zip(ju.as_slice()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
    }
}

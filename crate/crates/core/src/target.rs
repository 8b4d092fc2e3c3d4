//! Analytic reference distribution, reward and reward-tilted target.

use std::f64::consts::{PI, SQRT_2};


use crate::error::{ensure_dim, Error, Result};
use crate::numeric::{log_sum_exp, sq_dist, Batch, Box2, MidpointGrid, RngStream, MIXTURE_BOX, MIXTURE_RESOLUTION};

/// Equal-covariance isotropic Gaussian mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    centers: Batch,
    weights: Vec<f64>,
    std: f64,
}

impl GaussianMixture {
    pub fn new(centers: Batch, weights: Vec<f64>, std: f64) -> Result<Self> {
        if centers.rows() != weights.len() || centers.is_empty() {
            return Err(Error::Shape("one weight per center required".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        if !(std > 0.0) {
            return Err(Error::InvalidArgument("mixture std must be positive".into()));
        }
        Ok(Self { centers, weights, std })
    }

    /// Eight equal-weight modes on a circle of radius 4/√2 with std 0.5/√2,
    /// mode `k` at angle `2πk/8`.
    pub fn eight_gaussians() -> Self {
        Self::ring(8, 4.0 / SQRT_2, 0.5 / SQRT_2)
    }

    pub fn ring(k: usize, radius: f64, std: f64) -> Self {
        let rows: Vec<[f64; 2]> = (0..k)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / k as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        let centers = Batch::from_rows(&rows).expect("finite ring");
        Self::new(centers, vec![1.0 / k as f64; k], std).expect("valid ring")
    }

    pub fn isotropic(mean: &[f64], std: f64) -> Result<Self> {
        Self::new(Batch::from_rows(&[mean])?, vec![1.0], std)
    }

    pub fn centers(&self) -> &Batch {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn dim(&self) -> usize {
        self.centers.dim()
    }

    pub fn components(&self) -> usize {
        self.centers.rows()
    }

    fn component_logits(&self, x: &[f64]) -> Vec<f64> {
        let var = self.std * self.std;
        let norm = -0.5 * self.dim() as f64 * (2.0 * PI * var).ln();
        self.centers
            .iter_rows()
            .zip(&self.weights)
            .map(|(c, w)| w.ln() + norm - sq_dist(x, c) / (2.0 * var))
            .collect()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_logits(x))
    }

    /// `∇ log p(x) = Σ_k γ_k(x) (c_k − x)/std²` with responsibilities `γ`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut logits = self.component_logits(x);
        crate::numeric::softmax_in_place(&mut logits);
        let var = self.std * self.std;
        let mut s = vec![0.0; x.len()];
        for (c, g) in self.centers.iter_rows().zip(&logits) {
            for ((s, ci), xi) in s.iter_mut().zip(c).zip(x) {
                *s += g * (ci - xi) / var;
            }
        }
        s
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Batch {
        let d = self.dim();
        let mut out = Batch::zeros(n, d);
        for i in 0..n {
            let k = self.pick_component(rng);
            let c = self.centers.row(k);
            for (o, ci) in out.row_mut(i).iter_mut().zip(c) {
                *o = ci + self.std * rng.normal();
            }
        }
        out
    }

    fn pick_component(&self, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }

    /// Exact convolution with an isotropic Gaussian of std `sigma`.
    pub fn smoothed(&self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument("smoothing sigma must be positive".into()));
        }
        Ok(Self {
            centers: self.centers.clone(),
            weights: self.weights.clone(),
            std: (self.std * self.std + sigma * sigma).sqrt(),
        })
    }

    pub fn nearest_center(&self, x: &[f64]) -> usize {
        nearest_row(&self.centers, x)
    }
}

pub(crate) fn nearest_row(rows: &Batch, x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in rows.iter_rows().enumerate() {
        let d = sq_dist(x, c);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Scalar reward on sample space.
pub trait Reward: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;

    /// Analytic gradient, or `None` for black-box rewards.
    fn grad(&self, x: &[f64]) -> Option<Vec<f64>>;

    /// Upper bound on `value`, used as the rejection-sampling envelope.
    fn upper_bound(&self) -> Option<f64> {
        None
    }
}

/// `exp(r(x)) = Σ_k softmax(−‖x−c_k‖²)_k · k/(K−1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftClusterReward {
    centers: Batch,
    values: Vec<f64>,
}

impl SoftClusterReward {
    pub fn new(centers: Batch) -> Self {
        let k = centers.rows();
        let denom = (k.max(2) - 1) as f64;
        let values = (0..k).map(|i| i as f64 / denom).collect();
        Self { centers, values }
    }

    pub fn for_mixture(gmm: &GaussianMixture) -> Self {
        Self::new(gmm.centers().clone())
    }

    /// Per-mode target values `k/(K−1)`.
    pub fn mode_values(&self) -> &[f64] {
        &self.values
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.centers.iter_rows().map(|c| -sq_dist(x, c)).collect()
    }

    /// `exp(r(x))`, a convex combination of the mode values.
    pub fn exp_value(&self, x: &[f64]) -> f64 {
        self.value(x).exp()
    }
}

impl Reward for SoftClusterReward {
    fn value(&self, x: &[f64]) -> f64 {
        let logits = self.logits(x);
        let weighted: Vec<f64> = logits
            .iter()
            .zip(&self.values)
            .filter(|(_, v)| **v > 0.0)
            .map(|(l, v)| l + v.ln())
            .collect();
        log_sum_exp(&weighted) - log_sum_exp(&logits)
    }

    fn grad(&self, x: &[f64]) -> Option<Vec<f64>> {
        // ∇ log Σ e^{l_k} v_k − ∇ log Σ e^{l_k}, with ∇ l_k = −2(x − c_k)
        let logits = self.logits(x);
        let mut plain = logits.clone();
        crate::numeric::softmax_in_place(&mut plain);
        let mut tilted: Vec<f64> = logits
            .iter()
            .zip(&self.values)
            .map(|(l, v)| if *v > 0.0 { l + v.ln() } else { f64::NEG_INFINITY })
            .collect();
        crate::numeric::softmax_in_place(&mut tilted);
        let mut g = vec![0.0; x.len()];
        for ((c, a), s) in self.centers.iter_rows().zip(&tilted).zip(&plain) {
            let w = a - s;
            for ((gi, ci), xi) in g.iter_mut().zip(c).zip(x) {
                *gi += w * (-2.0) * (xi - ci);
            }
        }
        Some(g)
    }

    fn upper_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Cached normalizer and per-cell probability masses of a tilted target.
#[derive(Clone, Debug)]
struct Normalizer {
    log_z: f64,
    grid: MidpointGrid,
    /// Normalized probability of each cell, x-major.
    mass: Vec<f64>,
}

/// `q*(x) ∝ p(x)·exp(β·r(x))` over a Gaussian-mixture reference.
#[derive(Clone, Debug)]
pub struct TiltedTarget<R: Reward = SoftClusterReward> {
    mixture: GaussianMixture,
    reward: R,
    beta: f64,
    normalizer: Option<Normalizer>,
}

impl TiltedTarget<SoftClusterReward> {
    /// 8-Gaussians with the soft cluster reward at the given β.
    pub fn toy(beta: f64) -> Result<Self> {
        let mixture = GaussianMixture::eight_gaussians();
        let reward = SoftClusterReward::for_mixture(&mixture);
        Self::new(mixture, reward, beta)
    }
}

impl<R: Reward> TiltedTarget<R> {
    pub fn new(mixture: GaussianMixture, reward: R, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be non-negative, got {beta}")));
        }
        Ok(Self {
            mixture,
            reward,
            beta,
            normalizer: None,
        })
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn reward(&self) -> &R {
        &self.reward
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Computes and caches `log Z` over the default box and resolution.
    pub fn normalized(self) -> Result<Self> {
        self.normalized_on(MIXTURE_BOX, MIXTURE_RESOLUTION)
    }

    pub fn normalized_on(mut self, bounds: Box2, resolution: usize) -> Result<Self> {
        ensure_dim(2, self.mixture.dim())?;
        let grid = MidpointGrid::new(bounds, resolution)?;
        let log_q = grid.evaluate(|x| self.log_density_unnormalized(x))?;
        let m = log_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = log_q.iter().map(|l| (l - m).exp()).sum();
        let log_z = m + (sum * grid.cell_area).ln();
        if !log_z.is_finite() {
            return Err(Error::NumericDomain("normalizing constant is not finite".into()));
        }
        let mass = log_q.iter().map(|l| (l - log_z).exp() * grid.cell_area).collect();
        self.normalizer = Some(Normalizer { log_z, grid, mass });
        Ok(self)
    }

    pub fn log_z(&self) -> Result<f64> {
        self.normalizer.as_ref().map(|n| n.log_z).ok_or(Error::MissingNormalizer)
    }

    fn log_density_unnormalized(&self, x: &[f64]) -> f64 {
        let tilt = if self.beta == 0.0 { 0.0 } else { self.beta * self.reward.value(x) };
        self.mixture.log_pdf(x) + tilt
    }

    /// `log p(x) + β r(x)`, minus `log Z` when `normalized`.
    pub fn log_density(&self, x: &[f64], normalized: bool) -> Result<f64> {
        let base = self.log_density_unnormalized(x);
        if normalized {
            Ok(base - self.log_z()?)
        } else {
            Ok(base)
        }
    }

    /// `∇ log q*(x) = ∇ log p(x) + β ∇ r(x)`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.mixture.score(x);
        if self.beta != 0.0 {
            let g = self
                .reward
                .grad(x)
                .ok_or_else(|| Error::Unsupported("reward has no analytic gradient".into()))?;
            for (si, gi) in s.iter_mut().zip(g) {
                *si += self.beta * gi;
            }
        }
        Ok(s)
    }

    /// Exact draws from `q*` by rejection from the mixture with acceptance
    /// `exp(β (r(x) − r_max))`.
    pub fn sample_rejection(&self, n: usize, rng: &mut RngStream) -> Result<Batch> {
        let r_max = self
            .reward
            .upper_bound()
            .ok_or_else(|| Error::Unsupported("rejection sampling needs a reward upper bound".into()))?;
        let mut out = Batch::zeros(0, self.mixture.dim());
        while out.rows() < n {
            let x = self.mixture.sample(1, rng);
            let accept = (self.beta * (self.reward.value(x.row(0)) - r_max)).exp();
            if accept >= 1.0 || rng.uniform() < accept {
                out.push_row(x.row(0))?;
            }
        }
        Ok(out)
    }

    /// Mode masses of `q*` under nearest-center assignment, by quadrature.
    pub fn mode_masses(&self) -> Result<Vec<f64>> {
        let norm = self.normalizer.as_ref().ok_or(Error::MissingNormalizer)?;
        let mut masses = vec![0.0; self.mixture.components()];
        let res = norm.grid.resolution;
        for (i, &x) in norm.grid.xs.iter().enumerate() {
            for (j, &y) in norm.grid.ys.iter().enumerate() {
                masses[self.mixture.nearest_center(&[x, y])] += norm.mass[i * res + j];
            }
        }
        Ok(masses)
    }

    /// `E_{q*}[r]` by quadrature.
    pub fn mean_reward(&self) -> Result<f64> {
        let norm = self.normalizer.as_ref().ok_or(Error::MissingNormalizer)?;
        let res = norm.grid.resolution;
        let mut total = 0.0;
        for (i, &x) in norm.grid.xs.iter().enumerate() {
            for (j, &y) in norm.grid.ys.iter().enumerate() {
                total += norm.mass[i * res + j] * self.reward.value(&[x, y]);
            }
        }
        Ok(total)
    }

    /// `log (q* ∗ N(0, h²I))(x)` for each row, by quadrature over the cached grid.
    ///
    /// The kernel factorizes over axes, so each point costs one pass over the
    /// grid with precomputed 1-D factors. Exponents are shifted by the point's
    /// distance to the grid so far-away points do not underflow.
    pub fn smoothed_log_density(&self, points: &Batch, h: f64) -> Result<Vec<f64>> {
        ensure_dim(2, points.dim())?;
        if !(h > 0.0) {
            return Err(Error::InvalidArgument("smoothing bandwidth must be positive".into()));
        }
        let norm = self.normalizer.as_ref().ok_or(Error::MissingNormalizer)?;
        let grid = &norm.grid;
        let res = grid.resolution;
        let two_h2 = 2.0 * h * h;
        let log_norm = -(PI * two_h2).ln();
        let axis = |coords: &[f64], p: f64| -> (Vec<f64>, f64) {
            let lo = coords[0];
            let hi = coords[coords.len() - 1];
            let gap = if p < lo { lo - p } else if p > hi { p - hi } else { 0.0 };
            let shift = gap * gap;
            let w = coords
                .iter()
                .map(|c| {
                    let e = -((p - c) * (p - c) - shift) / two_h2;
                    if e < -700.0 { 0.0 } else { e.exp() }
                })
                .collect();
            (w, -shift / two_h2)
        };
        let mut out = Vec::with_capacity(points.rows());
        for p in points.iter_rows() {
            let (ex, sx) = axis(&grid.xs, p[0]);
            let (ey, sy) = axis(&grid.ys, p[1]);
            let mut total = 0.0;
            for (i, &wx) in ex.iter().enumerate() {
                if wx == 0.0 {
                    continue;
                }
                let row = &norm.mass[i * res..(i + 1) * res];
                let inner: f64 = row.iter().zip(&ey).map(|(m, wy)| m * wy).sum();
                total += wx * inner;
            }
            out.push(total.ln() + sx + sy + log_norm);
        }
        Ok(out)
    }
}

use serde::{Deserialize, Serialize};

use super::kde::kde_scores;
use super::zeroth_order_grad;
use crate::error::{ensure_dim, Error, Result};
use crate::numeric::{sq_dist, Batch, KernelFamily, KernelSpec, RngStream};
use crate::target::Reward;

/// Which of the three velocity terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TermSwitches {
    pub prior: bool,
    pub reward: bool,
    pub repulsive: bool,
}

impl Default for TermSwitches {
    fn default() -> Self {
        Self {
            prior: true,
            reward: true,
            repulsive: true,
        }
    }
}

impl TermSwitches {
    pub fn without(term: &str) -> Result<Self> {
        let mut s = Self::default();
        match term {
            "prior" => s.prior = false,
            "reward" => s.reward = false,
            "repulsive" => s.repulsive = false,
            other => return Err(Error::InvalidArgument(format!("unknown velocity term {other:?}"))),
        }
        Ok(s)
    }
}

/// Map `ψ` into the space where velocities and the regression loss live.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureMap {
    #[default]
    Identity,
    /// `ψ(x) = A·x + b` with `A` given row by row.
    Affine { a: Vec<Vec<f64>>, b: Vec<f64> },
}

impl FeatureMap {
    pub fn affine(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let m = FeatureMap::Affine { a, b };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if let FeatureMap::Affine { a, b } = self {
            let d = b.len();
            if a.len() != d || a.iter().any(|r| r.len() != d) {
                return Err(Error::Shape(format!("affine feature map needs a {d}×{d} matrix")));
            }
            invert(a)?;
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, FeatureMap::Identity)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            FeatureMap::Identity => Ok(x.to_vec()),
            FeatureMap::Affine { a, b } => {
                ensure_dim(b.len(), x.len())?;
                Ok(a.iter()
                    .zip(b)
                    .map(|(row, bi)| row.iter().zip(x).map(|(aij, xj)| aij * xj).sum::<f64>() + bi)
                    .collect())
            }
        }
    }

    pub fn apply_batch(&self, xs: &Batch) -> Result<Batch> {
        if self.is_identity() {
            return Ok(xs.clone());
        }
        let mut out = Batch::zeros(xs.rows(), xs.dim());
        for (i, x) in xs.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.apply(x)?);
        }
        Ok(out)
    }

    /// `Aᵀ·v` for each row: pulls a feature-space gradient back to sample space.
    pub fn pullback(&self, vs: &Batch) -> Result<Batch> {
        match self {
            FeatureMap::Identity => Ok(vs.clone()),
            FeatureMap::Affine { a, .. } => Ok(mat_rows(&transpose(a), vs)),
        }
    }

    /// `A⁻ᵀ·g` for each row: gradient of `r∘ψ⁻¹` from the gradient of `r`.
    pub fn pushforward_grad(&self, gs: &Batch) -> Result<Batch> {
        match self {
            FeatureMap::Identity => Ok(gs.clone()),
            FeatureMap::Affine { a, .. } => Ok(mat_rows(&transpose(&invert(a)?), gs)),
        }
    }
}

fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = a.len();
    (0..d).map(|i| (0..d).map(|j| a[j][i]).collect()).collect()
}

fn mat_rows(m: &[Vec<f64>], vs: &Batch) -> Batch {
    let mut out = Batch::zeros(vs.rows(), vs.dim());
    for (i, v) in vs.iter_rows().enumerate() {
        for (o, row) in out.row_mut(i).iter_mut().zip(m) {
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..d).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..d {
        let p = (c..d)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .expect("non-empty range");
        if m[p][c].abs() < 1e-12 {
            return Err(Error::InvalidArgument("affine feature map is singular".into()));
        }
        m.swap(c, p);
        let piv = m[c][c];
        for v in &mut m[c] {
            *v /= piv;
        }
        for r in 0..d {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..2 * d {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    Ok(m.into_iter().map(|r| r[d..].to_vec()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FavConfig {
    pub beta: f64,
    pub kernel: KernelSpec,
    pub n_gen: usize,
    pub n_ref: usize,
    #[serde(default)]
    pub terms: TermSwitches,
    #[serde(default)]
    pub feature_map: FeatureMap,
}

impl FavConfig {
    pub fn new(beta: f64, kernel: KernelSpec, n_gen: usize, n_ref: usize) -> Self {
        Self {
            beta,
            kernel,
            n_gen,
            n_ref,
            terms: TermSwitches::default(),
            feature_map: FeatureMap::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.kernel.family != KernelFamily::GaussianRbf {
            return Err(Error::InvalidArgument("Stein velocities need a gaussian-rbf kernel".into()));
        }
        if self.n_gen == 0 || self.n_ref == 0 {
            return Err(Error::InvalidArgument("n_gen and n_ref must be positive".into()));
        }
        self.feature_map.validate()
    }

    pub fn sigma(&self) -> f64 {
        self.kernel.sigma()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum GradientMode {
    Analytic,
    ZerothOrder { eta: f64, samples: usize },
}

/// Reward values and gradients, analytic or by two-point estimation.
pub struct RewardOracle<'a> {
    reward: &'a dyn Reward,
    mode: GradientMode,
    rng: RngStream,
}

impl<'a> RewardOracle<'a> {
    pub fn analytic(reward: &'a dyn Reward) -> Self {
        Self {
            reward,
            mode: GradientMode::Analytic,
            rng: RngStream::new(0),
        }
    }

    pub fn zeroth_order(reward: &'a dyn Reward, eta: f64, samples: usize, rng: RngStream) -> Result<Self> {
        Self::new(reward, GradientMode::ZerothOrder { eta, samples }, rng)
    }

    pub fn new(reward: &'a dyn Reward, mode: GradientMode, rng: RngStream) -> Result<Self> {
        if let GradientMode::ZerothOrder { eta, samples } = mode {
            if !(eta > 0.0) || samples == 0 {
                return Err(Error::InvalidArgument("zeroth-order mode needs eta > 0 and K ≥ 1".into()));
            }
        }
        Ok(Self { reward, mode, rng })
    }

    pub fn mode(&self) -> GradientMode {
        self.mode
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.reward.value(x)
    }

    pub fn grad(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let g = match self.mode {
            GradientMode::Analytic => self
                .reward
                .grad(x)
                .ok_or_else(|| Error::Unsupported("reward has no analytic gradient".into()))?,
            GradientMode::ZerothOrder { eta, samples } => {
                let r = self.reward;
                zeroth_order_grad(&|p: &[f64]| r.value(p), x, eta, samples, &mut self.rng)?
            }
        };
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!("reward gradient {g:?} at {x:?}")));
        }
        Ok(g)
    }

    pub fn grads(&mut self, xs: &Batch) -> Result<Batch> {
        let mut out = Batch::zeros(xs.rows(), xs.dim());
        for (i, x) in xs.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.grad(x)?);
        }
        Ok(out)
    }
}

/// Velocity at each particle with its per-term decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityReport {
    pub velocities: Batch,
    pub prior: Batch,
    pub reward: Batch,
    pub repulsive: Batch,
    /// Particles whose KDE score fell back to the nearest reference.
    pub far_from_support: usize,
}

impl VelocityReport {
    pub fn mean_norm(&self) -> f64 {
        self.velocities.mean_norm()
    }
}

/// `φ(x_i) = (1/n) Σ_j k(x_j, x_i)·[s_j + β g_j + (x_i − x_j)/σ²]`, term by term.
fn kernel_average(
    particles: &Batch,
    scores: Option<&Batch>,
    reward_grads: Option<&Batch>,
    beta: f64,
    kernel: &KernelSpec,
    terms: TermSwitches,
) -> Result<VelocityReport> {
    if particles.is_empty() {
        return Err(Error::InvalidArgument("no particles".into()));
    }
    let n = particles.rows();
    let d = particles.dim();
    let var = kernel.sigma().powi(2);
    let mut prior = Batch::zeros(n, d);
    let mut reward = Batch::zeros(n, d);
    let mut repulsive = Batch::zeros(n, d);
    let mut k = vec![0.0; n];
    for i in 0..n {
        let xi = particles.row(i);
        for (j, kj) in k.iter_mut().enumerate() {
            *kj = kernel.eval_sq(sq_dist(particles.row(j), xi));
        }
        if let (true, Some(s)) = (terms.prior, scores) {
            let out = prior.row_mut(i);
            for (j, kj) in k.iter().enumerate() {
                for (o, sj) in out.iter_mut().zip(s.row(j)) {
                    *o += kj * sj;
                }
            }
        }
        if let (true, Some(g)) = (terms.reward, reward_grads) {
            let out = reward.row_mut(i);
            for (j, kj) in k.iter().enumerate() {
                for (o, gj) in out.iter_mut().zip(g.row(j)) {
                    *o += kj * beta * gj;
                }
            }
        }
        if terms.repulsive {
            let out = repulsive.row_mut(i);
            for (j, kj) in k.iter().enumerate() {
                for ((o, xij), xjj) in out.iter_mut().zip(xi).zip(particles.row(j)) {
                    *o += kj * (xij - xjj) / var;
                }
            }
        }
    }
    let nf = n as f64;
    for b in [&mut prior, &mut reward, &mut repulsive] {
        for v in b.as_mut_slice() {
            *v /= nf;
        }
    }
    let mut velocities = Batch::zeros(n, d);
    for (((v, a), b), c) in velocities
        .as_mut_slice()
        .iter_mut()
        .zip(prior.as_slice())
        .zip(reward.as_slice())
        .zip(repulsive.as_slice())
    {
        *v = a + b + c;
    }
    if !velocities.all_finite() {
        return Err(Error::NumericDomain("non-finite Stein velocity".into()));
    }
    Ok(VelocityReport {
        velocities,
        prior,
        reward,
        repulsive,
        far_from_support: 0,
    })
}

fn reward_term_grads(particles: &Batch, oracle: &mut RewardOracle, cfg: &FavConfig) -> Result<Option<Batch>> {
    if cfg.terms.reward && cfg.beta != 0.0 {
        Ok(Some(oracle.grads(particles)?))
    } else {
        Ok(None)
    }
}

/// Stein velocity toward `p·exp(βr)` with an explicit score function for `p`.
pub fn stein_velocity_exact(
    particles: &Batch,
    score_fn: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    oracle: &mut RewardOracle,
    cfg: &FavConfig,
) -> Result<VelocityReport> {
    cfg.validate()?;
    let scores = if cfg.terms.prior {
        let mut s = Batch::zeros(particles.rows(), particles.dim());
        for (i, x) in particles.iter_rows().enumerate() {
            let v = score_fn(x)?;
            ensure_dim(particles.dim(), v.len())?;
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::NumericDomain(format!("score {v:?} at {x:?}")));
            }
            s.row_mut(i).copy_from_slice(&v);
        }
        Some(s)
    } else {
        None
    };
    let grads = reward_term_grads(particles, oracle, cfg)?;
    kernel_average(particles, scores.as_ref(), grads.as_ref(), cfg.beta, &cfg.kernel, cfg.terms)
}

/// Stein velocity with the reference score replaced by the KDE score of
/// `refs` at the shared bandwidth.
pub fn stein_velocity_kde(
    particles: &Batch,
    refs: &Batch,
    oracle: &mut RewardOracle,
    cfg: &FavConfig,
) -> Result<VelocityReport> {
    cfg.validate()?;
    let grads = reward_term_grads(particles, oracle, cfg)?;
    velocity_kde_with_grads(particles, refs, grads.as_ref(), cfg)
}

pub(crate) fn velocity_kde_with_grads(
    particles: &Batch,
    refs: &Batch,
    grads: Option<&Batch>,
    cfg: &FavConfig,
) -> Result<VelocityReport> {
    let (scores, far) = if cfg.terms.prior {
        let (s, far) = kde_scores(particles, refs, cfg.sigma())?;
        (Some(s), far)
    } else {
        (None, 0)
    };
    let mut report = kernel_average(particles, scores.as_ref(), grads, cfg.beta, &cfg.kernel, cfg.terms)?;
    report.far_from_support = far;
    Ok(report)
}

/// `x, y, prior_x, prior_y, reward_x, reward_y, rep_x, rep_y` per particle.
pub fn write_velocity_csv<W: std::io::Write>(mut w: W, particles: &Batch, report: &VelocityReport) -> Result<()> {
    ensure_dim(2, particles.dim())?;
    writeln!(w, "x,y,prior_x,prior_y,reward_x,reward_y,rep_x,rep_y")?;
    for i in 0..particles.rows() {
        let (x, p, r, q) = (
            particles.row(i),
            report.prior.row(i),
            report.reward.row(i),
            report.repulsive.row(i),
        );
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            x[0], x[1], p[0], p[1], r[0], r[1], q[0], q[1]
        )?;
    }
    Ok(())
}

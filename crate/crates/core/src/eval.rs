//! Sample-quality metrics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::numeric::{log_sum_exp, sq_dist, Batch, KernelSpec, RngStream};
use crate::stein::scott_bandwidth;
use crate::target::{nearest_row, Reward, TiltedTarget};

/// Seed of the jitter stream used by [`kl_to_target`].
pub const KL_JITTER_SEED: u64 = 0x6b6c;

/// `KL(q‖q*)` from samples of `q`.
///
/// Both sides are smoothed with the same `N(0, h²I)` kernel, `h` from Scott's
/// rule on the samples. Each sample is jittered, `y_i = x_i + h·ξ_i`, so the
/// `y_i` are draws from the smoothed `q`; its density at `y_i` is the
/// leave-one-out KDE of the remaining samples, and the smoothed target is
/// exact by quadrature of the cached grid. The jitter stream has a fixed
/// seed, so the estimate is a deterministic function of the samples.
pub fn kl_to_target<R: Reward>(samples: &Batch, target: &TiltedTarget<R>) -> Result<f64> {
    ensure_dim(2, samples.dim())?;
    let bw = scott_bandwidth(samples)?;
    let mut rng = RngStream::new(KL_JITTER_SEED);
    let jitter = rng.normal_batch(samples.rows(), 2);
    let probes = samples.add_scaled(&jitter, bw.h)?;
    let log_q = loo_kde_log_density_at(&probes, samples, bw.h)?;
    let log_p = target.smoothed_log_density(&probes, bw.h)?;
    let total: f64 = log_q.iter().zip(&log_p).map(|(a, b)| a - b).sum();
    Ok(total / samples.rows() as f64)
}

/// `log (1/(n−1)) Σ_{j≠i} N(x_i; x_j, h²I)` for each row.
pub fn loo_kde_log_density(samples: &Batch, h: f64) -> Result<Vec<f64>> {
    loo_kde_log_density_at(samples, samples, h)
}

/// `log (1/(n−1)) Σ_{j≠i} N(p_i; x_j, h²I)`: the KDE of all samples but the
/// `i`-th, evaluated at probe `i`.
pub fn loo_kde_log_density_at(probes: &Batch, samples: &Batch, h: f64) -> Result<Vec<f64>> {
    let n = samples.rows();
    if n < 2 {
        return Err(Error::InvalidArgument("leave-one-out KDE needs two samples".into()));
    }
    if probes.rows() != n {
        return Err(Error::InvalidArgument("one probe per sample is required".into()));
    }
    ensure_dim(samples.dim(), probes.dim())?;
    let d = samples.dim() as f64;
    let two_h2 = 2.0 * h * h;
    let log_norm = -0.5 * d * (std::f64::consts::PI * two_h2).ln() - ((n - 1) as f64).ln();
    let mut logits = Vec::with_capacity(n - 1);
    let mut out = Vec::with_capacity(n);
    for (i, x) in probes.iter_rows().enumerate() {
        logits.clear();
        for (j, y) in samples.iter_rows().enumerate() {
            if i != j {
                logits.push(-sq_dist(x, y) / two_h2);
            }
        }
        out.push(log_sum_exp(&logits) + log_norm);
    }
    Ok(out)
}

fn lexicographic(a: &Batch, b: &Batch) -> Ordering {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or_else(|| a.rows().cmp(&b.rows()))
}

fn within_mean(a: &Batch, kernel: &KernelSpec) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += kernel.eval_sq(sq_dist(a.row(i), a.row(j)));
            }
        }
    }
    s / (n * (n - 1)) as f64
}

fn cross_mean(a: &Batch, b: &Batch, f: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let mut s = 0.0;
    for x in a.iter_rows() {
        for y in b.iter_rows() {
            s += f(x, y);
        }
    }
    s / (a.rows() * b.rows()) as f64
}

/// Unbiased squared MMD. Symmetric in its arguments bit for bit.
pub fn mmd(a: &Batch, b: &Batch, kernel: &KernelSpec) -> Result<f64> {
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::InvalidArgument("unbiased MMD needs two samples per set".into()));
    }
    ensure_dim(a.dim(), b.dim())?;
    let (a, b) = if lexicographic(a, b) == Ordering::Greater { (b, a) } else { (a, b) };
    let kxy = cross_mean(a, b, |x, y| kernel.eval_sq(sq_dist(x, y)));
    Ok(within_mean(a, kernel) + within_mean(b, kernel) - 2.0 * kxy)
}

/// `2E‖X−Y‖ − E‖X−X'‖ − E‖Y−Y'‖` with unbiased within-set terms.
pub fn energy_distance(a: &Batch, b: &Batch) -> Result<f64> {
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::InvalidArgument("energy distance needs two samples per set".into()));
    }
    ensure_dim(a.dim(), b.dim())?;
    let (a, b) = if lexicographic(a, b) == Ordering::Greater { (b, a) } else { (a, b) };
    let within = |s: &Batch| {
        let n = s.rows();
        let mut t = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    t += sq_dist(s.row(i), s.row(j)).sqrt();
                }
            }
        }
        t / (n * (n - 1)) as f64
    };
    let cross = cross_mean(a, b, |x, y| sq_dist(x, y).sqrt());
    Ok(2.0 * cross - within(a) - within(b))
}

/// Nearest-center assignment frequencies.
pub fn mode_masses(samples: &Batch, centers: &Batch) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("mode masses of an empty sample".into()));
    }
    ensure_dim(centers.dim(), samples.dim())?;
    let mut counts = vec![0usize; centers.rows()];
    for x in samples.iter_rows() {
        counts[nearest_row(centers, x)] += 1;
    }
    let n = samples.rows() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

pub fn mean_reward(samples: &Batch, reward: &dyn Reward) -> f64 {
    samples.iter_rows().map(|x| reward.value(x)).sum::<f64>() / samples.rows() as f64
}

/// Standard error of the mean reward.
pub fn reward_std_error(samples: &Batch, reward: &dyn Reward) -> f64 {
    let v: Vec<f64> = samples.iter_rows().map(|x| reward.value(x)).collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// One evaluation, written as a JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub seed: u64,
    pub kl_nats: f64,
    pub mean_reward: f64,
    pub mode_masses: Vec<f64>,
    pub mmd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
}

impl MetricsRecord {
    /// KL, mean reward and mode masses of `samples` against `target`.
    pub fn evaluate<R: Reward>(step: u64, seed: u64, samples: &Batch, target: &TiltedTarget<R>) -> Result<Self> {
        Ok(Self {
            step,
            seed,
            kl_nats: kl_to_target(samples, target)?,
            mean_reward: mean_reward(samples, target.reward()),
            mode_masses: mode_masses(samples, target.mixture().centers())?,
            mmd: None,
            energy: None,
        })
    }

    pub fn min_mode_mass(&self) -> f64 {
        self.mode_masses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

//! Conditional extraction on a synthetic continuous-action bandit.
//!
//! States live in `[-1,1]²`. Each state has three action modes on a circle
//! whose rotation depends on the state. The behavior policy is a Gaussian
//! mixture around a state-dependent subset of those modes, and the policy is
//! pulled toward `p_data(a|s)·exp(β·Q(s,a))` by per-state Stein transport.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::generators::NetShape;
use crate::nn::{GradBundle, Mlp, MlpConfig, OptConfig, OptState};
use crate::numeric::{sq_dist, Batch, KernelSpec, RngStream};
use crate::stein::{Bandwidth, FavConfig, GradientMode, RewardOracle, VelocityReport};
use crate::target::Reward;

pub const ACTION_LOW: f64 = -1.0;
pub const ACTION_HIGH: f64 = 1.0;
/// Distance to a covered mode within which an action counts as in support.
pub const SUPPORT_RADIUS: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditTask {
    pub radius: f64,
    pub behavior_std: f64,
    /// `Q(s,a) = −q_scale·min_k ‖a − m_k(s)‖²`
    pub q_scale: f64,
    /// Mode angle offset per unit of `s₁`.
    pub rotation: f64,
}

impl Default for BanditTask {
    fn default() -> Self {
        Self {
            radius: 0.6,
            behavior_std: 0.15,
            q_scale: 10.0,
            rotation: PI / 2.0,
        }
    }
}

pub const N_MODES: usize = 3;

impl BanditTask {
    pub fn modes(&self, s: &[f64]) -> [[f64; 2]; N_MODES] {
        let base = self.rotation * s[0] + 0.25 * s[1];
        let mut m = [[0.0; 2]; N_MODES];
        for (k, mk) in m.iter_mut().enumerate() {
            let a = base + 2.0 * PI * k as f64 / N_MODES as f64;
            *mk = [self.radius * a.cos(), self.radius * a.sin()];
        }
        m
    }

    /// Modes present in the behavior data: 0 and 1 always, 2 when `s₂ > 0`.
    pub fn covered(&self, s: &[f64]) -> Vec<usize> {
        if s[1] > 0.0 {
            vec![0, 1, 2]
        } else {
            vec![0, 1]
        }
    }

    fn nearest_mode(&self, s: &[f64], a: &[f64]) -> (usize, f64) {
        self.modes(s)
            .iter()
            .enumerate()
            .map(|(k, m)| (k, sq_dist(a, m)))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("three modes")
    }

    pub fn q(&self, s: &[f64], a: &[f64]) -> f64 {
        -self.q_scale * self.nearest_mode(s, a).1
    }

    pub fn q_grad(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let (k, _) = self.nearest_mode(s, a);
        let m = self.modes(s)[k];
        vec![-2.0 * self.q_scale * (a[0] - m[0]), -2.0 * self.q_scale * (a[1] - m[1])]
    }

    pub fn in_support(&self, s: &[f64], a: &[f64]) -> bool {
        let m = self.modes(s);
        self.covered(s)
            .into_iter()
            .any(|k| sq_dist(a, &m[k]) <= SUPPORT_RADIUS * SUPPORT_RADIUS)
    }

    pub fn sample_state(&self, rng: &mut RngStream) -> [f64; 2] {
        [2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0]
    }

    pub fn behavior_action(&self, s: &[f64], rng: &mut RngStream) -> [f64; 2] {
        let cov = self.covered(s);
        let m = self.modes(s)[cov[rng.index(cov.len())]];
        [
            clip(m[0] + self.behavior_std * rng.normal()),
            clip(m[1] + self.behavior_std * rng.normal()),
        ]
    }

    /// Mean Q of the behavior policy, estimated from its own draws.
    pub fn behavior_mean_q(&self, n: usize, rng: &mut RngStream) -> f64 {
        let mut total = 0.0;
        for _ in 0..n {
            let s = self.sample_state(rng);
            let a = self.behavior_action(&s, rng);
            total += self.q(&s, &a);
        }
        total / n as f64
    }
}

pub fn clip(a: f64) -> f64 {
    a.clamp(ACTION_LOW, ACTION_HIGH)
}

/// `Q(s, ·)` at a fixed state, as a reward on action space.
pub struct StateQ<'a> {
    pub task: &'a BanditTask,
    pub state: [f64; 2],
}

impl Reward for StateQ<'_> {
    fn value(&self, a: &[f64]) -> f64 {
        self.task.q(&self.state, a)
    }

    fn grad(&self, a: &[f64]) -> Option<Vec<f64>> {
        Some(self.task.q_grad(&self.state, a))
    }

    fn upper_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Offline `(s, a)` pairs with a per-state neighborhood index.
#[derive(Clone, Debug, PartialEq)]
pub struct BanditDataset {
    /// Distinct states, one row each.
    pub states: Batch,
    /// `actions_per_state` consecutive rows per state.
    pub actions: Batch,
    pub actions_per_state: usize,
}

pub fn build_dataset(
    task: &BanditTask,
    n_states: usize,
    actions_per_state: usize,
    rng: &mut RngStream,
) -> Result<BanditDataset> {
    if n_states < 100 {
        return Err(Error::InvalidArgument("bandit dataset needs at least 100 states".into()));
    }
    if actions_per_state == 0 {
        return Err(Error::InvalidArgument("need at least one action per state".into()));
    }
    let mut states = Batch::zeros(n_states, 2);
    let mut actions = Batch::zeros(n_states * actions_per_state, 2);
    for i in 0..n_states {
        let s = task.sample_state(rng);
        states.row_mut(i).copy_from_slice(&s);
        for j in 0..actions_per_state {
            let a = task.behavior_action(&s, rng);
            actions.row_mut(i * actions_per_state + j).copy_from_slice(&a);
        }
    }
    Ok(BanditDataset {
        states,
        actions,
        actions_per_state,
    })
}

impl BanditDataset {
    pub fn n_states(&self) -> usize {
        self.states.rows()
    }

    pub fn actions_of(&self, i: usize) -> Batch {
        let k = self.actions_per_state;
        self.actions.slice_rows(i * k, (i + 1) * k)
    }

    pub fn mean_q(&self, task: &BanditTask) -> f64 {
        let k = self.actions_per_state;
        let total: f64 = (0..self.actions.rows())
            .map(|r| task.q(self.states.row(r / k), self.actions.row(r)))
            .sum();
        total / self.actions.rows() as f64
    }

    /// Actions of the `k` nearest dataset states (the state itself included).
    pub fn neighborhood(&self, i: usize, k: usize) -> Batch {
        let s = self.states.row(i);
        let mut d: Vec<(f64, usize)> = self
            .states
            .iter_rows()
            .enumerate()
            .map(|(j, t)| (sq_dist(s, t), j))
            .collect();
        let k = k.min(d.len());
        d.select_nth_unstable_by(k.saturating_sub(1), |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut idx: Vec<usize> = d[..k].iter().map(|p| p.1).collect();
        idx.sort_unstable();
        let mut out = Batch::zeros(0, 2);
        for j in idx {
            for a in self.actions_of(j).iter_rows() {
                out.push_row(a).expect("2-d rows");
            }
        }
        out
    }

    /// Precomputed neighborhoods for every state.
    pub fn neighborhoods(&self, k: usize) -> Vec<Batch> {
        (0..self.n_states()).map(|i| self.neighborhood(i, k)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "s1,s2,a1,a2")?;
        let k = self.actions_per_state;
        for r in 0..self.actions.rows() {
            let s = self.states.row(r / k);
            let a = self.actions.row(r);
            writeln!(w, "{},{},{},{}", s[0], s[1], a[0], a[1])?;
        }
        Ok(())
    }

    /// Reads rows written by [`BanditDataset::write_csv`]; consecutive rows
    /// sharing a state form one group.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut states = Batch::zeros(0, 2);
        let mut actions = Batch::zeros(0, 2);
        let mut per_state: Option<usize> = None;
        let mut run = 0;
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            if ln == 0 || line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", ln + 1)))?;
            if v.len() != 4 {
                return Err(Error::Shape(format!("line {}: expected 4 columns", ln + 1)));
            }
            let new_state = states.rows() == 0 || states.row(states.rows() - 1) != &v[..2];
            if new_state {
                if states.rows() > 0 {
                    check_group(&mut per_state, run)?;
                }
                states.push_row(&v[..2])?;
                run = 0;
            }
            actions.push_row(&v[2..])?;
            run += 1;
        }
        if states.rows() == 0 {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        check_group(&mut per_state, run)?;
        Ok(Self {
            states,
            actions,
            actions_per_state: per_state.expect("one group"),
        })
    }
}

fn check_group(per_state: &mut Option<usize>, run: usize) -> Result<()> {
    match per_state {
        None => {
            *per_state = Some(run);
            Ok(())
        }
        Some(k) if *k == run => Ok(()),
        Some(k) => Err(Error::Shape(format!("state groups of {k} and {run} actions"))),
    }
}

/// `π(a | s) = clip(f([s; z]))`, `z ~ N(0, I₂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalGenerator {
    pub net: Mlp,
}

impl ConditionalGenerator {
    pub fn new(shape: NetShape, rng: &mut RngStream) -> Self {
        Self {
            net: Mlp::init(MlpConfig::new(4, 2, shape.hidden_width, shape.hidden_layers), rng),
        }
    }

    fn inputs(states: &Batch, z: &Batch) -> Result<Batch> {
        states.hstack(z)
    }

    /// Clipped actions for row-aligned states and noise.
    pub fn act_with(&self, states: &Batch, z: &Batch) -> Result<Batch> {
        Ok(self.net.forward_batch(&Self::inputs(states, z)?)?.map(clip))
    }

    pub fn act(&self, states: &Batch, rng: &mut RngStream) -> Result<Batch> {
        let z = rng.normal_batch(states.rows(), 2);
        self.act_with(states, &z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub beta: f64,
    pub tau: f64,
    /// Replace `tau` with Scott's rule on the dataset actions.
    pub adaptive_bandwidth: bool,
    pub n_particles: usize,
    pub neighbors: usize,
    pub states_per_batch: usize,
    pub steps: u64,
    pub lr: f64,
    pub shape: NetShape,
    pub gradient: GradientMode,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            tau: 0.02,
            adaptive_bandwidth: false,
            n_particles: 8,
            neighbors: 32,
            states_per_batch: 64,
            steps: 2000,
            lr: 3e-4,
            shape: NetShape {
                hidden_width: 64,
                hidden_layers: 3,
            },
            gradient: GradientMode::Analytic,
        }
    }
}

impl PolicyConfig {
    /// Kernel from the fixed `tau`, or Scott's rule with `σ̂` from the full
    /// action dataset and `n` the number of states per batch.
    pub fn kernel(&self, dataset: &BanditDataset) -> Result<KernelSpec> {
        if self.adaptive_bandwidth {
            let sigma_hat = crate::stein::data_scale(&dataset.actions);
            Bandwidth::scott(sigma_hat, self.states_per_batch, 2)?.kernel()
        } else {
            KernelSpec::gaussian(self.tau)
        }
    }
}

/// One conditional amortization step over a batch of dataset states.
#[derive(Clone, Debug)]
pub struct PolicyStep {
    pub loss: f64,
    pub grads: GradBundle,
    /// States whose reference neighborhood was empty.
    pub skipped: usize,
    pub mean_velocity: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn fav_policy_step(
    policy: &ConditionalGenerator,
    task: &BanditTask,
    state_idx: &[usize],
    dataset: &BanditDataset,
    refs: &[Batch],
    cfg: &FavConfig,
    gradient: GradientMode,
    rng: &mut RngStream,
) -> Result<PolicyStep> {
    let n = cfg.n_gen;
    let rows = state_idx.len() * n;
    let mut states = Batch::zeros(rows, 2);
    for (g, &i) in state_idx.iter().enumerate() {
        for p in 0..n {
            states.row_mut(g * n + p).copy_from_slice(dataset.states.row(i));
        }
    }
    let z = rng.normal_batch(rows, 2);
    let (raw, cache) = policy.net.forward_cached(&ConditionalGenerator::inputs(&states, &z)?)?;
    let actions = raw.map(clip);
    let mut targets = actions.clone();
    let mut active = vec![true; rows];
    let mut skipped = 0;
    let mut vel_total = 0.0;
    for (g, &i) in state_idx.iter().enumerate() {
        let group = actions.slice_rows(g * n, (g + 1) * n);
        let r = &refs[i];
        if r.is_empty() {
            skipped += 1;
            active[g * n..(g + 1) * n].iter_mut().for_each(|a| *a = false);
            continue;
        }
        let s = dataset.states.row(i);
        let q = StateQ {
            task,
            state: [s[0], s[1]],
        };
        let mut oracle = RewardOracle::new(&q, gradient, RngStream::new(rng.next_u64()))?;
        let report: VelocityReport = crate::stein::stein_velocity_kde(&group, r, &mut oracle, cfg)?;
        vel_total += report.mean_norm();
        for p in 0..n {
            let t = targets.row_mut(g * n + p);
            for (tj, vj) in t.iter_mut().zip(report.velocities.row(p)) {
                *tj += vj;
            }
        }
    }
    let used = active.iter().filter(|a| **a).count();
    let mut loss = 0.0;
    let mut d_out = Batch::zeros(rows, 2);
    if used > 0 {
        let m = used as f64;
        for r in 0..rows {
            if !active[r] {
                continue;
            }
            for j in 0..2 {
                let e = actions.row(r)[j] - targets.row(r)[j];
                loss += e * e;
                // the clamp passes gradient only inside the action box
                let inside = raw.row(r)[j] > ACTION_LOW && raw.row(r)[j] < ACTION_HIGH;
                d_out.row_mut(r)[j] = if inside { 2.0 * e / m } else { 0.0 };
            }
        }
        loss /= m;
    }
    let mut grads = policy.net.zero_grads();
    policy.net.backward(&cache, &d_out, &mut grads)?;
    let groups = (state_idx.len() - skipped).max(1) as f64;
    Ok(PolicyStep {
        loss,
        grads,
        skipped,
        mean_velocity: vel_total / groups,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub mean_q: f64,
    pub in_support: f64,
    /// Fraction of actions nearest to each mode.
    pub mode_histogram: Vec<f64>,
    pub n_eval: usize,
}

pub fn evaluate_actions(task: &BanditTask, states: &Batch, actions: &Batch) -> Result<PolicyMetrics> {
    states.check_same_shape(actions)?;
    ensure_dim(2, states.dim())?;
    let n = states.rows();
    let mut q = 0.0;
    let mut support = 0usize;
    let mut hist = vec![0.0; N_MODES];
    for (s, a) in states.iter_rows().zip(actions.iter_rows()) {
        q += task.q(s, a);
        support += task.in_support(s, a) as usize;
        hist[task.nearest_mode(s, a).0] += 1.0;
    }
    let nf = n as f64;
    Ok(PolicyMetrics {
        mean_q: q / nf,
        in_support: support as f64 / nf,
        mode_histogram: hist.into_iter().map(|h| h / nf).collect(),
        n_eval: n,
    })
}

pub fn evaluate_policy(
    policy: &ConditionalGenerator,
    task: &BanditTask,
    n_eval: usize,
    rng: &mut RngStream,
) -> Result<PolicyMetrics> {
    if n_eval < 1000 {
        return Err(Error::InvalidArgument("policy evaluation needs at least 1000 draws".into()));
    }
    let mut states = Batch::zeros(n_eval, 2);
    for i in 0..n_eval {
        states.row_mut(i).copy_from_slice(&task.sample_state(rng));
    }
    let actions = policy.act(&states, rng)?;
    evaluate_actions(task, &states, &actions)
}

/// Trains a conditional generator from scratch with per-state FAV.
pub struct PolicyTrainer<'a> {
    pub task: &'a BanditTask,
    pub dataset: &'a BanditDataset,
    pub config: PolicyConfig,
    refs: Vec<Batch>,
    fav: FavConfig,
}

impl<'a> PolicyTrainer<'a> {
    pub fn new(task: &'a BanditTask, dataset: &'a BanditDataset, config: PolicyConfig) -> Result<Self> {
        let kernel = config.kernel(dataset)?;
        let mut fav = FavConfig::new(config.beta, kernel, config.n_particles, config.neighbors);
        fav.validate()?;
        if config.states_per_batch == 0 {
            return Err(Error::InvalidArgument("states_per_batch must be positive".into()));
        }
        fav.n_ref = config.neighbors * dataset.actions_per_state;
        let refs = dataset.neighborhoods(config.neighbors);
        Ok(Self {
            task,
            dataset,
            config,
            refs,
            fav,
        })
    }

    pub fn kernel(&self) -> KernelSpec {
        self.fav.kernel
    }

    pub fn train(
        &self,
        policy: &mut ConditionalGenerator,
        rng: &mut RngStream,
        mut on_step: impl FnMut(u64, &PolicyStep, &ConditionalGenerator) -> Result<()>,
    ) -> Result<()> {
        let mut opt = OptState::new(OptConfig::adam(self.config.lr), policy.net.param_count());
        for step in 1..=self.config.steps {
            let idx: Vec<usize> = (0..self.config.states_per_batch)
                .map(|_| rng.index(self.dataset.n_states()))
                .collect();
            let out = fav_policy_step(
                policy,
                self.task,
                &idx,
                self.dataset,
                &self.refs,
                &self.fav,
                self.config.gradient,
                rng,
            )?;
            opt.step(policy.net.params_mut(), &out.grads, None)?;
            on_step(step, &out, policy)?;
        }
        Ok(())
    }
}

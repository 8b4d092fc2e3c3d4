//! One function per CLI verb. Each writes into `config.run.out_dir`.

use std::fs;
use std::path::{Path, PathBuf};

use fav_core::eval::MetricsRecord;
use fav_core::generators::{Generator, Trainer};
use fav_core::nn::Checkpoint;
use fav_core::numeric::{Batch, KernelSpec, RngStream};
use fav_core::policy::{build_dataset, evaluate_actions, ConditionalGenerator, PolicyMetrics, PolicyTrainer};
use fav_core::stein::{
    data_scale, finetune as fav_finetune, finetune_optimizer, stein_velocity_kde, svgd_sample_with, write_velocity_csv,
    Bandwidth, RefKind, RefSource, RewardOracle, ScoreSource,
};
use fav_core::target::TiltedTarget;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ScoreKind};
use crate::error::{CliError, Result};
use crate::manifest::{read_json_lines, read_manifest, JsonLines, RunDir, RunManifest, CHECKPOINT, METRICS, SAMPLES, VELOCITY};
use crate::samples::{read_csv, write_csv};

/// Substream ids under the run seed.
pub mod stream {
    pub const POOL: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const ORACLE: u64 = 5;
    pub const REFS: u64 = 6;
    pub const DATASET: u64 = 7;
    pub const EVAL: u64 = 9;
}

pub const SAMPLE_HEADER: [&str; 2] = ["x", "y"];
pub const POLICY_HEADER: [&str; 4] = ["s1", "s2", "a1", "a2"];

/// A metric record of a generator or particle run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRecord {
    #[serde(flatten)]
    pub metrics: MetricsRecord,
    /// Mean training loss since the previous record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

/// A metric record of a policy run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub step: u64,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: PolicyMetrics,
    pub dataset_mean_q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

fn is_record_step(step: u64, every: u64, last: u64) -> bool {
    step == last || (every > 0 && step % every == 0)
}

/// Running mean of the loss between records.
#[derive(Default)]
struct LossMeter {
    sum: f64,
    count: u64,
}

impl LossMeter {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn take(&mut self) -> Option<f64> {
        let out = (self.count > 0).then(|| self.sum / self.count as f64);
        *self = Self::default();
        out
    }
}

/// Samples and metrics of `g` on a fixed evaluation noise batch.
fn evaluate_generator(
    g: &Generator,
    noise: &Batch,
    step: u64,
    seed: u64,
    target: &TiltedTarget,
) -> Result<(Batch, MetricsRecord)> {
    let x = g.generate(noise)?;
    let m = MetricsRecord::evaluate(step, seed, &x, target)?;
    Ok((x, m))
}

pub fn pretrain(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let mut dir = RunDir::create(config, "pretrain")?;
    let seed = config.run.seed;
    let rng = RngStream::new(seed);
    let target = config.target.build()?;
    let pool = target.mixture().sample(config.pretrain.pool_size, &mut rng.substream(stream::POOL));
    let g = config.generator_spec().build(&mut rng.substream(stream::INIT));
    let noise = g.draw_noise(config.eval.samples, &mut rng.substream(stream::EVAL));
    let mut trainer = Trainer::new(g);
    let steps = config.pretrain.steps;

    let mut metrics = JsonLines::create(dir.file(METRICS))?;
    let (_, m0) = evaluate_generator(&trainer.generator, &noise, 0, seed, &target)?;
    metrics.push(&ToyRecord { metrics: m0, loss: None })?;
    let mut meter = LossMeter::default();
    let mut train_rng = rng.substream(stream::TRAIN);
    for step in 1..=steps {
        let batch = train_rng.choose_rows(&pool, config.pretrain.batch_size);
        meter.add(trainer.step(&batch, &mut train_rng)?);
        if is_record_step(step, config.eval.every, steps) {
            let (_, m) = evaluate_generator(&trainer.generator, &noise, step, seed, &target)?;
            metrics.push(&ToyRecord {
                metrics: m,
                loss: meter.take(),
            })?;
        }
    }
    let (x, _) = evaluate_generator(&trainer.generator, &noise, steps, seed, &target)?;
    write_csv(&dir.file(SAMPLES), &SAMPLE_HEADER, &x)?;
    write_checkpoint(&dir.file(CHECKPOINT), &trainer.generator.to_checkpoint(seed, steps))?;
    dir.record_file("metrics", METRICS);
    dir.record_file("samples", SAMPLES);
    dir.record_file("checkpoint", CHECKPOINT);
    dir.finish(steps)
}

fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    ck.write_to(std::io::BufWriter::new(f))?;
    Ok(())
}

pub fn load_generator(path: &Path) -> Result<Generator> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let ck = Checkpoint::read_from(std::io::BufReader::new(f))?;
    Ok(Generator::from_checkpoint(&ck)?)
}

pub fn finetune(config: &ExperimentConfig, checkpoint: &Path) -> Result<RunManifest> {
    config.validate()?;
    let mut g = load_generator(checkpoint)?;
    if g.kind() != config.generator.kind {
        return Err(CliError::Config(format!(
            "generator.kind is {} but the checkpoint holds a {} model",
            config.generator.kind,
            g.kind()
        )));
    }
    g.set_sample_steps(config.fav.sample_steps)?;
    let mut dir = RunDir::create(config, "finetune")?;
    dir.record_input("checkpoint", checkpoint);
    let seed = config.run.seed;
    let rng = RngStream::new(seed);
    let target = config.target.build()?;
    let refs = match config.fav.refs {
        RefKind::Data => RefSource::Data(target.mixture().clone()),
        RefKind::Pretrained => RefSource::Frozen(g.clone()),
    };
    let mut fav = config.fav.fav_config(config.target.beta)?;
    if config.fav.adaptive_bandwidth {
        // Scott's rule with the data scale of one reference batch and n = n_gen
        let probe = refs.draw(config.fav.n_ref, &mut rng.substream(stream::REFS))?;
        fav.kernel = Bandwidth::scott(data_scale(&probe), config.fav.n_gen, 2)?.kernel()?;
    }
    let mut oracle = RewardOracle::new(target.reward(), config.gradient_mode(), rng.substream(stream::ORACLE))?;
    let noise = g.draw_noise(config.eval.samples, &mut rng.substream(stream::EVAL));
    let steps = config.fav.steps;

    let mut metrics = JsonLines::create(dir.file(METRICS))?;
    let (_, m0) = evaluate_generator(&g, &noise, 0, seed, &target)?;
    metrics.push(&ToyRecord { metrics: m0, loss: None })?;
    let mut meter = LossMeter::default();
    let mut failure = None;
    let mut opt = finetune_optimizer(&g);
    fav_finetune(
        &mut g,
        &mut opt,
        &refs,
        &mut oracle,
        &fav,
        steps,
        &mut rng.substream(stream::TRAIN),
        |log, g| {
            meter.add(log.loss);
            if is_record_step(log.step, config.eval.every, steps) {
                let pushed = evaluate_generator(g, &noise, log.step, seed, &target).and_then(|(_, m)| {
                    metrics.push(&ToyRecord {
                        metrics: m,
                        loss: meter.take(),
                    })
                });
                if let Err(e) = pushed {
                    failure = Some(e);
                    return Err(fav_core::Error::InvalidArgument("metric recording failed".into()));
                }
            }
            Ok(())
        },
    )
    .map_err(|e| failure.take().unwrap_or(CliError::Core(e)))?;

    let (x, _) = evaluate_generator(&g, &noise, steps, seed, &target)?;
    write_csv(&dir.file(SAMPLES), &SAMPLE_HEADER, &x)?;
    write_checkpoint(&dir.file(CHECKPOINT), &g.to_checkpoint(seed, steps))?;
    // velocity field of the final model on one amortization batch
    let particles = x.slice_rows(0, fav.n_gen.min(x.rows()));
    let r = refs.draw(fav.n_ref, &mut rng.substream(stream::REFS))?;
    let report = stein_velocity_kde(&particles, &r, &mut oracle, &fav)?;
    let vpath = dir.file(VELOCITY);
    let vf = fs::File::create(&vpath).map_err(|e| CliError::io(&vpath, e))?;
    write_velocity_csv(std::io::BufWriter::new(vf), &particles, &report)?;
    for (role, name) in [("metrics", METRICS), ("samples", SAMPLES), ("checkpoint", CHECKPOINT), ("velocity", VELOCITY)] {
        dir.record_file(role, name);
    }
    dir.finish(steps)
}

pub fn svgd(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let mut dir = RunDir::create(config, "svgd")?;
    let s = &config.svgd;
    let seed = config.run.seed;
    let rng = RngStream::new(seed);
    let target = config.target.build()?;
    let init = rng.substream(stream::INIT).normal_batch(s.particles, 2).map(|v| s.init_scale * v);
    let refs = target.mixture().sample(s.n_ref, &mut rng.substream(stream::REFS));
    let exact = |x: &[f64]| Ok(target.mixture().score(x));
    let source = match s.score {
        ScoreKind::Exact => ScoreSource::Analytic(&exact),
        ScoreKind::Kde => ScoreSource::Kde(&refs),
    };
    let mut fav = config.fav.fav_config(config.target.beta)?;
    fav.kernel = KernelSpec::gaussian(s.tau)?;
    fav.n_gen = s.particles;
    fav.n_ref = s.n_ref;
    let mut oracle = RewardOracle::new(target.reward(), config.gradient_mode(), rng.substream(stream::ORACLE))?;

    let mut records = vec![MetricsRecord::evaluate(0, seed, &init, &target)];
    let out = svgd_sample_with(&init, &source, &mut oracle, &fav, s.step_size, s.iters, |it, x| {
        let step = it as u64;
        if is_record_step(step, config.eval.every, s.iters as u64) {
            records.push(MetricsRecord::evaluate(step, seed, x, &target));
        }
    })?;
    let mut metrics = JsonLines::create(dir.file(METRICS))?;
    for r in records {
        metrics.push(&ToyRecord { metrics: r?, loss: None })?;
    }
    write_csv(&dir.file(SAMPLES), &SAMPLE_HEADER, &out.particles)?;
    dir.record_file("metrics", METRICS);
    dir.record_file("samples", SAMPLES);
    dir.finish(s.iters as u64)
}

/// Evaluation states and the policy's actions on them.
fn policy_draws(
    pol: &ConditionalGenerator,
    config: &ExperimentConfig,
    rng: &RngStream,
) -> Result<(Batch, Batch)> {
    let mut r = rng.substream(stream::EVAL);
    let n = config.dataset.eval_draws;
    let mut states = Batch::zeros(n, 2);
    for i in 0..n {
        states.row_mut(i).copy_from_slice(&config.bandit.sample_state(&mut r));
    }
    let actions = pol.act(&states, &mut r)?;
    Ok((states, actions))
}

pub fn policy_extract(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let mut dir = RunDir::create(config, "policy-extract")?;
    let seed = config.run.seed;
    let rng = RngStream::new(seed);
    let task = &config.bandit;
    let ds = build_dataset(
        task,
        config.dataset.states,
        config.dataset.actions_per_state,
        &mut rng.substream(stream::DATASET),
    )?;
    let dataset_mean_q = ds.mean_q(task);
    let mut pcfg = config.policy.clone();
    pcfg.gradient = config.gradient_mode();
    let trainer = PolicyTrainer::new(task, &ds, pcfg)?;
    let mut pol = ConditionalGenerator::new(config.policy.shape, &mut rng.substream(stream::INIT));
    let steps = config.policy.steps;

    let record = |pol: &ConditionalGenerator, step: u64, loss: Option<f64>| -> Result<PolicyRecord> {
        let (s, a) = policy_draws(pol, config, &rng)?;
        Ok(PolicyRecord {
            step,
            seed,
            metrics: evaluate_actions(task, &s, &a)?,
            dataset_mean_q,
            loss,
        })
    };
    let mut metrics = JsonLines::create(dir.file(METRICS))?;
    metrics.push(&record(&pol, 0, None)?)?;
    let mut meter = LossMeter::default();
    let mut failure = None;
    trainer
        .train(&mut pol, &mut rng.substream(stream::TRAIN), |step, out, pol| {
            meter.add(out.loss);
            if is_record_step(step, config.eval.every, steps) {
                if let Err(e) = record(pol, step, meter.take()).and_then(|r| metrics.push(&r)) {
                    failure = Some(e);
                    return Err(fav_core::Error::InvalidArgument("metric recording failed".into()));
                }
            }
            Ok(())
        })
        .map_err(|e| failure.take().unwrap_or(CliError::Core(e)))?;

    let (s, a) = policy_draws(&pol, config, &rng)?;
    write_csv(&dir.file(SAMPLES), &POLICY_HEADER, &s.hstack(&a)?)?;
    let ck = Checkpoint {
        kind: "policy".into(),
        seed,
        step: steps,
        meta: serde_json::to_value(&config.policy).expect("policy config serializes"),
        nets: vec![("policy".into(), pol.net.clone())],
    };
    write_checkpoint(&dir.file(CHECKPOINT), &ck)?;
    dir.record_file("metrics", METRICS);
    dir.record_file("samples", SAMPLES);
    dir.record_file("checkpoint", CHECKPOINT);
    dir.finish(steps)
}

/// Metrics recomputed from a run directory next to the recorded ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_dir: PathBuf,
    pub recomputed: serde_json::Value,
    pub recorded: serde_json::Value,
    pub matches: bool,
}

/// Recomputes the final metrics of a run from its manifest and sample dump.
pub fn eval(run_dir: &Path) -> Result<EvalReport> {
    let manifest = read_manifest(run_dir)?;
    let step = manifest
        .final_step
        .ok_or_else(|| CliError::Mismatch(format!("{} did not finish", run_dir.display())))?;
    let samples = run_dir.join(SAMPLES);
    let metrics = run_dir.join(METRICS);
    let (header, batch) = read_csv(&samples)?;
    let (recomputed, recorded) = if manifest.command == "policy-extract" {
        if header != POLICY_HEADER {
            return Err(CliError::parse(&samples, "expected columns s1,s2,a1,a2"));
        }
        let (s, a) = (batch.columns(&[0, 1]), batch.columns(&[2, 3]));
        let m = evaluate_actions(&manifest.config.bandit, &s, &a)?;
        let last: PolicyRecord = last_line(&metrics)?;
        (serde_json::to_value(&m), serde_json::to_value(&last.metrics))
    } else {
        if header != SAMPLE_HEADER {
            return Err(CliError::parse(&samples, "expected columns x,y"));
        }
        let target = manifest.config.target.build()?;
        let m = MetricsRecord::evaluate(step, manifest.seed, &batch, &target)?;
        let last: ToyRecord = last_line(&metrics)?;
        (serde_json::to_value(&m), serde_json::to_value(&last.metrics))
    };
    let (recomputed, recorded) = (recomputed.expect("metrics serialize"), recorded.expect("metrics serialize"));
    Ok(EvalReport {
        run_dir: run_dir.to_path_buf(),
        matches: recomputed == recorded,
        recomputed,
        recorded,
    })
}

fn last_line<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    read_json_lines(path)?
        .pop()
        .ok_or_else(|| CliError::parse(path, "no metric records"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepTarget {
    Finetune,
    Svgd,
    PolicyExtract,
}

/// One line of a sweep summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub tau: f64,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub last: serde_json::Value,
}

/// Runs `what` once per (β, τ, seed) grid point, one after another, each in
/// its own subdirectory. `checkpoint` may contain `{seed}`.
pub fn sweep(config: &ExperimentConfig, what: SweepTarget, checkpoint: Option<&str>) -> Result<Vec<SweepPoint>> {
    config.validate()?;
    let base = config.run.out_dir.clone();
    let taus = if config.sweep.taus.is_empty() {
        vec![match what {
            SweepTarget::Finetune => config.fav.tau,
            SweepTarget::Svgd => config.svgd.tau,
            SweepTarget::PolicyExtract => config.policy.tau,
        }]
    } else {
        config.sweep.taus.clone()
    };
    let betas = if config.sweep.betas.is_empty() {
        vec![match what {
            SweepTarget::PolicyExtract => config.policy.beta,
            _ => config.target.beta,
        }]
    } else {
        config.sweep.betas.clone()
    };
    fs::create_dir_all(&base).map_err(|e| CliError::io(&base, e))?;
    let mut summary = JsonLines::create(base.join("summary.jsonl"))?;
    let mut points = Vec::new();
    for &beta in &betas {
        for &tau in &taus {
            for &seed in &config.sweep.seeds {
                let mut c = config.clone();
                c.run.seed = seed;
                c.run.out_dir = base.join(format!("beta-{beta}_tau-{tau}_seed-{seed}"));
                let metrics = c.run.out_dir.join(METRICS);
                let last = match what {
                    SweepTarget::Finetune => {
                        c.target.beta = beta;
                        c.fav.tau = tau;
                        let template = checkpoint
                            .ok_or_else(|| CliError::Config("sweep finetune needs --checkpoint".into()))?;
                        let ck = PathBuf::from(template.replace("{seed}", &seed.to_string()));
                        finetune(&c, &ck)?;
                        serde_json::to_value(last_line::<ToyRecord>(&metrics)?)
                    }
                    SweepTarget::Svgd => {
                        c.target.beta = beta;
                        c.svgd.tau = tau;
                        svgd(&c)?;
                        serde_json::to_value(last_line::<ToyRecord>(&metrics)?)
                    }
                    SweepTarget::PolicyExtract => {
                        c.policy.beta = beta;
                        c.policy.tau = tau;
                        policy_extract(&c)?;
                        serde_json::to_value(last_line::<PolicyRecord>(&metrics)?)
                    }
                }
                .expect("record serializes");
                let point = SweepPoint {
                    beta,
                    tau,
                    seed,
                    run_dir: c.run.out_dir.clone(),
                    last,
                };
                summary.push(&point)?;
                points.push(point);
            }
        }
    }
    Ok(points)
}

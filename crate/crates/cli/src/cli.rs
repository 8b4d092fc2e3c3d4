//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fav_core::generators::GeneratorKind;

use crate::commands::{self, SweepTarget};
use crate::config::{ExperimentConfig, ZerothOrder};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "fav", version, about = "Reward-tilted alignment of toy few-step generators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Term {
    Prior,
    Reward,
    Repulsive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Vae,
    Drifting,
    Meanflow,
}

impl From<Kind> for GeneratorKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Vae => GeneratorKind::Vae,
            Kind::Drifting => GeneratorKind::Drifting,
            Kind::Meanflow => GeneratorKind::MeanFlow,
        }
    }
}

/// Settings shared by every run command. Flags override the config file.
#[derive(Clone, Debug, Default, Args)]
pub struct RunArgs {
    /// TOML experiment config; defaults are used for missing keys.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training steps (SVGD iterations for `svgd`).
    #[arg(long)]
    pub steps: Option<u64>,
    /// Tilt strength.
    #[arg(long)]
    pub beta: Option<f64>,
    /// RBF kernel width τ = 2σ².
    #[arg(long)]
    pub tau: Option<f64>,
    /// Kernel width from Scott's rule.
    #[arg(long)]
    pub adaptive_bandwidth: bool,
    /// Switch off a velocity term; repeatable.
    #[arg(long, value_enum)]
    pub ablate: Vec<Term>,
    /// Two-point reward gradient estimate, given as `eta,K`.
    #[arg(long, value_name = "ETA,K", value_parser = parse_zeroth_order)]
    pub zeroth_order: Option<ZerothOrder>,
    /// Pre-train for 1M steps at batch 8192.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
}

fn parse_zeroth_order(s: &str) -> std::result::Result<ZerothOrder, String> {
    let (eta, k) = s.split_once(',').ok_or("expected ETA,K")?;
    let eta: f64 = eta.trim().parse().map_err(|_| format!("bad eta {eta:?}"))?;
    let samples: usize = k.trim().parse().map_err(|_| format!("bad K {k:?}"))?;
    if !(eta > 0.0) || samples == 0 {
        return Err("need eta > 0 and K ≥ 1".into());
    }
    Ok(ZerothOrder { eta, samples })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Verb {
    Pretrain,
    Finetune,
    Svgd,
    Policy,
}

impl RunArgs {
    /// Loads the config file, if any, and applies the flags for `verb`.
    fn resolve(&self, verb: Verb) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if self.paper_scale {
            c.apply_paper_scale();
        }
        if let Some(o) = &self.out {
            c.run.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            c.run.seed = s;
        }
        if let Some(k) = self.kind {
            c.generator.kind = k.into();
        }
        if let Some(z) = self.zeroth_order {
            c.fav.zeroth_order = Some(z);
        }
        for t in &self.ablate {
            match t {
                Term::Prior => c.fav.terms.prior = false,
                Term::Reward => c.fav.terms.reward = false,
                Term::Repulsive => c.fav.terms.repulsive = false,
            }
        }
        match verb {
            Verb::Pretrain => {
                if let Some(s) = self.steps {
                    c.pretrain.steps = s;
                }
            }
            Verb::Finetune | Verb::Svgd => {
                if let Some(b) = self.beta {
                    c.target.beta = b;
                }
                if verb == Verb::Finetune {
                    if let Some(s) = self.steps {
                        c.fav.steps = s;
                    }
                    if let Some(t) = self.tau {
                        c.fav.tau = t;
                    }
                    c.fav.adaptive_bandwidth |= self.adaptive_bandwidth;
                } else {
                    if let Some(s) = self.steps {
                        c.svgd.iters = s as usize;
                    }
                    if let Some(t) = self.tau {
                        c.svgd.tau = t;
                    }
                }
            }
            Verb::Policy => {
                if let Some(b) = self.beta {
                    c.policy.beta = b;
                }
                if let Some(s) = self.steps {
                    c.policy.steps = s;
                }
                if let Some(t) = self.tau {
                    c.policy.tau = t;
                }
                c.policy.adaptive_bandwidth |= self.adaptive_bandwidth;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| format!("bad list entry {v:?}")))
        .collect()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-train a generator on the mixture.
    Pretrain(RunArgs),
    /// Align a pretrained generator with amortized Stein transport.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the particle sampler toward the tilted target.
    Svgd(RunArgs),
    /// Extract a policy on the synthetic bandit.
    PolicyExtract(RunArgs),
    /// Recompute the final metrics of a run directory.
    Eval { run_dir: PathBuf },
    /// Sequential runs over a β × τ × seed grid.
    Sweep {
        #[arg(value_enum)]
        what: SweepWhat,
        /// Checkpoint for fine-tuning; `{seed}` is replaced per run.
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long, value_parser = parse_list::<f64>)]
        betas: Option<Vec<f64>>,
        #[arg(long, value_parser = parse_list::<f64>)]
        taus: Option<Vec<f64>>,
        #[arg(long, value_parser = parse_list::<u64>)]
        seeds: Option<Vec<u64>>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Render SVG figures for a run directory.
    Plot { run_dir: PathBuf },
    /// Print or check configuration.
    Config {
        /// Print every key with its default value.
        #[arg(long)]
        dump_defaults: bool,
        /// Validate a config file and print it fully resolved.
        #[arg(long)]
        check: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepWhat {
    Finetune,
    Svgd,
    PolicyExtract,
}

/// Runs a parsed command; returns what should be printed on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Pretrain(a) => Ok(json(&commands::pretrain(&a.resolve(Verb::Pretrain)?)?)),
        Command::Finetune { checkpoint, run } => Ok(json(&commands::finetune(&run.resolve(Verb::Finetune)?, &checkpoint)?)),
        Command::Svgd(a) => Ok(json(&commands::svgd(&a.resolve(Verb::Svgd)?)?)),
        Command::PolicyExtract(a) => Ok(json(&commands::policy_extract(&a.resolve(Verb::Policy)?)?)),
        Command::Eval { run_dir } => {
            let r = commands::eval(&run_dir)?;
            if !r.matches {
                return Err(CliError::Mismatch(format!(
                    "recomputed metrics differ from the record in {}:\n{}",
                    run_dir.display(),
                    json(&r)
                )));
            }
            Ok(json(&r))
        }
        Command::Sweep {
            what,
            checkpoint,
            betas,
            taus,
            seeds,
            run,
        } => {
            let (verb, target) = match what {
                SweepWhat::Finetune => (Verb::Finetune, SweepTarget::Finetune),
                SweepWhat::Svgd => (Verb::Svgd, SweepTarget::Svgd),
                SweepWhat::PolicyExtract => (Verb::Policy, SweepTarget::PolicyExtract),
            };
            let mut c = run.resolve(verb)?;
            if let Some(b) = betas {
                c.sweep.betas = b;
            }
            if let Some(t) = taus {
                c.sweep.taus = t;
            }
            if let Some(s) = seeds {
                c.sweep.seeds = s;
            }
            let points = commands::sweep(&c, target, checkpoint.as_deref())?;
            Ok(json(&points))
        }
        Command::Plot { run_dir } => {
            let files = crate::plot::plot(&run_dir)?;
            Ok(files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n"))
        }
        Command::Config { dump_defaults, check } => match (dump_defaults, check) {
            (true, None) => Ok(ExperimentConfig::default().to_toml()),
            (false, Some(p)) => Ok(ExperimentConfig::load(&p)?.to_toml()),
            _ => Err(CliError::Config("pass exactly one of --dump-defaults or --check <file>".into())),
        },
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes")
}

//! Run directories and their manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.jsonl";
pub const SAMPLES: &str = "samples.csv";
pub const CHECKPOINT: &str = "model.ckpt";
pub const VELOCITY: &str = "velocity.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub version: String,
    pub status: RunStatus,
    pub started_unix_secs: u64,
    #[serde(default)]
    pub wall_clock_secs: Option<f64>,
    /// Step of the last metric record.
    #[serde(default)]
    pub final_step: Option<u64>,
    /// Output files relative to the run directory, by role.
    pub files: BTreeMap<String, String>,
    /// Input files, by role.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// Conventions the run depends on that are not config keys.
    pub conventions: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

fn conventions() -> BTreeMap<String, String> {
    [
        ("weight_init", "fan-in uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases"),
        ("meanflow_sampler", "uniform grid t_k = 1 - k/steps, x <- x - dt * u([x, t_k, dt])"),
        ("kl_estimator", "leave-one-out KDE on jittered probes vs quadrature of the h-smoothed target, h by Scott's rule"),
        ("mode_assignment", "nearest mixture center"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// An output directory with a manifest that is written at start and
/// finalized at the end.
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
    started: Instant,
}

impl RunDir {
    pub fn create(config: &ExperimentConfig, command: &str) -> Result<Self> {
        let path = config.run.out_dir.clone();
        fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        let started_unix_secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = RunManifest {
            command: command.to_string(),
            seed: config.run.seed,
            version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            status: RunStatus::Running,
            started_unix_secs,
            wall_clock_secs: None,
            final_step: None,
            files: BTreeMap::new(),
            inputs: BTreeMap::new(),
            conventions: conventions(),
            config: config.clone(),
        };
        let dir = Self {
            path,
            manifest,
            started: Instant::now(),
        };
        dir.save()?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn record_file(&mut self, role: &str, name: &str) {
        self.manifest.files.insert(role.to_string(), name.to_string());
    }

    pub fn record_input(&mut self, role: &str, path: &Path) {
        self.manifest.inputs.insert(role.to_string(), path.display().to_string());
    }

    fn save(&self) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.file(MANIFEST), json.as_bytes())
    }

    pub fn finish(mut self, final_step: u64) -> Result<RunManifest> {
        self.manifest.status = RunStatus::Complete;
        self.manifest.final_step = Some(final_step);
        self.manifest.wall_clock_secs = Some(self.started.elapsed().as_secs_f64());
        self.save()?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest> {
    let path = run_dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(&path, e.to_string()))
}

/// Appends JSON lines to a metrics file, created empty on open.
pub struct JsonLines {
    path: PathBuf,
    out: std::io::BufWriter<fs::File>,
}

impl JsonLines {
    pub fn create(path: PathBuf) -> Result<Self> {
        let f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Self {
            path,
            out: std::io::BufWriter::new(f),
        })
    }

    pub fn push<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.out, "{line}").map_err(|e| CliError::io(&self.path, e))?;
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn read_json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::parse(path, format!("line {}: {e}", i + 1))))
        .collect()
}

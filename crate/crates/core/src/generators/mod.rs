//! Few-step toy generators: VAE, drifting model and MeanFlow.
//!
//! Every generator exposes the same differentiable sample path
//! ([`Generator::generate_taped`] / [`Generator::backward_sample`]) so the
//! amortized fine-tuning loop can treat them uniformly.

mod drifting;
mod meanflow;
mod vae;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use drifting::{drifting_field, drifting_field_excluding, DriftStep, DriftValue, DriftingConfig, DriftingModel, DRIFT_NORMALIZER_FLOOR};
pub use meanflow::{FlowTape, MeanFlowConfig, MeanFlowLoss, MeanFlowModel, MeanFlowTargets, MEANFLOW_STEPS};
pub use vae::{VaeConfig, VaeLoss, VaeModel};

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, ForwardCache, GradBundle, OptConfig, OptState};
use crate::numeric::{Batch, RngStream};

/// Hidden-layer geometry shared by every network of a generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetShape {
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            hidden_width: 256,
            hidden_layers: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Vae,
    Drifting,
    MeanFlow,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 3] = [GeneratorKind::Vae, GeneratorKind::Drifting, GeneratorKind::MeanFlow];

    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorKind::Vae => "vae",
            GeneratorKind::Drifting => "drifting",
            GeneratorKind::MeanFlow => "meanflow",
        }
    }

    /// Pre-training optimizer: Adam 1e-3 for VAE/drifting, AdamW(0.9, 0.95) 3e-4 for MeanFlow.
    pub fn default_optimizer(self) -> OptConfig {
        match self {
            GeneratorKind::Vae | GeneratorKind::Drifting => OptConfig::adam(1e-3),
            GeneratorKind::MeanFlow => OptConfig::adamw(3e-4, 0.9, 0.95, 0.0),
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(GeneratorKind::Vae),
            "drifting" => Ok(GeneratorKind::Drifting),
            "meanflow" => Ok(GeneratorKind::MeanFlow),
            other => Err(Error::InvalidArgument(format!("unknown generator kind {other:?}"))),
        }
    }
}

/// `<kind>-<seed>-<step>.ckpt`
pub fn checkpoint_file_name(kind: GeneratorKind, seed: u64, step: u64) -> String {
    format!("{kind}-{seed}-{step}.ckpt")
}

/// Everything needed to build a freshly initialized generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    #[serde(default)]
    pub shape: NetShape,
    #[serde(default)]
    pub vae: VaeConfig,
    #[serde(default)]
    pub drifting: DriftingConfig,
    #[serde(default)]
    pub meanflow: MeanFlowConfig,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, shape: NetShape) -> Self {
        Self {
            kind,
            shape,
            vae: VaeConfig::default(),
            drifting: DriftingConfig::default(),
            meanflow: MeanFlowConfig::default(),
        }
    }

    pub fn build(&self, rng: &mut RngStream) -> Generator {
        match self.kind {
            GeneratorKind::Vae => Generator::Vae(VaeModel::new(self.vae, self.shape, rng)),
            GeneratorKind::Drifting => Generator::Drifting(DriftingModel::new(self.drifting, self.shape, rng)),
            GeneratorKind::MeanFlow => Generator::MeanFlow(MeanFlowModel::new(self.meanflow, self.shape, rng)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    Vae(VaeModel),
    Drifting(DriftingModel),
    MeanFlow(MeanFlowModel),
}

/// Intermediate values of a sample, kept for the reverse pass.
#[derive(Clone, Debug)]
pub enum SampleTape {
    Net(ForwardCache),
    Flow(FlowTape),
}

impl Generator {
    pub fn kind(&self) -> GeneratorKind {
        match self {
            Generator::Vae(_) => GeneratorKind::Vae,
            Generator::Drifting(_) => GeneratorKind::Drifting,
            Generator::MeanFlow(_) => GeneratorKind::MeanFlow,
        }
    }

    /// Dimension of the standard-normal input noise.
    pub fn noise_dim(&self) -> usize {
        match self {
            Generator::Vae(m) => m.config.latent_dim,
            Generator::Drifting(m) => m.config.latent_dim,
            Generator::MeanFlow(_) => 2,
        }
    }

    /// Sampler steps; always 1 except for MeanFlow.
    pub fn sample_steps(&self) -> usize {
        match self {
            Generator::MeanFlow(m) => m.config.sample_steps,
            _ => 1,
        }
    }

    pub fn set_sample_steps(&mut self, steps: usize) -> Result<()> {
        match self {
            Generator::MeanFlow(m) => {
                if !MEANFLOW_STEPS.contains(&steps) {
                    return Err(Error::Unsupported(format!("meanflow cannot sample with {steps} steps")));
                }
                m.config.sample_steps = steps;
                Ok(())
            }
            _ if steps == 1 => Ok(()),
            _ => Err(Error::Unsupported(format!("{} is a one-step generator", self.kind()))),
        }
    }

    pub fn draw_noise(&self, n: usize, rng: &mut RngStream) -> Batch {
        rng.normal_batch(n, self.noise_dim())
    }

    pub fn generate(&self, noise: &Batch) -> Result<Batch> {
        match self {
            Generator::Vae(m) => m.decode(noise),
            Generator::Drifting(m) => m.net.forward_batch(noise),
            Generator::MeanFlow(m) => m.sample_from(noise, m.config.sample_steps),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<Batch> {
        let noise = self.draw_noise(n, rng);
        self.generate(&noise)
    }

    pub fn generate_taped(&self, noise: &Batch) -> Result<(Batch, SampleTape)> {
        match self {
            Generator::Vae(m) => {
                let (x, c) = m.decode_cached(noise)?;
                Ok((x, SampleTape::Net(c)))
            }
            Generator::Drifting(m) => {
                let (x, c) = m.net.forward_cached(noise)?;
                Ok((x, SampleTape::Net(c)))
            }
            Generator::MeanFlow(m) => {
                let (x, t) = m.sample_taped(noise, m.config.sample_steps)?;
                Ok((x, SampleTape::Flow(t)))
            }
        }
    }

    /// Gradient of a loss with upstream `d_out = ∂L/∂x` with respect to the
    /// sampler parameters. Gradients flow through every MeanFlow jump.
    pub fn backward_sample(&self, tape: &SampleTape, d_out: &Batch) -> Result<GradBundle> {
        match (self, tape) {
            (Generator::Vae(m), SampleTape::Net(c)) => {
                let mut g = m.decoder.zero_grads();
                m.decoder.backward(c, d_out, &mut g)?;
                Ok(g)
            }
            (Generator::Drifting(m), SampleTape::Net(c)) => {
                let mut g = m.net.zero_grads();
                m.net.backward(c, d_out, &mut g)?;
                Ok(g)
            }
            (Generator::MeanFlow(m), SampleTape::Flow(t)) => m.backward_taped(t, d_out),
            _ => Err(Error::InvalidArgument("tape does not belong to this generator".into())),
        }
    }

    /// Parameters on the sample path (the VAE encoder is excluded).
    pub fn sampler_params(&self) -> &[f64] {
        match self {
            Generator::Vae(m) => m.decoder.params(),
            Generator::Drifting(m) => m.net.params(),
            Generator::MeanFlow(m) => m.net.params(),
        }
    }

    pub fn sampler_params_mut(&mut self) -> &mut [f64] {
        match self {
            Generator::Vae(m) => m.decoder.params_mut(),
            Generator::Drifting(m) => m.net.params_mut(),
            Generator::MeanFlow(m) => m.net.params_mut(),
        }
    }

    /// Gradient-norm clip applied during pre-training and inherited by fine-tuning.
    pub fn grad_clip(&self) -> Option<f64> {
        match self {
            Generator::MeanFlow(m) => Some(m.config.grad_clip),
            _ => None,
        }
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64) -> Checkpoint {
        let (meta, nets) = match self {
            Generator::Vae(m) => (
                serde_json::to_value(m.config).expect("plain config"),
                vec![("encoder".to_string(), m.encoder.clone()), ("decoder".to_string(), m.decoder.clone())],
            ),
            Generator::Drifting(m) => (
                serde_json::to_value(m.config).expect("plain config"),
                vec![("net".to_string(), m.net.clone())],
            ),
            Generator::MeanFlow(m) => (
                serde_json::to_value(m.config).expect("plain config"),
                vec![("net".to_string(), m.net.clone())],
            ),
        };
        Checkpoint {
            kind: self.kind().as_str().to_string(),
            seed,
            step,
            meta,
            nets,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: GeneratorKind = ck.kind.parse()?;
        let meta = |e: serde_json::Error| Error::Checkpoint(format!("bad {kind} settings: {e}"));
        Ok(match kind {
            GeneratorKind::Vae => {
                let config: VaeConfig = serde_json::from_value(ck.meta.clone()).map_err(meta)?;
                Generator::Vae(VaeModel::from_nets(
                    config,
                    ck.net("encoder")?.clone(),
                    ck.net("decoder")?.clone(),
                )?)
            }
            GeneratorKind::Drifting => Generator::Drifting(DriftingModel {
                config: serde_json::from_value(ck.meta.clone()).map_err(meta)?,
                net: ck.net("net")?.clone(),
            }),
            GeneratorKind::MeanFlow => Generator::MeanFlow(MeanFlowModel {
                config: serde_json::from_value(ck.meta.clone()).map_err(meta)?,
                net: ck.net("net")?.clone(),
            }),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub pool_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            batch_size: 1024,
            pool_size: 500_000,
        }
    }
}

impl PretrainConfig {
    pub fn paper_scale() -> Self {
        Self {
            steps: 1_000_000,
            batch_size: 8192,
            pool_size: 500_000,
        }
    }
}

/// A generator together with its pre-training optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub generator: Generator,
    opts: Vec<OptState>,
    step: u64,
}

impl Trainer {
    pub fn new(generator: Generator) -> Self {
        let cfg = generator.kind().default_optimizer();
        let opts = match &generator {
            Generator::Vae(m) => vec![
                OptState::new(cfg, m.encoder.param_count()),
                OptState::new(cfg, m.decoder.param_count()),
            ],
            Generator::Drifting(m) => vec![OptState::new(cfg, m.net.param_count())],
            Generator::MeanFlow(m) => vec![OptState::new(cfg, m.net.param_count())],
        };
        Self { generator, opts, step: 0 }
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// One pre-training update on a data mini-batch; returns the loss.
    pub fn step(&mut self, data: &Batch, rng: &mut RngStream) -> Result<f64> {
        let n = data.rows();
        let loss = match &mut self.generator {
            Generator::Vae(m) => {
                let eps = rng.normal_batch(n, m.config.latent_dim);
                let out = m.loss_grad(data, &eps)?;
                self.opts[0].step(m.encoder.params_mut(), &out.encoder_grads, None)?;
                self.opts[1].step(m.decoder.params_mut(), &out.decoder_grads, None)?;
                out.loss
            }
            Generator::Drifting(m) => {
                let eps = rng.normal_batch(n, m.config.latent_dim);
                let out = m.loss_grad(data, &eps)?;
                self.opts[0].step(m.net.params_mut(), &out.grads, None)?;
                out.loss
            }
            Generator::MeanFlow(m) => {
                let x1 = rng.normal_batch(n, 2);
                let times: Vec<(f64, f64)> = (0..n).map(|_| m.sample_times(rng)).collect();
                let out = m.loss_grad(data, &x1, &times)?;
                let clip = Some(m.config.grad_clip);
                self.opts[0].step(m.net.params_mut(), &out.grads, clip)?;
                out.loss
            }
        };
        self.step += 1;
        Ok(loss)
    }

    /// Runs `steps` updates on mini-batches drawn with replacement from `pool`,
    /// calling `on_step(step, loss)` after each.
    pub fn run(
        &mut self,
        pool: &Batch,
        steps: u64,
        batch_size: usize,
        rng: &mut RngStream,
        mut on_step: impl FnMut(u64, f64),
    ) -> Result<()> {
        for _ in 0..steps {
            let batch = rng.choose_rows(pool, batch_size);
            let loss = self.step(&batch, rng)?;
            on_step(self.step, loss);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_names() {
        assert_eq!(checkpoint_file_name(GeneratorKind::MeanFlow, 3, 100), "meanflow-3-100.ckpt");
        assert_eq!("drifting".parse::<GeneratorKind>().unwrap(), GeneratorKind::Drifting);
        assert!("gan".parse::<GeneratorKind>().is_err());
    }

    #[test]
    fn checkpoint_round_trip_for_every_kind() {
        let shape = NetShape {
            hidden_width: 8,
            hidden_layers: 2,
        };
        for kind in GeneratorKind::ALL {
            let g = GeneratorSpec::new(kind, shape).build(&mut RngStream::new(4));
            let mut buf = Vec::new();
            g.to_checkpoint(4, 0).write_to(&mut buf).unwrap();
            let back = Generator::from_checkpoint(&Checkpoint::read_from(buf.as_slice()).unwrap()).unwrap();
            assert_eq!(back, g);
        }
    }

    #[test]
    fn constant_velocity_meanflow_shifts_noise() {
        let mut m = MeanFlowModel::new(MeanFlowConfig::default(), NetShape::default(), &mut RngStream::new(0));
        m.net = crate::nn::Mlp::zeros(crate::nn::MlpConfig::linear(4, 2));
        m.net.bias_mut(0).copy_from_slice(&[1.0, -2.0]);
        let g = Generator::MeanFlow(m);
        let noise = Batch::from_rows(&[[0.0, 0.0], [3.0, 1.0]]).unwrap();
        let x = g.generate(&noise).unwrap();
        assert_eq!(x, Batch::from_rows(&[[-1.0, 2.0], [2.0, 3.0]]).unwrap());
    }

    #[test]
    fn one_step_generators_reject_multi_step() {
        let shape = NetShape {
            hidden_width: 4,
            hidden_layers: 1,
        };
        let mut g = GeneratorSpec::new(GeneratorKind::Vae, shape).build(&mut RngStream::new(0));
        assert!(g.set_sample_steps(2).is_err());
        let mut f = GeneratorSpec::new(GeneratorKind::MeanFlow, shape).build(&mut RngStream::new(0));
        f.set_sample_steps(4).unwrap();
        assert!(f.set_sample_steps(5).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::NetShape;
use crate::error::{ensure_dim, Error, Result};
use crate::nn::{ForwardCache, GradBundle, Mlp, MlpConfig};
use crate::numeric::{Batch, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub beta_kl: f64,
    /// logvar is hard-clamped to `[-logvar_clamp, logvar_clamp]`.
    pub logvar_clamp: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            beta_kl: 0.02,
            logvar_clamp: 8.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Loss and parameter gradients for one VAE mini-batch.
#[derive(Clone, Debug)]
pub struct VaeLoss {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub encoder_grads: GradBundle,
    pub decoder_grads: GradBundle,
}

impl VaeModel {
    pub fn new(config: VaeConfig, shape: NetShape, rng: &mut RngStream) -> Self {
        let d = config.latent_dim;
        let encoder = Mlp::init(MlpConfig::new(2, 2 * d, shape.hidden_width, shape.hidden_layers), rng);
        let decoder = Mlp::init(MlpConfig::new(d, 2, shape.hidden_width, shape.hidden_layers), rng);
        Self { config, encoder, decoder }
    }

    pub fn from_nets(config: VaeConfig, encoder: Mlp, decoder: Mlp) -> Result<Self> {
        let d = config.latent_dim;
        ensure_dim(2 * d, encoder.config().output_dim)?;
        ensure_dim(d, decoder.config().input_dim)?;
        ensure_dim(2, decoder.config().output_dim)?;
        Ok(Self { config, encoder, decoder })
    }

    pub fn clamp_logvar(&self, lv: f64) -> f64 {
        lv.clamp(-self.config.logvar_clamp, self.config.logvar_clamp)
    }

    /// Negative ELBO averaged over rows, with explicit reparameterization noise.
    ///
    /// Per row: `½‖x − x̂‖² + β·½Σ(μ² + e^{lv} − 1 − lv)`, `z = μ + e^{lv/2}·ε`.
    pub fn loss_grad(&self, x: &Batch, eps: &Batch) -> Result<VaeLoss> {
        let d = self.config.latent_dim;
        ensure_dim(2, x.dim())?;
        ensure_dim(d, eps.dim())?;
        if x.rows() != eps.rows() {
            return Err(Error::Shape("data and noise rows differ".into()));
        }
        let n = x.rows();
        let nf = n as f64;
        let beta = self.config.beta_kl;
        let (enc_out, enc_cache) = self.encoder.forward_cached(x)?;
        let mut z = Batch::zeros(n, d);
        let mut kl = 0.0;
        for i in 0..n {
            let row = enc_out.row(i);
            let zr = z.row_mut(i);
            for j in 0..d {
                let mu = row[j];
                let lv = self.clamp_logvar(row[d + j]);
                zr[j] = mu + (0.5 * lv).exp() * eps.row(i)[j];
                kl += 0.5 * (mu * mu + lv.exp() - 1.0 - lv);
            }
        }
        let (x_hat, dec_cache) = self.decoder.forward_cached(&z)?;
        let mut recon = 0.0;
        let mut d_xhat = Batch::zeros(n, 2);
        for i in 0..n {
            for j in 0..2 {
                let e = x_hat.row(i)[j] - x.row(i)[j];
                recon += 0.5 * e * e;
                d_xhat.row_mut(i)[j] = e / nf;
            }
        }
        let loss = (recon + beta * kl) / nf;
        if !loss.is_finite() {
            return Err(Error::NumericDomain(format!("vae loss is {loss} (recon {recon}, kl {kl})")));
        }
        let mut decoder_grads = self.decoder.zero_grads();
        let d_z = self.decoder.backward(&dec_cache, &d_xhat, &mut decoder_grads)?;
        let mut d_enc = Batch::zeros(n, 2 * d);
        for i in 0..n {
            let row = enc_out.row(i);
            let dz = d_z.row(i);
            let de = d_enc.row_mut(i);
            for j in 0..d {
                let mu = row[j];
                let raw = row[d + j];
                de[j] = dz[j] + beta * mu / nf;
                if raw.abs() <= self.config.logvar_clamp {
                    let s = (0.5 * raw).exp();
                    de[d + j] = dz[j] * eps.row(i)[j] * 0.5 * s + beta * 0.5 * (raw.exp() - 1.0) / nf;
                }
            }
        }
        let mut encoder_grads = self.encoder.zero_grads();
        self.encoder.backward(&enc_cache, &d_enc, &mut encoder_grads)?;
        Ok(VaeLoss {
            loss,
            recon: recon / nf,
            kl: kl / nf,
            encoder_grads,
            decoder_grads,
        })
    }

    pub fn decode(&self, z: &Batch) -> Result<Batch> {
        self.decoder.forward_batch(z)
    }

    pub(crate) fn decode_cached(&self, z: &Batch) -> Result<(Batch, ForwardCache)> {
        self.decoder.forward_cached(z)
    }
}

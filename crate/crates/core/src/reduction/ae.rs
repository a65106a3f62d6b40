use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, usage, Error, Result};
use crate::nn::{Adam, Mlp, MlpGrads};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeParams {
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub update_interval: usize,
    pub batch_size: usize,
}

impl Default for AeParams {
    fn default() -> Self {
        Self { lr: 1e-4, hidden: vec![32, 32], update_interval: 20, batch_size: 32 }
    }
}

/// Online autoencoder: the encoder output is the reduced reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeReducer {
    encoder: Mlp,
    decoder: Mlp,
    adam: Adam,
    params: AeParams,
}

impl AeReducer {
    pub fn new<R: Rng + ?Sized>(k: usize, m: usize, params: AeParams, rng: &mut R) -> Result<Self> {
        if m < 1 || m >= k {
            return Err(usage(format!("reduction needs K > m >= 1, got K={k}, m={m}")));
        }
        let mut widths = vec![k];
        widths.extend(&params.hidden);
        widths.push(m);
        let encoder = Mlp::new(&widths, 0.0, rng)?;
        widths.reverse();
        let decoder = Mlp::new(&widths, 0.0, rng)?;
        Ok(Self { encoder, decoder, adam: Adam::new(params.lr), params })
    }

    pub fn source_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn target_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn params(&self) -> &AeParams {
        &self.params
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut Mlp {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp {
        &mut self.decoder
    }

    pub fn transform(&self, r: &[f64]) -> Result<Vec<f64>> {
        ensure_len("reward", r.len(), self.source_dim())?;
        self.encoder.forward_one(r)
    }

    pub fn transform_batch(&self, rewards: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.encoder.forward(rewards)
    }

    /// Reconstruction loss `mean ||r - dec(enc(r))||^2` with encoder and
    /// decoder gradients.
    pub fn loss_and_gradients(&self, rewards: &DMatrix<f64>) -> Result<(f64, MlpGrads, MlpGrads)> {
        if rewards.nrows() == 0 {
            return Err(usage("empty reward batch"));
        }
        let (code, enc_cache) = self.encoder.forward_train::<rand_chacha::ChaCha8Rng>(rewards, None)?;
        let (out, dec_cache) = self.decoder.forward_train::<rand_chacha::ChaCha8Rng>(&code, None)?;
        let residual = out - rewards;
        let n = rewards.nrows() as f64;
        let loss = residual.norm_squared() / n;
        let dec_grads = self.decoder.backward(&dec_cache, &(residual * (2.0 / n)))?;
        let enc_grads = self.encoder.backward(&enc_cache, &dec_grads.input)?;
        Ok((loss, enc_grads, dec_grads))
    }

    pub fn update(&mut self, rewards: &DMatrix<f64>) -> Result<f64> {
        let (loss, enc, dec) = self.loss_and_gradients(rewards)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("autoencoder loss is {loss}")));
        }
        let grads: Vec<&[f64]> = enc.flat().into_iter().chain(dec.flat()).collect();
        let mut params: Vec<&mut [f64]> = self.encoder.params_mut();
        params.extend(self.decoder.params_mut());
        self.adam.step(&mut params, &grads)?;
        Ok(loss)
    }
}

//! Fully-connected autoencoder compressing fields into a compact latent.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{Activation, AdamState, DenseNet, Parameters};
use crate::rng::{derive_seed, seeded};
use crate::types::{min_max, FieldGrid, Latent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub dims: [usize; 3],
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

impl AeConfig {
    pub fn new(dims: [usize; 3], latent_dim: usize) -> Self {
        Self {
            dims,
            latent_dim,
            hidden: vec![256, 256],
        }
    }

    pub fn field_len(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Affine map applied to raw field values before encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub const IDENTITY: Self = Self {
        mean: 0.0,
        std: 1.0,
    };

    pub fn fit(fields: &[FieldGrid]) -> Self {
        let n: usize = fields.iter().map(|f| f.len()).sum();
        let mean = fields.iter().flat_map(|f| &f.values).sum::<f64>() / n as f64;
        let var = fields
            .iter()
            .flat_map(|f| &f.values)
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        Self {
            mean,
            std: var.sqrt().max(1e-12),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub config: AeConfig,
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub standardization: Standardization,
    pub value_range: (f64, f64),
}

impl AutoencoderModel {
    pub fn new(config: AeConfig, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let n = config.field_len();
        let mut enc_sizes = vec![n];
        enc_sizes.extend(&config.hidden);
        enc_sizes.push(config.latent_dim);
        let mut dec_sizes = vec![config.latent_dim];
        dec_sizes.extend(config.hidden.iter().rev());
        dec_sizes.push(n);
        let encoder = DenseNet::mlp(&enc_sizes, Activation::Tanh, Activation::Identity, &mut rng);
        let decoder = DenseNet::mlp(&dec_sizes, Activation::Tanh, Activation::Identity, &mut rng);
        Self {
            config,
            encoder,
            decoder,
            standardization: Standardization::IDENTITY,
            value_range: (0.0, 1.0),
        }
    }

    /// Builds a model from explicit networks, checking they agree with `config`.
    pub fn from_parts(config: AeConfig, encoder: DenseNet, decoder: DenseNet) -> Result<Self> {
        let n = config.field_len();
        check_dim("encoder input", n, encoder.input_dim())?;
        check_dim("encoder output", config.latent_dim, encoder.output_dim())?;
        check_dim("decoder input", config.latent_dim, decoder.input_dim())?;
        check_dim("decoder output", n, decoder.output_dim())?;
        Ok(Self {
            config,
            encoder,
            decoder,
            standardization: Standardization::IDENTITY,
            value_range: (0.0, 1.0),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Structural checks for models loaded from disk.
    pub fn validate(&self) -> Result<()> {
        let n = self.config.field_len();
        check_dim("encoder input", n, self.encoder.input_dim())?;
        check_dim(
            "encoder output",
            self.config.latent_dim,
            self.encoder.output_dim(),
        )?;
        check_dim(
            "decoder input",
            self.config.latent_dim,
            self.decoder.input_dim(),
        )?;
        check_dim("decoder output", n, self.decoder.output_dim())?;
        let s = self.standardization;
        if !(s.std > 0.0) || !s.mean.is_finite() || !self.all_finite() {
            return Err(Error::Format(
                "autoencoder parameters must be finite with positive std".into(),
            ));
        }
        Ok(())
    }

    fn check_field(&self, x: &FieldGrid) -> Result<()> {
        if x.dims != self.config.dims {
            return Err(Error::shape(
                "field dims",
                self.config.field_len(),
                x.dims.iter().product(),
            ));
        }
        Ok(())
    }

    fn standardized_batch(&self, xs: &[FieldGrid]) -> Result<Array2<f64>> {
        let n = self.config.field_len();
        let s = self.standardization;
        let mut out = Array2::zeros((xs.len(), n));
        for (mut row, x) in out.axis_iter_mut(Axis(0)).zip(xs) {
            self.check_field(x)?;
            for (r, v) in row.iter_mut().zip(&x.values) {
                *r = (v - s.mean) / s.std;
            }
        }
        Ok(out)
    }

    pub fn encode(&self, x: &FieldGrid) -> Result<Latent> {
        Ok(self.encode_batch(std::slice::from_ref(x))?.remove(0))
    }

    pub fn encode_batch(&self, xs: &[FieldGrid]) -> Result<Vec<Latent>> {
        let batch = self.standardized_batch(xs)?;
        let z = self.encoder.forward_batch(batch.view())?;
        Ok(z.axis_iter(Axis(0)).map(|r| Latent(r.to_vec())).collect())
    }

    pub fn decode(&self, z: &Latent) -> Result<FieldGrid> {
        check_dim("latent", self.latent_dim(), z.dim())?;
        let view = ArrayView2::from_shape((1, z.dim()), &z.0).expect("row vector");
        Ok(self.decode_rows(view)?.remove(0))
    }

    /// Decodes a `batch x latent_dim` matrix of latents.
    pub fn decode_rows(&self, z: ArrayView2<f64>) -> Result<Vec<FieldGrid>> {
        check_dim("latent", self.latent_dim(), z.ncols())?;
        let out = self.decoder.forward_batch(z)?;
        let s = self.standardization;
        Ok(out
            .axis_iter(Axis(0))
            .map(|row| FieldGrid {
                dims: self.config.dims,
                values: row.iter().map(|v| v * s.std + s.mean).collect(),
                value_range: self.value_range,
            })
            .collect())
    }

    pub fn reconstruct(&self, x: &FieldGrid) -> Result<FieldGrid> {
        self.decode(&self.encode(x)?)
    }
}

impl Parameters for AutoencoderModel {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }
}

/// Mean squared error between two fields of equal dims.
pub fn ae_loss(x: &FieldGrid, x_rec: &FieldGrid) -> Result<f64> {
    check_dim("field length", x.len(), x_rec.len())?;
    if x.dims != x_rec.dims {
        return Err(Error::Usage(format!(
            "field dims differ: {:?} vs {:?}",
            x.dims, x_rec.dims
        )));
    }
    let sse: f64 = x
        .values
        .iter()
        .zip(&x_rec.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sse / x.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 600,
            batch_size: 16,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean raw-space MSE over each epoch's minibatches.
    pub epoch_losses: Vec<f64>,
    /// Raw-space MSE of every optimizer step's minibatch.
    pub step_losses: Vec<f64>,
}

/// Trains an autoencoder on `fields`; deterministic for a fixed `seed`.
pub fn train_ae(
    fields: &[FieldGrid],
    arch: AeConfig,
    train: &AeTrainConfig,
    seed: u64,
) -> Result<(AutoencoderModel, TrainLog)> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Config("autoencoder training needs at least one field".into()))?;
    if fields.iter().any(|f| f.dims != first.dims) {
        return Err(Error::Config("all training fields must share dims".into()));
    }
    if arch.dims != first.dims {
        return Err(Error::Config(format!(
            "architecture dims {:?} do not match data dims {:?}",
            arch.dims, first.dims
        )));
    }
    if train.batch_size == 0 || train.epochs == 0 {
        return Err(Error::Config(
            "epochs and batch size must be positive".into(),
        ));
    }

    let mut model = AutoencoderModel::new(arch, derive_seed(seed, 0));
    model.standardization = Standardization::fit(fields);
    let (lo, hi) = fields
        .iter()
        .map(|f| min_max(&f.values))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| {
            (a.min(c), b.max(d))
        });
    model.value_range = (lo, hi);

    let data = model.standardized_batch(fields)?;
    let scale2 = model.standardization.std.powi(2);
    let mut adam = AdamState::for_model(&model);
    let mut order: Vec<usize> = (0..fields.len()).collect();
    let mut rng = seeded(derive_seed(seed, 1));
    let mut log = TrainLog::default();

    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(train.batch_size) {
            let x = data.select(Axis(0), chunk);
            let (loss, grads) = ae_loss_and_grad(&model, &x)?;
            let raw = loss * scale2;
            if !raw.is_finite() {
                return Err(Error::Training(format!(
                    "autoencoder loss became non-finite at epoch {epoch}"
                )));
            }
            adam.step_model(&mut model, &grads, train.learning_rate)?;
            log.step_losses.push(raw);
            epoch_sum += raw;
            batches += 1;
        }
        log.epoch_losses.push(epoch_sum / batches as f64);
    }
    Ok((model, log))
}

/// Standardized-space MSE of a batch and its gradient.
fn ae_loss_and_grad(model: &AutoencoderModel, x: &Array2<f64>) -> Result<(f64, AutoencoderModel)> {
    let (z, enc_cache) = model.encoder.forward_cached(x.view())?;
    let (out, dec_cache) = model.decoder.forward_cached(z.view())?;
    let diff = &out - x;
    let count = diff.len() as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / count;
    let g_out = diff * (2.0 / count);
    let mut grads = AutoencoderModel {
        config: model.config.clone(),
        encoder: model.encoder.zeros_like(),
        decoder: model.decoder.zeros_like(),
        standardization: model.standardization,
        value_range: model.value_range,
    };
    let g_z = model
        .decoder
        .backward_batch(&dec_cache, g_out, &mut grads.decoder)?;
    model
        .encoder
        .backward_batch(&enc_cache, g_z, &mut grads.encoder)?;
    Ok((loss, grads))
}

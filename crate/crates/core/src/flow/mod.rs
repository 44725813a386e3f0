//! Conditional normalizing flow over autoencoder latents.
//!
//! Generative direction: `z0 ~ N(mu(c), diag(sigma(c)^2))`, then `K1`
//! conditional blocks produce the intermediate `m`, then `K2` unconditional
//! blocks produce `zK`. The last `cond_dim` coordinates of `m` are trained to
//! equal the condition, so inverting only the unconditional stack recovers
//! parameters from a latent.

mod layers;
mod train;

pub use layers::{ActNorm, Coupling, FlowBlock, Permutation};
pub use train::{flow_loss, flow_loss_grad, train_flow, FlowLoss, FlowTrainConfig, FlowTrainLog};

#[cfg(test)]
use train::loss_and_grad;

use std::f64::consts::PI;
use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{Activation, DenseNet, Parameters};
use crate::rng::seeded;
use crate::types::{Latent, ParamVector};

/// Bound applied to the log-scale head before exponentiation.
pub const LOG_SIGMA_CLAMP: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowInit {
    /// Output layers zeroed: every coupling is the identity, the base is
    /// `N(0, I)`, actnorm awaits data-dependent initialization.
    Identity,
    /// Every parameter random and actnorm pre-initialized; used to exercise
    /// invertibility and log-det bookkeeping on a non-trivial map.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub conditional_blocks: usize,
    pub unconditional_blocks: usize,
    pub coupling_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub scale_limit: f64,
    pub alpha: f64,
    pub init: FlowInit,
}

impl FlowConfig {
    pub fn new(latent_dim: usize, cond_dim: usize) -> Self {
        Self {
            latent_dim,
            cond_dim,
            conditional_blocks: 4,
            unconditional_blocks: 4,
            coupling_hidden: vec![64, 64],
            head_hidden: vec![64],
            scale_limit: 2.0,
            alpha: 1.0,
            init: FlowInit::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.latent_dim < 2 {
            problems.push(format!("latent_dim must be >= 2, got {}", self.latent_dim));
        }
        if self.cond_dim == 0 || self.cond_dim > self.latent_dim {
            problems.push(format!(
                "cond_dim must be in 1..={}, got {}",
                self.latent_dim, self.cond_dim
            ));
        }
        if self.scale_limit <= 0.0 || !self.scale_limit.is_finite() {
            problems.push("scale_limit must be positive".into());
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            problems.push("alpha must be a non-negative number".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub config: FlowConfig,
    pub conditional: Vec<FlowBlock>,
    pub unconditional: Vec<FlowBlock>,
    pub mean_head: DenseNet,
    pub log_sigma_head: DenseNet,
}

/// Result of pushing a base sample through the flow.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowForward {
    pub z_k: Latent,
    pub m: Latent,
    pub logdet: f64,
}

impl FlowModel {
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let d = config.latent_dim;
        let n = config.cond_dim;
        let split = d / 2;
        let block = |cond: usize, rng: &mut _| FlowBlock {
            actnorm: ActNorm::new(d),
            permutation: Permutation::random(d, rng),
            coupling: Coupling::new(
                d,
                split,
                cond,
                &config.coupling_hidden,
                config.scale_limit,
                rng,
            ),
        };
        let conditional: Vec<_> = (0..config.conditional_blocks)
            .map(|_| block(n, &mut rng))
            .collect();
        let unconditional: Vec<_> = (0..config.unconditional_blocks)
            .map(|_| block(0, &mut rng))
            .collect();
        let mut head_sizes = vec![n];
        head_sizes.extend(&config.head_hidden);
        head_sizes.push(d);
        let mean_head = DenseNet::mlp(
            &head_sizes,
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        let log_sigma_head = DenseNet::mlp(
            &head_sizes,
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        let mut model = Self {
            config,
            conditional,
            unconditional,
            mean_head,
            log_sigma_head,
        };
        match model.config.init {
            FlowInit::Identity => {
                for b in model.blocks_mut() {
                    b.coupling.make_identity();
                }
                model.mean_head.zero_output_layer();
                model.log_sigma_head.zero_output_layer();
            }
            FlowInit::Random => {
                for b in model
                    .conditional
                    .iter_mut()
                    .chain(model.unconditional.iter_mut())
                {
                    b.randomize_actnorm(&mut rng);
                }
            }
        }
        Ok(model)
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    /// Coordinates of `m` that carry the predicted condition.
    pub fn zc_range(&self) -> Range<usize> {
        self.latent_dim() - self.cond_dim()..self.latent_dim()
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut FlowBlock> {
        self.conditional
            .iter_mut()
            .chain(self.unconditional.iter_mut())
    }

    /// Marks every actnorm as initialized with its current values.
    pub fn mark_actnorm_initialized(&mut self) {
        for b in self.blocks_mut() {
            b.actnorm.initialized = true;
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.conditional
            .iter()
            .chain(&self.unconditional)
            .all(|b| b.actnorm.initialized)
    }

    /// Structural checks for models loaded from disk.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let d = self.latent_dim();
        for b in self.conditional.iter().chain(&self.unconditional) {
            check_dim("block dim", d, b.dim())?;
            check_dim("permutation dim", d, b.permutation.dim())?;
            check_dim("coupling dim", d, b.coupling.dim())?;
            if !b.permutation.is_consistent() {
                return Err(Error::Format("permutation and its inverse disagree".into()));
            }
        }
        for b in &self.conditional {
            check_dim("conditional coupling", self.cond_dim(), b.coupling.cond_dim)?;
        }
        for b in &self.unconditional {
            check_dim("unconditional coupling", 0, b.coupling.cond_dim)?;
        }
        check_dim(
            "mean head input",
            self.cond_dim(),
            self.mean_head.input_dim(),
        )?;
        check_dim("mean head output", d, self.mean_head.output_dim())?;
        check_dim(
            "sigma head input",
            self.cond_dim(),
            self.log_sigma_head.input_dim(),
        )?;
        check_dim("sigma head output", d, self.log_sigma_head.output_dim())?;
        if !self.all_finite() {
            return Err(Error::Format("flow parameters must be finite".into()));
        }
        Ok(())
    }

    /// Data-dependent actnorm initialization: runs `z_k` down the inverse
    /// pass, fitting each actnorm to the batch it sees.
    pub fn initialize_actnorm(&mut self, z_k: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<()> {
        check_dim("latent", self.latent_dim(), z_k.ncols())?;
        check_dim("condition", self.cond_dim(), c.ncols())?;
        let mut h = z_k.to_owned();
        for b in self.unconditional.iter_mut().rev() {
            h = b.initialize_inverse(h.view(), None)?;
        }
        for b in self.conditional.iter_mut().rev() {
            h = b.initialize_inverse(h.view(), Some(c))?;
        }
        Ok(())
    }

    // ---- base distribution ----

    pub fn base_params_batch(&self, c: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        check_dim("condition", self.cond_dim(), c.ncols())?;
        let mu = self.mean_head.forward_batch(c)?;
        let log_sigma = self
            .log_sigma_head
            .forward_batch(c)?
            .mapv(|v| v.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP));
        Ok((mu, log_sigma))
    }

    /// Mean and standard deviation of the conditional base Gaussian.
    pub fn base_params(&self, c: &ParamVector) -> Result<(Latent, Latent)> {
        let (mu, log_sigma) = self.base_params_batch(row(c)?)?;
        Ok((
            Latent(mu.row(0).to_vec()),
            Latent(log_sigma.row(0).mapv(f64::exp).to_vec()),
        ))
    }

    // ---- generative direction ----

    /// Returns `(z_k, m, logdet)` for a batch of base samples.
    pub fn forward_batch(
        &self,
        z0: ArrayView2<f64>,
        c: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, Array1<f64>)> {
        check_dim("latent", self.latent_dim(), z0.ncols())?;
        check_dim("condition", self.cond_dim(), c.ncols())?;
        check_dim("condition rows", z0.nrows(), c.nrows())?;
        let mut h = z0.to_owned();
        let mut logdet = Array1::zeros(z0.nrows());
        for b in &self.conditional {
            let (next, ld) = b.forward(h.view(), Some(c))?;
            h = next;
            logdet += &ld;
        }
        let m = h.clone();
        for b in &self.unconditional {
            let (next, ld) = b.forward(h.view(), None)?;
            h = next;
            logdet += &ld;
        }
        Ok((h, m, logdet))
    }

    pub fn forward(&self, z0: &Latent, c: &ParamVector) -> Result<FlowForward> {
        let (zk, m, logdet) = self.forward_batch(row(z0)?, row(c)?)?;
        Ok(FlowForward {
            z_k: Latent(zk.row(0).to_vec()),
            m: Latent(m.row(0).to_vec()),
            logdet: logdet[0],
        })
    }

    /// Applies only the unconditional stack to `m`.
    pub fn unconditional_forward(&self, m: &Latent) -> Result<Latent> {
        check_dim("latent", self.latent_dim(), m.dim())?;
        let mut h = row(m)?.to_owned();
        for b in &self.unconditional {
            h = b.forward(h.view(), None)?.0;
        }
        Ok(Latent(h.row(0).to_vec()))
    }

    // ---- density direction ----

    /// Inverts the unconditional stack; needs no condition.
    pub fn unconditional_inverse_batch(
        &self,
        z_k: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        check_dim("latent", self.latent_dim(), z_k.ncols())?;
        let mut h = z_k.to_owned();
        let mut logdet = Array1::zeros(z_k.nrows());
        for b in self.unconditional.iter().rev() {
            let (next, ld) = b.inverse(h.view(), None)?;
            h = next;
            logdet += &ld;
        }
        Ok((h, logdet))
    }

    pub fn unconditional_inverse(&self, z_k: &Latent) -> Result<Latent> {
        let (m, _) = self.unconditional_inverse_batch(row(z_k)?)?;
        Ok(Latent(m.row(0).to_vec()))
    }

    /// Full inverse: `(z0, m, logdet of the inverse map)`.
    pub fn inverse_batch(
        &self,
        z_k: ArrayView2<f64>,
        c: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, Array1<f64>)> {
        check_dim("condition", self.cond_dim(), c.ncols())?;
        check_dim("condition rows", z_k.nrows(), c.nrows())?;
        let (m, mut logdet) = self.unconditional_inverse_batch(z_k)?;
        let mut h = m.clone();
        for b in self.conditional.iter().rev() {
            let (next, ld) = b.inverse(h.view(), Some(c))?;
            h = next;
            logdet += &ld;
        }
        Ok((h, m, logdet))
    }

    pub fn inverse(&self, z_k: &Latent, c: &ParamVector) -> Result<Latent> {
        let (z0, _, _) = self.inverse_batch(row(z_k)?, row(c)?)?;
        Ok(Latent(z0.row(0).to_vec()))
    }

    /// The condition-carrying coordinates of `m`.
    pub fn extract_zc(&self, m: &Latent) -> Result<ParamVector> {
        check_dim("latent", self.latent_dim(), m.dim())?;
        Ok(ParamVector(m[self.zc_range()].to_vec()))
    }

    /// `log p(z | c)` by change of variables through the inverse pass.
    pub fn log_likelihood_batch(
        &self,
        z: ArrayView2<f64>,
        c: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let (z0, _, logdet) = self.inverse_batch(z, c)?;
        let (mu, log_sigma) = self.base_params_batch(c)?;
        let mut out = logdet;
        for (b, o) in out.iter_mut().enumerate() {
            *o += diag_gaussian_logprob(z0.row(b), mu.row(b), log_sigma.row(b));
        }
        Ok(out)
    }

    pub fn log_likelihood(&self, z: &Latent, c: &ParamVector) -> Result<f64> {
        Ok(self.log_likelihood_batch(row(z)?, row(c)?)?[0])
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            conditional: self.conditional.iter().map(FlowBlock::zeros_like).collect(),
            unconditional: self
                .unconditional
                .iter()
                .map(FlowBlock::zeros_like)
                .collect(),
            mean_head: self.mean_head.zeros_like(),
            log_sigma_head: self.log_sigma_head.zeros_like(),
        }
    }
}

impl Parameters for FlowModel {
    fn params(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = Vec::new();
        for b in self.conditional.iter().chain(&self.unconditional) {
            p.extend(b.params());
        }
        p.extend(self.mean_head.params());
        p.extend(self.log_sigma_head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = Vec::new();
        for b in self
            .conditional
            .iter_mut()
            .chain(self.unconditional.iter_mut())
        {
            p.extend(b.params_mut());
        }
        p.extend(self.mean_head.params_mut());
        p.extend(self.log_sigma_head.params_mut());
        p
    }
}

/// Log density of a diagonal Gaussian, `-1/2 sum[(z-mu)^2/sigma^2 + log(2 pi sigma^2)]`.
pub fn gaussian_logprob(z: &Latent, mu: &Latent, sigma: &Latent) -> Result<f64> {
    check_dim("gaussian mean", z.dim(), mu.dim())?;
    check_dim("gaussian sigma", z.dim(), sigma.dim())?;
    if let Some(i) = sigma.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Domain(format!(
            "standard deviation must be positive, got {} at index {i}",
            sigma[i]
        )));
    }
    let log_sigma: Vec<f64> = sigma.iter().map(|s| s.ln()).collect();
    Ok(diag_gaussian_logprob(
        ArrayView1::from(&z[..]),
        ArrayView1::from(&mu[..]),
        ArrayView1::from(&log_sigma[..]),
    ))
}

pub(crate) fn diag_gaussian_logprob(
    z: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    log_sigma: ArrayView1<f64>,
) -> f64 {
    let ln_2pi = (2.0 * PI).ln();
    -0.5 * z
        .iter()
        .zip(mu)
        .zip(log_sigma)
        .map(|((z, m), ls)| {
            let u = (z - m) * (-ls).exp();
            u * u + ln_2pi + 2.0 * ls
        })
        .sum::<f64>()
}

fn row(v: &[f64]) -> Result<ArrayView2<'_, f64>> {
    ArrayView2::from_shape((1, v.len()), v).map_err(|e| Error::Format(e.to_string()))
}

pub(crate) fn stack_rows<T: AsRef<[f64]>>(rows: &[T], dim: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut r, v) in out.axis_iter_mut(Axis(0)).zip(rows) {
        let v = v.as_ref();
        check_dim("row length", dim, v.len())?;
        r.assign(&ArrayView1::from(v));
    }
    Ok(out)
}

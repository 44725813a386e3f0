//! Invertible building blocks: actnorm, fixed permutation, affine coupling.
//!
//! `forward` is the generative direction (base sample towards data);
//! `inverse` is the density direction. Only the inverse direction carries a
//! backward pass, since training evaluates densities of observed latents.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{Activation, DenseNet, NetCache, Parameters};
use crate::rng::Rng;

/// Per-dimension affine normalization `y = exp(log_scale) * x + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActNorm {
    pub log_scale: Array1<f64>,
    pub bias: Array1<f64>,
    pub initialized: bool,
}

impl ActNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            log_scale: Array1::zeros(dim),
            bias: Array1::zeros(dim),
            initialized: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn scale(&self) -> Array1<f64> {
        self.log_scale.mapv(f64::exp)
    }

    pub fn logdet(&self) -> f64 {
        self.log_scale.sum()
    }

    fn ensure_initialized(&self) -> Result<()> {
        if self.initialized {
            Ok(())
        } else {
            Err(Error::Usage(
                "actnorm layer used before data-dependent initialization".into(),
            ))
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.ensure_initialized()?;
        check_dim("actnorm input", self.dim(), x.ncols())?;
        Ok(&x * &self.scale() + &self.bias)
    }

    pub fn inverse(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.ensure_initialized()?;
        check_dim("actnorm input", self.dim(), y.ncols())?;
        let inv = self.log_scale.mapv(|v| (-v).exp());
        Ok((&y - &self.bias) * &inv)
    }

    /// Sets bias/scale so that `y` maps to zero mean and unit variance per
    /// dimension under the inverse map.
    pub fn initialize_from(&mut self, y: ArrayView2<f64>) -> Result<()> {
        check_dim("actnorm init", self.dim(), y.ncols())?;
        if y.nrows() == 0 {
            return Err(Error::Usage("actnorm init needs a non-empty batch".into()));
        }
        let mean = y.mean_axis(Axis(0)).expect("non-empty");
        let var = y.var_axis(Axis(0), 0.0);
        self.bias = mean;
        self.log_scale = var.mapv(|v| v.sqrt().max(1e-6).ln());
        self.initialized = true;
        Ok(())
    }

    /// Backward through `x = inverse(y)`; `x` is the inverse's output and
    /// `g_logdet_sum` the batch sum of d loss / d logdet.
    fn inverse_backward(
        &self,
        x: &Array2<f64>,
        gx: Array2<f64>,
        g_logdet_sum: f64,
        grads: &mut ActNorm,
    ) -> Array2<f64> {
        let inv = self.log_scale.mapv(|v| (-v).exp());
        grads.log_scale -= &(&gx * x).sum_axis(Axis(0));
        grads.log_scale -= g_logdet_sum;
        let gy = gx * &inv;
        grads.bias -= &gy.sum_axis(Axis(0));
        gy
    }
}

/// Fixed channel permutation: `y[:, i] = x[:, perm[i]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn identity(dim: usize) -> Self {
        Self {
            forward: (0..dim).collect(),
            inverse: (0..dim).collect(),
        }
    }

    pub fn random(dim: usize, rng: &mut Rng) -> Self {
        let mut forward: Vec<usize> = (0..dim).collect();
        forward.shuffle(rng);
        Self::from_forward(forward).expect("shuffle yields a permutation")
    }

    pub fn reversal(dim: usize) -> Self {
        Self::from_forward((0..dim).rev().collect()).expect("reversal is a permutation")
    }

    pub fn from_forward(forward: Vec<usize>) -> Result<Self> {
        let mut inverse = vec![usize::MAX; forward.len()];
        for (i, &p) in forward.iter().enumerate() {
            if p >= forward.len() || inverse[p] != usize::MAX {
                return Err(Error::Format(format!("{forward:?} is not a permutation")));
            }
            inverse[p] = i;
        }
        Ok(Self { forward, inverse })
    }

    pub fn indices(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse_indices(&self) -> &[usize] {
        &self.inverse
    }

    pub fn dim(&self) -> usize {
        self.forward.len()
    }

    pub(crate) fn is_consistent(&self) -> bool {
        self.forward.len() == self.inverse.len()
            && self
                .forward
                .iter()
                .enumerate()
                .all(|(i, &p)| self.inverse.get(p) == Some(&i))
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("permutation input", self.dim(), x.ncols())?;
        Ok(x.select(Axis(1), &self.forward))
    }

    pub fn inverse(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("permutation input", self.dim(), y.ncols())?;
        Ok(y.select(Axis(1), &self.inverse))
    }
}

/// Affine coupling: the first `split` coordinates pass through unchanged
/// and parameterize a scale and shift of the remaining ones.
///
/// The scale is `exp(scale_limit * tanh(raw))`, so it stays within
/// `[exp(-scale_limit), exp(scale_limit)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub split: usize,
    pub cond_dim: usize,
    pub scale_limit: f64,
    pub scale_net: DenseNet,
    pub shift_net: DenseNet,
}

pub(crate) struct CouplingCache {
    scale_cache: NetCache,
    shift_cache: NetCache,
    tanh_raw: Array2<f64>,
    scale: Array2<f64>,
    x2: Array2<f64>,
}

impl Coupling {
    pub fn new(
        dim: usize,
        split: usize,
        cond_dim: usize,
        hidden: &[usize],
        scale_limit: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!(
            split > 0 && split < dim,
            "coupling split must be inside (0, dim)"
        );
        let mut sizes = vec![split + cond_dim];
        sizes.extend(hidden);
        sizes.push(dim - split);
        Self {
            split,
            cond_dim,
            scale_limit,
            scale_net: DenseNet::mlp(&sizes, Activation::Tanh, Activation::Identity, rng),
            shift_net: DenseNet::mlp(&sizes, Activation::Tanh, Activation::Identity, rng),
        }
    }

    pub fn is_conditional(&self) -> bool {
        self.cond_dim > 0
    }

    pub fn dim(&self) -> usize {
        self.split + self.scale_net.output_dim()
    }

    /// Zeroes both output layers so the layer is the identity map.
    pub fn make_identity(&mut self) {
        self.scale_net.zero_output_layer();
        self.shift_net.zero_output_layer();
    }

    fn net_input(&self, z1: ArrayView2<f64>, c: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
        match (self.is_conditional(), c) {
            (false, _) => Ok(z1.to_owned()),
            (true, Some(c)) => {
                check_dim("coupling condition", self.cond_dim, c.ncols())?;
                check_dim("coupling condition rows", z1.nrows(), c.nrows())?;
                Ok(concatenate![Axis(1), z1, c])
            }
            (true, None) => Err(Error::Usage(
                "conditional coupling layer called without a condition".into(),
            )),
        }
    }

    fn scale_and_shift(
        &self,
        z1: ArrayView2<f64>,
        c: Option<ArrayView2<f64>>,
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        let h = self.net_input(z1, c)?;
        let tanh_raw = self.scale_net.forward_batch(h.view())?.mapv(f64::tanh);
        let scale = tanh_raw.mapv(|t| (self.scale_limit * t).exp());
        let shift = self.shift_net.forward_batch(h.view())?;
        Ok((tanh_raw, scale, shift))
    }

    pub fn forward(
        &self,
        z: ArrayView2<f64>,
        c: Option<ArrayView2<f64>>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        check_dim("coupling input", self.dim(), z.ncols())?;
        let z1 = z.slice(s![.., ..self.split]);
        let z2 = z.slice(s![.., self.split..]);
        let (tanh_raw, scale, shift) = self.scale_and_shift(z1, c)?;
        let y2 = shift + &scale * &z2;
        let logdet = tanh_raw.sum_axis(Axis(1)) * self.scale_limit;
        Ok((concatenate![Axis(1), z1, y2], logdet))
    }

    pub fn inverse(
        &self,
        y: ArrayView2<f64>,
        c: Option<ArrayView2<f64>>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        check_dim("coupling input", self.dim(), y.ncols())?;
        let y1 = y.slice(s![.., ..self.split]);
        let y2 = y.slice(s![.., self.split..]);
        let (tanh_raw, scale, shift) = self.scale_and_shift(y1, c)?;
        let x2 = (&y2 - &shift) / &scale;
        let logdet = tanh_raw.sum_axis(Axis(1)) * -self.scale_limit;
        Ok((concatenate![Axis(1), y1, x2], logdet))
    }

    pub(crate) fn inverse_cached(
        &self,
        y: ArrayView2<f64>,
        c: Option<ArrayView2<f64>>,
    ) -> Result<(Array2<f64>, Array1<f64>, CouplingCache)> {
        check_dim("coupling input", self.dim(), y.ncols())?;
        let y1 = y.slice(s![.., ..self.split]);
        let y2 = y.slice(s![.., self.split..]);
        let h = self.net_input(y1, c)?;
        let (raw, scale_cache) = self.scale_net.forward_cached(h.view())?;
        let (shift, shift_cache) = self.shift_net.forward_cached(h.view())?;
        let tanh_raw = raw.mapv(f64::tanh);
        let scale = tanh_raw.mapv(|t| (self.scale_limit * t).exp());
        let x2 = (&y2 - &shift) / &scale;
        let logdet = tanh_raw.sum_axis(Axis(1)) * -self.scale_limit;
        let x = concatenate![Axis(1), y1, x2];
        Ok((
            x,
            logdet,
            CouplingCache {
                scale_cache,
                shift_cache,
                tanh_raw,
                scale,
                x2,
            },
        ))
    }

    /// Backward through `inverse`; `g_logdet[b]` is d loss / d logdet of
    /// sample `b`.
    pub(crate) fn inverse_backward(
        &self,
        cache: &CouplingCache,
        gx: Array2<f64>,
        g_logdet: ArrayView1<f64>,
        grads: &mut Coupling,
    ) -> Result<Array2<f64>> {
        let j = self.split;
        let gx1 = gx.slice(s![.., ..j]);
        let gx2 = gx.slice(s![.., j..]);
        let gy2 = &gx2 / &cache.scale;
        let g_shift = -&gy2;
        let mut g_log_scale = -(&gx2 * &cache.x2);
        g_log_scale -= &g_logdet.insert_axis(Axis(1));
        let g_raw = g_log_scale * &cache.tanh_raw.mapv(|t| self.scale_limit * (1.0 - t * t));
        let gh_s =
            self.scale_net
                .backward_batch(&cache.scale_cache, g_raw, &mut grads.scale_net)?;
        let gh_t =
            self.shift_net
                .backward_batch(&cache.shift_cache, g_shift, &mut grads.shift_net)?;
        let gh = gh_s + gh_t;
        let gy1 = &gx1 + &gh.slice(s![.., ..j]);
        Ok(concatenate![Axis(1), gy1, gy2])
    }
}

/// One flow step: actnorm, then permutation, then coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowBlock {
    pub actnorm: ActNorm,
    pub permutation: Permutation,
    pub coupling: Coupling,
}

pub(crate) struct BlockCache {
    coupling: CouplingCache,
    actnorm_out: Array2<f64>,
}

impl FlowBlock {
    pub fn dim(&self) -> usize {
        self.actnorm.dim()
    }

    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        c: Option<ArrayView2<f64>>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let a = self.actnorm.forward(x)?;
        let p = self.permutation.forward(a.view())?;
        let (y, mut logdet) = self.coupling.forward(p.view(), c)?;
        logdet += self.actnorm.logdet();
        Ok((y, logdet))
    }

    pub fn inverse(
        &self,
        y: ArrayView2<f64>,
        c: Option<ArrayView2<f64>>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.actnorm.ensure_initialized()?;
        let (p, mut logdet) = self.coupling.inverse(y, c)?;
        let a = self.permutation.inverse(p.view())?;
        let x = self.actnorm.inverse(a.view())?;
        logdet -= self.actnorm.logdet();
        Ok((x, logdet))
    }

    pub(crate) fn inverse_cached(
        &self,
        y: ArrayView2<f64>,
        c: Option<ArrayView2<f64>>,
    ) -> Result<(Array2<f64>, Array1<f64>, BlockCache)> {
        self.actnorm.ensure_initialized()?;
        let (p, mut logdet, coupling) = self.coupling.inverse_cached(y, c)?;
        let a = self.permutation.inverse(p.view())?;
        let x = self.actnorm.inverse(a.view())?;
        logdet -= self.actnorm.logdet();
        Ok((
            x.clone(),
            logdet,
            BlockCache {
                coupling,
                actnorm_out: x,
            },
        ))
    }

    /// Inverse pass that first fits the actnorm layer to the batch.
    pub(crate) fn initialize_inverse(
        &mut self,
        y: ArrayView2<f64>,
        c: Option<ArrayView2<f64>>,
    ) -> Result<Array2<f64>> {
        let (p, _) = self.coupling.inverse(y, c)?;
        let a = self.permutation.inverse(p.view())?;
        self.actnorm.initialize_from(a.view())?;
        self.actnorm.inverse(a.view())
    }

    pub(crate) fn inverse_backward(
        &self,
        cache: &BlockCache,
        gx: Array2<f64>,
        g_logdet: ArrayView1<f64>,
        grads: &mut FlowBlock,
    ) -> Result<Array2<f64>> {
        let ga = self.actnorm.inverse_backward(
            &cache.actnorm_out,
            gx,
            g_logdet.sum(),
            &mut grads.actnorm,
        );
        // gradient of x = y.select(inverse) w.r.t. y gathers with `forward`
        let gp = ga.select(Axis(1), self.permutation.indices());
        self.coupling
            .inverse_backward(&cache.coupling, gp, g_logdet, &mut grads.coupling)
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            actnorm: ActNorm {
                log_scale: Array1::zeros(self.dim()),
                bias: Array1::zeros(self.dim()),
                initialized: true,
            },
            permutation: self.permutation.clone(),
            coupling: Coupling {
                split: self.coupling.split,
                cond_dim: self.coupling.cond_dim,
                scale_limit: self.coupling.scale_limit,
                scale_net: self.coupling.scale_net.zeros_like(),
                shift_net: self.coupling.shift_net.zeros_like(),
            },
        }
    }

    pub(crate) fn randomize_actnorm(&mut self, rng: &mut Rng) {
        self.actnorm
            .log_scale
            .mapv_inplace(|_| rng.random_range(-0.5..0.5));
        self.actnorm
            .bias
            .mapv_inplace(|_| rng.random_range(-0.5..0.5));
        self.actnorm.initialized = true;
    }
}

impl Parameters for FlowBlock {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = vec![
            self.actnorm.log_scale.as_slice().expect("contiguous"),
            self.actnorm.bias.as_slice().expect("contiguous"),
        ];
        p.extend(self.coupling.scale_net.params());
        p.extend(self.coupling.shift_net.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = vec![
            self.actnorm.log_scale.as_slice_mut().expect("contiguous"),
            self.actnorm.bias.as_slice_mut().expect("contiguous"),
        ];
        p.extend(self.coupling.scale_net.params_mut());
        p.extend(self.coupling.shift_net.params_mut());
        p
    }
}

//! Small dense networks with hand-written reverse-mode gradients.
//!
//! Every learned function in the pipeline (coupling subnets, the base
//! distribution heads, encoder and decoder) is a [`DenseNet`]. Batches are
//! row-major `samples x features` matrices.

mod adam;

pub use adam::AdamState;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

/// Flat access to every learnable tensor of a model, in a fixed order.
///
/// Gradients are stored in a value of the same type (see `zeros_like`
/// constructors), so `grads.params()` lines up with `model.params_mut()`.
pub trait Parameters {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` in place by the derivative, expressed through the
    /// post-activation output `y`.
    fn backprop(self, y: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Tanh => grad.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y),
            Activation::Relu => grad.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Identity => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((output, input), || rng.random_range(-a..a));
        Self {
            weight,
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Activations recorded by [`DenseNet::forward_cached`]; `acts[0]` is the
/// input batch and `acts[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct NetCache {
    acts: Vec<Array2<f64>>,
}

impl NetCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache holds at least the input")
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim("layer chaining", pair[0].output_dim(), pair[1].input_dim())?;
        }
        let net = Self { layers };
        if !net.all_finite() {
            return Err(Error::Domain("network parameters must be finite".into()));
        }
        Ok(net)
    }

    /// Builds a Glorot-initialized MLP with layer widths `sizes`. Hidden
    /// layers use `hidden`, the last layer uses `output`.
    pub fn mlp(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(
            sizes.len() >= 2,
            "an MLP needs an input and an output width"
        );
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.input_dim(), l.output_dim(), l.activation))
                .collect(),
        }
    }

    /// Zeroes the last layer so the network outputs exactly zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|_| Error::shape("network input", self.input_dim(), input.len()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("network input", self.input_dim(), x.ncols())?;
        let mut a = x.to_owned();
        for layer in &self.layers {
            a = affine(layer, &a);
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, NetCache)> {
        check_dim("network input", self.input_dim(), x.ncols())?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.layers {
            let next = affine(layer, acts.last().unwrap());
            acts.push(next);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, NetCache { acts }))
    }

    /// Backpropagates `grad_out` (d loss / d output, one row per sample)
    /// through the cached pass. Parameter gradients are summed over the batch
    /// and added into `grads`; the input gradient is returned.
    pub fn backward_batch(
        &self,
        cache: &NetCache,
        grad_out: Array2<f64>,
        grads: &mut DenseNet,
    ) -> Result<Array2<f64>> {
        check_dim("output gradient", self.output_dim(), grad_out.ncols())?;
        check_dim(
            "output gradient rows",
            cache.acts[0].nrows(),
            grad_out.nrows(),
        )?;
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&cache.acts[i + 1], &mut g);
            let input = &cache.acts[i];
            let gl = &mut grads.layers[i];
            gl.weight += &g.t().dot(input);
            gl.bias += &g.sum_axis(Axis(0));
            g = g.dot(&layer.weight);
        }
        Ok(g)
    }

    /// Gradients of `<output_grad, forward(input)>` with respect to every
    /// parameter and the input.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(DenseNet, Vec<f64>)> {
        check_dim("output gradient", self.output_dim(), output_grad.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|_| Error::shape("network input", self.input_dim(), input.len()))?;
        let (_, cache) = self.forward_cached(x)?;
        let g = Array2::from_shape_vec((1, output_grad.len()), output_grad.to_vec())
            .expect("row vector");
        let mut grads = self.zeros_like();
        let gx = self.backward_batch(&cache, g, &mut grads)?;
        Ok((grads, gx.into_raw_vec_and_offset().0))
    }
}

fn affine(layer: &DenseLayer, a: &Array2<f64>) -> Array2<f64> {
    let mut z = a.dot(&layer.weight.t());
    z += &layer.bias;
    layer.activation.apply(&mut z);
    z
}

impl Parameters for DenseNet {
    fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

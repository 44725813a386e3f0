//! Prediction services on top of a frozen autoencoder and flow.

use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::error::{check_dim, Error, Result};
use crate::flow::FlowModel;
use crate::rng::seeded;
use crate::types::{FieldGrid, Latent, ParamVector};

/// Number of samples used for full-field uncertainty quantification.
pub const DEFAULT_UQ_SAMPLES: usize = 20;

/// Named simulation parameters and their raw ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub names: Vec<String>,
    pub ranges: Vec<(f64, f64)>,
}

/// Slack allowed when checking raw values against their declared range.
const RANGE_TOL: f64 = 1e-9;

impl ParamSpace {
    pub fn new(names: Vec<String>, ranges: Vec<(f64, f64)>) -> Result<Self> {
        let space = Self { names, ranges };
        space.validate()?;
        Ok(space)
    }

    /// `dim` parameters named `p0, p1, ...`, each spanning `[0, 1]`.
    pub fn unit(dim: usize) -> Self {
        Self {
            names: (0..dim).map(|i| format!("p{i}")).collect(),
            ranges: vec![(0.0, 1.0); dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("parameter names", self.ranges.len(), self.names.len())?;
        if self.ranges.is_empty() {
            return Err(Error::Config(
                "parameter space needs at least one dimension".into(),
            ));
        }
        for (name, &(lo, hi)) in self.names.iter().zip(&self.ranges) {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!(
                    "parameter {name}: range [{lo}, {hi}] must satisfy min < max"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    /// Min-max normalization into the unit box.
    pub fn normalize(&self, raw: &[f64]) -> Result<ParamVector> {
        check_dim("raw parameters", self.dim(), raw.len())?;
        raw.iter()
            .zip(&self.ranges)
            .zip(&self.names)
            .map(|((&v, &(lo, hi)), name)| {
                if !v.is_finite() || v < lo - RANGE_TOL || v > hi + RANGE_TOL {
                    Err(Error::Domain(format!(
                        "parameter {name} = {v} is outside [{lo}, {hi}]"
                    )))
                } else {
                    Ok((v - lo) / (hi - lo))
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(ParamVector)
    }

    pub fn denormalize(&self, c: &ParamVector) -> Result<Vec<f64>> {
        check_dim("normalized parameters", self.dim(), c.dim())?;
        Ok(c.iter()
            .zip(&self.ranges)
            .map(|(&v, &(lo, hi))| lo + v * (hi - lo))
            .collect())
    }
}

/// Mean prediction and per-voxel uncertainty for one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UqResult {
    pub mean_field: FieldGrid,
    pub var_field: FieldGrid,
    pub n_samples: usize,
    pub mean_latent: Latent,
    pub var_latent: Latent,
}

/// Draws `n` latents from the conditional base and pushes them through the
/// flow. Rows of the returned matrix are samples of `z_K`.
fn sample_latents(flow: &FlowModel, c: &ParamVector, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n < 1 {
        return Err(Error::Usage(
            "uncertainty quantification needs at least one sample".into(),
        ));
    }
    check_dim("condition", flow.cond_dim(), c.dim())?;
    let (mu, sigma) = flow.base_params(c)?;
    let d = flow.latent_dim();
    let mut rng = seeded(seed);
    let mut z0 = Array2::zeros((n, d));
    for mut row in z0.axis_iter_mut(Axis(0)) {
        for (k, v) in row.iter_mut().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *v = mu[k] + sigma[k] * eps;
        }
    }
    let cond = Array2::from_shape_fn((n, c.dim()), |(_, j)| c[j]);
    let (z_k, _, _) = flow.forward_batch(z0.view(), cond.view())?;
    Ok(z_k)
}

/// Population mean and variance over the rows of `samples`.
fn column_stats<'a>(
    samples: impl Iterator<Item = &'a [f64]> + Clone,
    dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = samples.clone().count() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples.clone() {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Latent-space mean and variance of `n` flow samples; skips decoding.
pub fn predict_latent_stats(
    flow: &FlowModel,
    c: &ParamVector,
    n: usize,
    seed: u64,
) -> Result<(Latent, Latent)> {
    let z_k = sample_latents(flow, c, n, seed)?;
    let rows: Vec<Vec<f64>> = z_k.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let (mean, var) = column_stats(rows.iter().map(Vec::as_slice), flow.latent_dim());
    Ok((Latent(mean), Latent(var)))
}

/// Surrogate prediction with uncertainty: decodes `n` flow samples and
/// returns their elementwise mean and population variance.
pub fn predict_and_quantify(
    flow: &FlowModel,
    ae: &AutoencoderModel,
    c: &ParamVector,
    n: usize,
    seed: u64,
) -> Result<UqResult> {
    check_dim("autoencoder latent", flow.latent_dim(), ae.latent_dim())?;
    let z_k = sample_latents(flow, c, n, seed)?;
    let fields = ae.decode_rows(z_k.view())?;
    let len = ae.config.field_len();
    let (mean, var) = column_stats(fields.iter().map(|f| f.values.as_slice()), len);
    let rows: Vec<Vec<f64>> = z_k.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let (mean_latent, var_latent) = column_stats(rows.iter().map(Vec::as_slice), flow.latent_dim());
    let var_max = var.iter().cloned().fold(0.0, f64::max);
    Ok(UqResult {
        mean_field: FieldGrid {
            dims: ae.config.dims,
            values: mean,
            value_range: ae.value_range,
        },
        var_field: FieldGrid {
            dims: ae.config.dims,
            values: var,
            value_range: (0.0, var_max),
        },
        n_samples: n,
        mean_latent: Latent(mean_latent),
        var_latent: Latent(var_latent),
    })
}

/// Predicts normalized parameters from a field: encode, invert the
/// unconditional stack, read the condition slice, clamp to the unit box.
pub fn reverse_predict(
    flow: &FlowModel,
    ae: &AutoencoderModel,
    x: &FieldGrid,
) -> Result<ParamVector> {
    let z = ae.encode(x)?;
    reverse_predict_latent(flow, &z)
}

pub fn reverse_predict_latent(flow: &FlowModel, z: &Latent) -> Result<ParamVector> {
    let m = flow.unconditional_inverse(z)?;
    Ok(flow.extract_zc(&m)?.clamped_unit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::AeConfig;
    use crate::flow::{FlowConfig, FlowInit, Permutation};
    use crate::nn::{Activation, DenseLayer, DenseNet};
    use ndarray::Array1;
    use rand::Rng;

    fn bias_only(input: usize, bias: Vec<f64>) -> DenseNet {
        let out = bias.len();
        DenseNet::from_layers(vec![DenseLayer {
            weight: Array2::zeros((out, input)),
            bias: Array1::from(bias),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn random_flow(d: usize, n: usize) -> FlowModel {
        let mut cfg = FlowConfig::new(d, n);
        cfg.conditional_blocks = 2;
        cfg.unconditional_blocks = 2;
        cfg.coupling_hidden = vec![8];
        cfg.head_hidden = vec![8];
        cfg.init = FlowInit::Random;
        FlowModel::new(cfg, 17).unwrap()
    }

    #[test]
    fn normalize_table_example() {
        let space = ParamSpace::new(
            vec!["BwsA".into(), "GM".into()],
            vec![(0.0, 5.0), (600.0, 1500.0)],
        )
        .unwrap();
        let c = space.normalize(&[2.5, 600.0]).unwrap();
        assert_eq!(c.0, vec![0.5, 0.0]);
        let err = space.normalize(&[2.5, 1600.0]).unwrap_err();
        assert!(err.to_string().contains("GM"));
    }

    #[test]
    fn normalize_round_trip() {
        let space = ParamSpace::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![(0.25, 1.0), (100.0, 300.0), (-3.0, 7.5)],
        )
        .unwrap();
        let mut rng = seeded(1);
        for _ in 0..1000 {
            let raw: Vec<f64> = space
                .ranges
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..hi))
                .collect();
            let back = space.denormalize(&space.normalize(&raw).unwrap()).unwrap();
            for (a, b) in raw.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn invalid_space_rejected() {
        assert!(ParamSpace::new(vec!["a".into()], vec![(1.0, 1.0)]).is_err());
        assert!(ParamSpace::new(vec!["a".into()], vec![]).is_err());
    }

    #[test]
    fn single_sample_has_zero_variance() {
        let flow = random_flow(4, 2);
        let ae = AutoencoderModel::new(
            AeConfig {
                dims: [2, 2, 2],
                latent_dim: 4,
                hidden: vec![6],
            },
            3,
        );
        let c = ParamVector(vec![0.2, 0.8]);
        let r = predict_and_quantify(&flow, &ae, &c, 1, 5).unwrap();
        assert!(r.var_field.values.iter().all(|&v| v == 0.0));
        assert!(r.var_latent.iter().all(|&v| v == 0.0));
        let r = predict_and_quantify(&flow, &ae, &c, 7, 5).unwrap();
        assert!(r.var_field.values.iter().all(|&v| v >= 0.0));
        assert!(matches!(
            predict_and_quantify(&flow, &ae, &c, 0, 5),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn constant_decoder_gives_constant_mean_and_zero_variance() {
        let flow = random_flow(3, 1);
        let cfg = AeConfig {
            dims: [1, 2, 2],
            latent_dim: 3,
            hidden: vec![],
        };
        let ae = AutoencoderModel::from_parts(
            cfg,
            bias_only(4, vec![0.0; 3]),
            bias_only(3, vec![0.25; 4]),
        )
        .unwrap();
        let r = predict_and_quantify(&flow, &ae, &ParamVector(vec![0.4]), 9, 2).unwrap();
        assert!(r
            .mean_field
            .values
            .iter()
            .all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(r.var_field.values.iter().all(|&v| v.abs() < 1e-28));
    }

    #[test]
    fn latent_stats_are_deterministic() {
        let flow = random_flow(4, 2);
        let c = ParamVector(vec![0.3, 0.6]);
        let a = predict_latent_stats(&flow, &c, 8, 99).unwrap();
        let b = predict_latent_stats(&flow, &c, 8, 99).unwrap();
        assert_eq!(a, b);
        let (_, var) = predict_latent_stats(&flow, &c, 1, 99).unwrap();
        assert!(var.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reverse_predict_reads_tail_through_identity_flow() {
        let mut cfg = FlowConfig::new(4, 2);
        cfg.conditional_blocks = 1;
        cfg.unconditional_blocks = 2;
        let mut flow = FlowModel::new(cfg, 0).unwrap();
        flow.mark_actnorm_initialized();
        for b in flow.unconditional.iter_mut() {
            b.permutation = Permutation::identity(4);
        }
        let ae_cfg = AeConfig {
            dims: [1, 1, 3],
            latent_dim: 4,
            hidden: vec![],
        };
        let ae = AutoencoderModel::from_parts(
            ae_cfg,
            bias_only(3, vec![5.0, -5.0, 0.3, 0.7]),
            bias_only(4, vec![0.0; 3]),
        )
        .unwrap();
        let x = FieldGrid::new([1, 1, 3], vec![1.0, 2.0, 3.0], (0.0, 3.0)).unwrap();
        let p = reverse_predict(&flow, &ae, &x).unwrap();
        assert_eq!(p.0, vec![0.3, 0.7]);

        let ae2 = AutoencoderModel::from_parts(
            ae.config.clone(),
            bias_only(3, vec![0.0, 0.0, -2.0, 9.0]),
            bias_only(4, vec![0.0; 3]),
        )
        .unwrap();
        assert_eq!(reverse_predict(&flow, &ae2, &x).unwrap().0, vec![0.0, 1.0]);
    }
}

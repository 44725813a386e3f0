use ndarray::{s, Array1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{diag_gaussian_logprob, stack_rows, FlowConfig, FlowModel, LOG_SIGMA_CLAMP};
use crate::error::{check_dim, Error, Result};
use crate::nn::{AdamState, Parameters};
use crate::rng::{derive_seed, seeded};
use crate::types::{Latent, ParamVector};

/// Batch-mean losses: `total = nll + alpha * zc`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowLoss {
    pub total: f64,
    /// Mean negative log-likelihood of the latents.
    pub nll: f64,
    /// Mean L1 distance between the predicted and true condition.
    pub zc: f64,
}

pub fn flow_loss(
    model: &FlowModel,
    z: &[Latent],
    c: &[ParamVector],
    alpha: f64,
) -> Result<FlowLoss> {
    if z.is_empty() {
        return Err(Error::Usage("flow loss needs a non-empty batch".into()));
    }
    check_dim("condition count", z.len(), c.len())?;
    let zb = stack_rows(z, model.latent_dim())?;
    let cb = stack_rows(c, model.cond_dim())?;
    let (z0, m, logdet) = model.inverse_batch(zb.view(), cb.view())?;
    let (mu, log_sigma) = model.base_params_batch(cb.view())?;
    let batch = z.len() as f64;
    let mut nll = 0.0;
    let mut zc = 0.0;
    let range = model.zc_range();
    for b in 0..z.len() {
        let lp = diag_gaussian_logprob(z0.row(b), mu.row(b), log_sigma.row(b)) + logdet[b];
        nll -= lp;
        zc += m
            .slice(s![b, range.clone()])
            .iter()
            .zip(cb.row(b))
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>();
    }
    nll /= batch;
    zc /= batch;
    Ok(FlowLoss {
        total: nll + alpha * zc,
        nll,
        zc,
    })
}

/// Loss and its exact gradient with respect to every flow parameter. The
/// gradient is returned as a model of the same shape.
pub fn flow_loss_grad(
    model: &FlowModel,
    z: &[Latent],
    c: &[ParamVector],
    alpha: f64,
) -> Result<(FlowLoss, FlowModel)> {
    if z.is_empty() {
        return Err(Error::Usage("flow loss needs a non-empty batch".into()));
    }
    check_dim("condition count", z.len(), c.len())?;
    let zb = stack_rows(z, model.latent_dim())?;
    let cb = stack_rows(c, model.cond_dim())?;
    loss_and_grad(model, zb.view(), cb.view(), alpha)
}

/// Loss and exact parameter gradient for a batch (rows of `z` and `c`).
pub(crate) fn loss_and_grad(
    model: &FlowModel,
    z: ArrayView2<f64>,
    c: ArrayView2<f64>,
    alpha: f64,
) -> Result<(FlowLoss, FlowModel)> {
    let rows = z.nrows();
    if rows == 0 {
        return Err(Error::Usage("flow loss needs a non-empty batch".into()));
    }
    check_dim("latent", model.latent_dim(), z.ncols())?;
    check_dim("condition", model.cond_dim(), c.ncols())?;
    check_dim("condition rows", rows, c.nrows())?;
    let w = 1.0 / rows as f64;

    // inverse pass, caching every block
    let mut h = z.to_owned();
    let mut logdet = Array1::<f64>::zeros(rows);
    let mut ucaches = Vec::with_capacity(model.unconditional.len());
    for b in model.unconditional.iter().rev() {
        let (next, ld, cache) = b.inverse_cached(h.view(), None)?;
        h = next;
        logdet += &ld;
        ucaches.push(cache);
    }
    let m = h.clone();
    let mut ccaches = Vec::with_capacity(model.conditional.len());
    for b in model.conditional.iter().rev() {
        let (next, ld, cache) = b.inverse_cached(h.view(), Some(c))?;
        h = next;
        logdet += &ld;
        ccaches.push(cache);
    }
    let z0 = h;

    let (mu, mu_cache) = model.mean_head.forward_cached(c)?;
    let (raw_ls, ls_cache) = model.log_sigma_head.forward_cached(c)?;
    let log_sigma = raw_ls.mapv(|v| v.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP));

    let mut nll = 0.0;
    for b in 0..rows {
        nll -= diag_gaussian_logprob(z0.row(b), mu.row(b), log_sigma.row(b)) + logdet[b];
    }
    nll *= w;

    let range = model.zc_range();
    let zc_diff = &m.slice(s![.., range.clone()]) - &c;
    let zc = zc_diff.iter().map(|v| v.abs()).sum::<f64>() * w;

    // gradients of the mean NLL with respect to z0 and the base heads
    let inv_var = log_sigma.mapv(|ls| (-2.0 * ls).exp());
    let diff = &z0 - &mu;
    let g_z0 = &diff * &inv_var * w;
    let g_mu = -&g_z0;
    let mut g_ls = (1.0 - &diff * &diff * &inv_var) * w;
    g_ls.zip_mut_with(&raw_ls, |g, &r| {
        if r.abs() >= LOG_SIGMA_CLAMP {
            *g = 0.0
        }
    });
    let g_logdet = Array1::from_elem(rows, -w);

    let mut grads = model.zeros_like();
    model
        .mean_head
        .backward_batch(&mu_cache, g_mu, &mut grads.mean_head)?;
    model
        .log_sigma_head
        .backward_batch(&ls_cache, g_ls, &mut grads.log_sigma_head)?;

    let mut g = g_z0;
    for (i, cache) in ccaches.iter().enumerate().rev() {
        let bi = model.conditional.len() - 1 - i;
        g = model.conditional[bi].inverse_backward(
            cache,
            g,
            g_logdet.view(),
            &mut grads.conditional[bi],
        )?;
    }
    if alpha != 0.0 {
        let g_zc = zc_diff.mapv(|d| alpha * w * sign(d));
        let mut tail = g.slice_mut(s![.., range]);
        tail += &g_zc;
    }
    for (i, cache) in ucaches.iter().enumerate().rev() {
        let bi = model.unconditional.len() - 1 - i;
        g = model.unconditional[bi].inverse_backward(
            cache,
            g,
            g_logdet.view(),
            &mut grads.unconditional[bi],
        )?;
    }

    Ok((
        FlowLoss {
            total: nll + alpha * zc,
            nll,
            zc,
        },
        grads,
    ))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: Some(50.0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainLog {
    /// Mean of the minibatch losses of each epoch.
    pub epochs: Vec<FlowLoss>,
}

/// Trains a flow on `(latent, normalized parameter)` pairs.
pub fn train_flow(
    latents: &[Latent],
    params: &[ParamVector],
    config: FlowConfig,
    train: &FlowTrainConfig,
    seed: u64,
) -> Result<(FlowModel, FlowTrainLog)> {
    if latents.is_empty() {
        return Err(Error::Config(
            "flow training needs at least one pair".into(),
        ));
    }
    check_dim("parameter count", latents.len(), params.len())?;
    if train.batch_size == 0 || train.epochs == 0 {
        return Err(Error::Config(
            "epochs and batch size must be positive".into(),
        ));
    }
    let zs = stack_rows(latents, config.latent_dim)?;
    let cs = stack_rows(params, config.cond_dim)?;
    let alpha = config.alpha;
    let mut model = FlowModel::new(config, derive_seed(seed, 0))?;
    let mut rng = seeded(derive_seed(seed, 1));
    let mut order: Vec<usize> = (0..latents.len()).collect();

    order.shuffle(&mut rng);
    let init_rows = &order[..order.len().min(train.batch_size.max(64))];
    model.initialize_actnorm(
        zs.select(Axis(0), init_rows).view(),
        cs.select(Axis(0), init_rows).view(),
    )?;

    let mut adam = AdamState::for_model(&model);
    let mut log = FlowTrainLog::default();
    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut sum = FlowLoss {
            total: 0.0,
            nll: 0.0,
            zc: 0.0,
        };
        let mut batches = 0.0;
        for chunk in order.chunks(train.batch_size) {
            let zb = zs.select(Axis(0), chunk);
            let cb = cs.select(Axis(0), chunk);
            let (loss, mut grads) = loss_and_grad(&model, zb.view(), cb.view(), alpha)?;
            for (term, v) in [
                ("negative log-likelihood", loss.nll),
                ("condition", loss.zc),
            ] {
                if !v.is_finite() {
                    return Err(Error::Training(format!(
                        "{term} loss became non-finite at epoch {epoch}"
                    )));
                }
            }
            if let Some(max) = train.clip_norm {
                clip_gradients(&mut grads, max);
            }
            adam.step_model(&mut model, &grads, train.learning_rate)?;
            sum.total += loss.total;
            sum.nll += loss.nll;
            sum.zc += loss.zc;
            batches += 1.0;
        }
        log.epochs.push(FlowLoss {
            total: sum.total / batches,
            nll: sum.nll / batches,
            zc: sum.zc / batches,
        });
    }
    Ok((model, log))
}

fn clip_gradients<P: Parameters>(grads: &mut P, max_norm: f64) {
    let norm = grads
        .params()
        .iter()
        .flat_map(|p| p.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for p in grads.params_mut() {
            p.iter_mut().for_each(|v| *v *= k);
        }
    }
}

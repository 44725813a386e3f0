//! Held-out evaluation of a trained autoencoder and flow.

use serde::{Deserialize, Serialize, Serializer};

use crate::autoencoder::AutoencoderModel;
use crate::error::{check_dim, Error, Result};
use crate::flow::FlowModel;
use crate::metrics::{cosine_sim, mae_params, psnr, ssim};
use crate::rng::derive_seed;
use crate::surrogate::{predict_and_quantify, reverse_predict};
use crate::types::{FieldGrid, ParamVector};

/// Writes non-finite values as the string `"infinite"` (or `"nan"`) so
/// identical-field PSNR survives JSON.
fn finite_or_tag<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else {
        s.serialize_str("infinite")
    }
}

fn tagged_or_finite<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Tag(t) if t == "infinite" => Ok(f64::INFINITY),
        Repr::Tag(t) if t == "nan" => Ok(f64::NAN),
        Repr::Tag(t) => Err(serde::de::Error::custom(format!("unknown metric tag {t}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldScore {
    pub index: usize,
    #[serde(
        serialize_with = "finite_or_tag",
        deserialize_with = "tagged_or_finite"
    )]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamScore {
    pub index: usize,
    pub truth: Vec<f64>,
    pub predicted: Vec<f64>,
    pub mae: f64,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub samples: Vec<FieldScore>,
    #[serde(
        serialize_with = "finite_or_tag",
        deserialize_with = "tagged_or_finite"
    )]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub samples: Vec<ParamScore>,
    pub mean_mae: f64,
    pub mean_cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_count: usize,
    pub uq_samples: usize,
    /// `decode(encode(x))` against `x`.
    pub reconstruction: FieldSummary,
    /// Mean of the flow-sampled predictions against `x`.
    pub surrogate: FieldSummary,
    /// Mean per-voxel predictive variance, averaged over samples.
    pub mean_variance: f64,
    pub reverse: ParamSummary,
}

fn summarize(samples: Vec<FieldScore>) -> FieldSummary {
    let n = samples.len() as f64;
    FieldSummary {
        mean_psnr: samples.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: samples.iter().map(|s| s.ssim).sum::<f64>() / n,
        samples,
    }
}

fn score(index: usize, truth: &FieldGrid, pred: &FieldGrid) -> Result<FieldScore> {
    Ok(FieldScore {
        index,
        psnr: psnr(truth, pred)?,
        ssim: ssim(truth, pred)?,
    })
}

/// PSNR and SSIM of index-aligned `predicted` fields against `truth`.
pub fn score_fields(truth: &[FieldGrid], predicted: &[FieldGrid]) -> Result<FieldSummary> {
    check_dim("predicted fields", truth.len(), predicted.len())?;
    if truth.is_empty() {
        return Err(Error::Usage("evaluation needs at least one sample".into()));
    }
    let samples = truth
        .iter()
        .zip(predicted)
        .enumerate()
        .map(|(i, (t, p))| score(i, t, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(samples))
}

/// Scores reconstruction, forward prediction and reverse prediction on
/// paired test samples. Sample `i` draws its flow samples from a seed
/// derived from `seed` and `i`.
pub fn evaluate(
    ae: &AutoencoderModel,
    flow: &FlowModel,
    params: &[ParamVector],
    fields: &[FieldGrid],
    uq_samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_dim("evaluation fields", params.len(), fields.len())?;
    if params.is_empty() {
        return Err(Error::Usage("evaluation needs at least one sample".into()));
    }
    let mut recon = Vec::new();
    let mut surr = Vec::new();
    let mut rev = Vec::new();
    let mut var_total = 0.0;
    for (i, (c, x)) in params.iter().zip(fields).enumerate() {
        recon.push(score(i, x, &ae.reconstruct(x)?)?);
        let uq = predict_and_quantify(flow, ae, c, uq_samples, derive_seed(seed, i as u64))?;
        surr.push(score(i, x, &uq.mean_field)?);
        var_total += uq.var_field.values.iter().sum::<f64>() / uq.var_field.len() as f64;
        let p = reverse_predict(flow, ae, x)?;
        rev.push(ParamScore {
            index: i,
            mae: mae_params(&p, c)?,
            cosine: cosine_sim(&p, c)?,
            truth: c.0.clone(),
            predicted: p.0,
        });
    }
    let n = params.len() as f64;
    Ok(EvalReport {
        sample_count: params.len(),
        uq_samples,
        reconstruction: summarize(recon),
        surrogate: summarize(surr),
        mean_variance: var_total / n,
        reverse: ParamSummary {
            mean_mae: rev.iter().map(|s| s.mae).sum::<f64>() / n,
            mean_cosine: rev.iter().map(|s| s.cosine).sum::<f64>() / n,
            samples: rev,
        },
    })
}

//! The three fitness terms and their weighted combination.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flow::FlowModel;
use crate::metrics::cosine_sim;
use crate::surrogate::predict_latent_stats;
use crate::types::{Latent, ParamVector};

/// Floor added to the cosine distance.
pub const SIM_EPS: f64 = 1e-6;
/// Largest magnitude of a single preference's similarity term, per unit score.
pub const SIM_CAP: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceEntry {
    pub params: ParamVector,
    pub score: f64,
    pub latent_mean: Latent,
}

impl PreferenceEntry {
    pub fn new(params: ParamVector, score: f64, latent_mean: Latent) -> Result<Self> {
        if !(-1.0..=1.0).contains(&score) {
            return Err(Error::Domain(format!(
                "preference score {score} is outside [-1, 1]"
            )));
        }
        if !params.in_unit_box(0.0) {
            return Err(Error::Domain(
                "preference parameters must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            params,
            score,
            latent_mean,
        })
    }

    /// Scores `params` and caches its latent mean from `uq_samples` flow draws.
    pub fn from_flow(
        flow: &FlowModel,
        params: ParamVector,
        score: f64,
        uq_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let (mean, _) = predict_latent_stats(flow, &params, uq_samples, seed)?;
        Self::new(params, score, mean)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl FitnessWeights {
    pub fn new(w1: f64, w2: f64, w3: f64) -> Result<Self> {
        let w = Self { w1, w2, w3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "weight {name} = {v} is outside [-1, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn combine(&self, c: &Components) -> f64 {
        self.w1 * c.sim + self.w2 * c.div + self.w3 * c.unc
    }
}

impl Default for FitnessWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 0.0,
            w3: 0.0,
        }
    }
}

fn check_prefs(prefs: &[PreferenceEntry]) -> Result<()> {
    if prefs.is_empty() {
        return Err(Error::Usage(
            "at least one preference entry is required".into(),
        ));
    }
    Ok(())
}

/// Sum over preferences of `score / ((1 - cos) + eps)`, each term capped.
pub fn similarity_score(latent: &Latent, prefs: &[PreferenceEntry]) -> Result<f64> {
    check_prefs(prefs)?;
    let mut total = 0.0;
    for p in prefs {
        check_dim("preference latent", latent.dim(), p.latent_mean.dim())?;
        let dist = (1.0 - cosine_sim(latent, &p.latent_mean)?) + SIM_EPS;
        let cap = SIM_CAP * p.score.abs();
        total += (p.score / dist).clamp(-cap, cap);
    }
    Ok(total)
}

/// Sum of L1 distances to the `min(k, |prefs|)` nearest preferences.
pub fn diversity_score(c: &ParamVector, prefs: &[PreferenceEntry], k: usize) -> Result<f64> {
    check_prefs(prefs)?;
    let mut dists = prefs
        .iter()
        .map(|p| {
            check_dim("preference parameters", c.dim(), p.params.dim())?;
            Ok(c.iter()
                .zip(p.params.iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    dists.sort_by(f64::total_cmp);
    Ok(dists.iter().take(k).sum())
}

/// Mean of the latent variance entries.
pub fn uncertainty_score(var: &[f64]) -> Result<f64> {
    if var.is_empty() {
        return Err(Error::Usage("empty variance vector".into()));
    }
    if let Some((i, v)) = var.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Domain(format!(
            "variance entry {i} = {v} must be non-negative"
        )));
    }
    Ok(var.iter().sum::<f64>() / var.len() as f64)
}

/// Fitness components of one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub sim: f64,
    pub div: f64,
    pub unc: f64,
    pub latent_mean: Latent,
    pub latent_var: Latent,
}

/// Anything that can score a parameter vector. `seed` drives any sampling.
pub trait FitnessModel {
    fn components(&self, c: &ParamVector, seed: u64) -> Result<Components>;
}

/// The surrogate-backed fitness: latent statistics from the flow.
pub struct FlowFitness<'a> {
    pub flow: &'a FlowModel,
    pub prefs: &'a [PreferenceEntry],
    pub k: usize,
    pub uq_samples: usize,
}

impl FitnessModel for FlowFitness<'_> {
    fn components(&self, c: &ParamVector, seed: u64) -> Result<Components> {
        let (mean, var) = predict_latent_stats(self.flow, c, self.uq_samples, seed)?;
        Ok(Components {
            sim: similarity_score(&mean, self.prefs)?,
            div: diversity_score(c, self.prefs, self.k)?,
            unc: uncertainty_score(&var)?,
            latent_mean: mean,
            latent_var: var,
        })
    }
}

/// Analytic fitness reported through the `sim` term; the flow is bypassed
/// and the parameters stand in for the latent mean.
pub struct StubFitness<F>(pub F);

impl<F: Fn(&ParamVector) -> f64> FitnessModel for StubFitness<F> {
    fn components(&self, c: &ParamVector, _seed: u64) -> Result<Components> {
        Ok(Components {
            sim: (self.0)(c),
            div: 0.0,
            unc: 0.0,
            latent_mean: Latent(c.0.clone()),
            latent_var: Latent::zeros(c.dim()),
        })
    }
}

/// Evaluates `c` and returns its components with the weighted total.
pub fn fitness(
    model: &dyn FitnessModel,
    c: &ParamVector,
    weights: &FitnessWeights,
    seed: u64,
) -> Result<(Components, f64)> {
    let comp = model.components(c, seed)?;
    let f = weights.combine(&comp);
    Ok((comp, f))
}

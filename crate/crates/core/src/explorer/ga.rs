//! Genetic search over the normalized parameter box.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::fitness::{Components, FitnessModel, FitnessWeights};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};
use crate::types::{Latent, ParamVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub mutation_sigma: f64,
    pub k_nearest: usize,
    pub elite: usize,
    pub uq_samples: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 40,
            generations: 30,
            mutation_rate: 0.2,
            mutation_sigma: 0.1,
            k_nearest: 5,
            elite: 1,
            uq_samples: 8,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("population must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Config("mutation rate must be in [0, 1]".into()));
        }
        if !(self.mutation_sigma > 0.0) {
            return Err(Error::Config("mutation sigma must be positive".into()));
        }
        if self.k_nearest < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.elite >= self.population {
            return Err(Error::Config(
                "elite count must be below the population size".into(),
            ));
        }
        if self.uq_samples < 1 {
            return Err(Error::Config("uq samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u64,
    pub params: ParamVector,
    pub latent_mean: Latent,
    pub latent_var: Latent,
    pub sim: f64,
    pub div: f64,
    pub unc: f64,
    /// `None` until evaluated.
    pub fitness: Option<f64>,
    pub parents: Vec<u64>,
    /// Carried over unchanged; its single parent is its previous copy.
    pub elite: bool,
}

impl Candidate {
    pub fn unevaluated(id: u64, params: ParamVector, parents: Vec<u64>) -> Self {
        Self {
            id,
            params,
            latent_mean: Latent::default(),
            latent_var: Latent::default(),
            sim: 0.0,
            div: 0.0,
            unc: 0.0,
            fitness: None,
            parents,
            elite: false,
        }
    }

    fn set_evaluation(&mut self, comp: Components, f: f64) {
        self.sim = comp.sim;
        self.div = comp.div;
        self.unc = comp.unc;
        self.latent_mean = comp.latent_mean;
        self.latent_var = comp.latent_var;
        self.fitness = Some(f);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub index: usize,
    pub candidates: Vec<Candidate>,
    pub weights: FitnessWeights,
    pub mean_fitness: f64,
    pub max_fitness: f64,
}

impl GenerationRecord {
    fn new(index: usize, candidates: Vec<Candidate>, weights: FitnessWeights) -> Self {
        let fs: Vec<f64> = candidates.iter().filter_map(|c| c.fitness).collect();
        Self {
            index,
            weights,
            mean_fitness: fs.iter().sum::<f64>() / fs.len() as f64,
            max_fitness: fs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            candidates,
        }
    }

    pub fn best(&self) -> Option<&Candidate> {
        self.candidates.iter().max_by(|a, b| {
            a.fitness
                .unwrap_or(f64::NEG_INFINITY)
                .total_cmp(&b.fitness.unwrap_or(f64::NEG_INFINITY))
        })
    }
}

fn fitness_values(population: &[Candidate]) -> Result<Vec<f64>> {
    population
        .iter()
        .map(|c| {
            c.fitness
                .ok_or_else(|| Error::Usage(format!("candidate {} has not been evaluated", c.id)))
        })
        .collect()
}

/// Rank-roulette probabilities: rank 1 for the worst up to `p` for the
/// best, tied candidates sharing the average of their ranks.
pub fn selection_probabilities(population: &[Candidate]) -> Result<Vec<f64>> {
    let f = fitness_values(population)?;
    let p = f.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| f[a].total_cmp(&f[b]));
    let mut ranks = vec![0.0; p];
    let mut i = 0;
    while i < p {
        let mut j = i;
        while j + 1 < p && f[order[j + 1]] == f[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    let total = (p * (p + 1)) as f64 / 2.0;
    Ok(ranks.into_iter().map(|r| r / total).collect())
}

fn draw(cumulative: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
    cumulative
        .partition_point(|&c| c <= u)
        .min(cumulative.len() - 1)
}

/// Draws `count` parent index pairs by rank roulette.
pub fn select(
    population: &[Candidate],
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<(usize, usize)>> {
    let probs = selection_probabilities(population)?;
    let cumulative: Vec<f64> = probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    Ok((0..count)
        .map(|_| (draw(&cumulative, rng), draw(&cumulative, rng)))
        .collect())
}

/// Single-point crossover: prefix from `a`, suffix from `b`. With fewer
/// than two coordinates one parent is picked uniformly.
pub fn crossover(a: &ParamVector, b: &ParamVector, rng: &mut Rng) -> Result<ParamVector> {
    if a.dim() != b.dim() {
        return Err(Error::shape("crossover parents", a.dim(), b.dim()));
    }
    let n = a.dim();
    if n < 2 {
        return Ok(if rng.random::<bool>() {
            a.clone()
        } else {
            b.clone()
        });
    }
    let cut = rng.random_range(1..n);
    Ok(crossover_at(a, b, cut))
}

pub fn crossover_at(a: &ParamVector, b: &ParamVector, cut: usize) -> ParamVector {
    ParamVector(a[..cut].iter().chain(&b[cut..]).copied().collect())
}

/// Per-coordinate Gaussian perturbation without clamping.
pub fn perturb(c: &ParamVector, rate: f64, sigma: f64, rng: &mut Rng) -> ParamVector {
    let noise = Normal::new(0.0, sigma).expect("sigma validated positive");
    ParamVector(
        c.iter()
            .map(|&v| {
                if rng.random::<f64>() < rate {
                    v + noise.sample(rng)
                } else {
                    v
                }
            })
            .collect(),
    )
}

pub fn mutate(c: &ParamVector, rate: f64, sigma: f64, rng: &mut Rng) -> ParamVector {
    perturb(c, rate, sigma, rng).clamped_unit()
}

/// Called after each generation is evaluated.
pub type Progress<'a> = dyn FnMut(&GenerationRecord) + 'a;

fn evaluate_all(
    model: &dyn FitnessModel,
    candidates: &mut [Candidate],
    weights: &FitnessWeights,
    seed: u64,
) -> Result<()> {
    for c in candidates.iter_mut().filter(|c| c.fitness.is_none()) {
        let comp = model.components(&c.params, derive_seed(seed, c.id))?;
        let f = weights.combine(&comp);
        if !f.is_finite() {
            return Err(Error::Training(format!(
                "candidate {} has non-finite fitness {f}",
                c.id
            )));
        }
        c.set_evaluation(comp, f);
    }
    Ok(())
}

/// Runs the search and returns every generation, the initial one first.
pub fn optimize(
    config: &GaConfig,
    param_dim: usize,
    model: &dyn FitnessModel,
    weights: &FitnessWeights,
    mut progress: Option<&mut Progress<'_>>,
) -> Result<Vec<GenerationRecord>> {
    config.validate()?;
    weights.validate()?;
    if param_dim < 1 {
        return Err(Error::Config(
            "parameter dimension must be at least 1".into(),
        ));
    }
    let eval_seed = derive_seed(config.seed, 1);
    let mut rng = seeded(derive_seed(config.seed, 0));
    let mut next_id = 0u64;
    let mut fresh_id = || {
        next_id += 1;
        next_id - 1
    };

    let mut population: Vec<Candidate> = (0..config.population)
        .map(|_| {
            let params = ParamVector((0..param_dim).map(|_| rng.random::<f64>()).collect());
            Candidate::unevaluated(fresh_id(), params, Vec::new())
        })
        .collect();
    evaluate_all(model, &mut population, weights, eval_seed)?;
    let mut history = vec![GenerationRecord::new(0, population, *weights)];
    if let Some(cb) = progress.as_mut() {
        cb(&history[0]);
    }

    for g in 1..=config.generations {
        let prev = &history[g - 1].candidates;
        let mut ranked: Vec<&Candidate> = prev.iter().collect();
        ranked.sort_by(|a, b| {
            b.fitness
                .unwrap()
                .total_cmp(&a.fitness.unwrap())
                .then(a.id.cmp(&b.id))
        });
        let mut next: Vec<Candidate> = ranked[..config.elite]
            .iter()
            .map(|c| Candidate {
                id: fresh_id(),
                parents: vec![c.id],
                elite: true,
                ..(*c).clone()
            })
            .collect();
        for (a, b) in select(prev, config.population - config.elite, &mut rng)? {
            let child = crossover(&prev[a].params, &prev[b].params, &mut rng)?;
            let child = mutate(
                &child,
                config.mutation_rate,
                config.mutation_sigma,
                &mut rng,
            );
            let parents = if a == b {
                vec![prev[a].id]
            } else {
                vec![prev[a].id, prev[b].id]
            };
            next.push(Candidate::unevaluated(fresh_id(), child, parents));
        }
        evaluate_all(model, &mut next, weights, eval_seed)?;
        history.push(GenerationRecord::new(g, next, *weights));
        if let Some(cb) = progress.as_mut() {
            cb(&history[g]);
        }
    }
    Ok(history)
}

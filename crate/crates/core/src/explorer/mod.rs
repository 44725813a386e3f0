//! Preference-guided genetic exploration of the parameter space, with
//! clustering of the final generation into a few recommendations.

mod cluster;
mod fitness;
mod ga;

pub use cluster::{kmeans, project2d, KMeansResult, Projection, KMEANS_MAX_ITERS, KMEANS_TOL};
pub use fitness::{
    diversity_score, fitness, similarity_score, uncertainty_score, Components, FitnessModel,
    FitnessWeights, FlowFitness, PreferenceEntry, StubFitness, SIM_CAP, SIM_EPS,
};
pub use ga::{
    crossover, crossover_at, mutate, optimize, perturb, select, selection_probabilities, Candidate,
    GaConfig, GenerationRecord, Progress,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::rng::derive_seed;
use crate::surrogate::{reverse_predict_latent, ParamSpace};
use crate::types::{Latent, ParamVector};

/// Default number of recommendation clusters.
pub const DEFAULT_CLUSTERS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub cluster: usize,
    pub center: Latent,
    pub params: ParamVector,
    pub members: Vec<u64>,
    pub mean_fitness: f64,
}

/// Clusters the latent means of `generation` and maps each center back to
/// parameters through the unconditional flow.
pub fn cluster_and_recommend(
    generation: &GenerationRecord,
    k: usize,
    flow: &FlowModel,
    seed: u64,
) -> Result<(Vec<Recommendation>, KMeansResult)> {
    let cands = &generation.candidates;
    if k < 1 || k > cands.len() {
        return Err(Error::Usage(format!(
            "cluster count {k} must be in 1..={}",
            cands.len()
        )));
    }
    let points: Vec<Vec<f64>> = cands.iter().map(|c| c.latent_mean.0.clone()).collect();
    let km = kmeans(&points, k, seed)?;
    let recs = km
        .centers
        .iter()
        .enumerate()
        .map(|(i, center)| {
            let members: Vec<&Candidate> = cands
                .iter()
                .zip(&km.assignments)
                .filter(|(_, &a)| a == i)
                .map(|(c, _)| c)
                .collect();
            let center = Latent(center.clone());
            Ok(Recommendation {
                cluster: i,
                params: reverse_predict_latent(flow, &center)?,
                center,
                mean_fitness: members.iter().filter_map(|c| c.fitness).sum::<f64>()
                    / members.len().max(1) as f64,
                members: members.iter().map(|c| c.id).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((recs, km))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineageCandidate {
    pub id: u64,
    pub params_normalized: Vec<f64>,
    pub params_raw: Vec<f64>,
    pub sim: f64,
    pub div: f64,
    pub unc: f64,
    pub fitness: Option<f64>,
    pub parents: Vec<u64>,
    pub elite: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineageGeneration {
    pub index: usize,
    pub weights: FitnessWeights,
    pub mean_fitness: f64,
    pub max_fitness: f64,
    pub candidates: Vec<LineageCandidate>,
}

/// Generation-by-generation record of the search for line and flow charts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub param_names: Vec<String>,
    pub generations: Vec<LineageGeneration>,
}

pub fn export_lineage(history: &[GenerationRecord], space: &ParamSpace) -> Result<Lineage> {
    let generations = history
        .iter()
        .map(|g| {
            let candidates = g
                .candidates
                .iter()
                .map(|c| {
                    Ok(LineageCandidate {
                        id: c.id,
                        params_raw: space.denormalize(&c.params)?,
                        params_normalized: c.params.0.clone(),
                        sim: c.sim,
                        div: c.div,
                        unc: c.unc,
                        fitness: c.fitness,
                        parents: c.parents.clone(),
                        elite: c.elite,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LineageGeneration {
                index: g.index,
                weights: g.weights,
                mean_fitness: g.mean_fitness,
                max_fitness: g.max_fitness,
                candidates,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Lineage {
        param_names: space.names.clone(),
        generations,
    })
}

/// Builds a preference from raw parameters; the cached latent mean comes
/// from `uq_samples` flow draws under `seed`.
pub fn preference_from_raw(
    flow: &FlowModel,
    space: &ParamSpace,
    raw: &[f64],
    score: f64,
    uq_samples: usize,
    seed: u64,
) -> Result<PreferenceEntry> {
    PreferenceEntry::from_flow(flow, space.normalize(raw)?, score, uq_samples, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationReport {
    pub cluster: usize,
    pub size: usize,
    pub params_normalized: Vec<f64>,
    pub params_raw: Vec<f64>,
    pub mean_fitness: f64,
    /// Cluster center in the projection plane.
    pub point: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedCandidate {
    pub id: u64,
    pub point: [f64; 2],
    pub cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendOutput {
    pub recommendations: Vec<RecommendationReport>,
    pub projection: Vec<ProjectedCandidate>,
    pub sse_history: Vec<f64>,
}

/// Clusters `generation`, maps centers back to raw parameters and projects
/// every candidate into 2D with its cluster label.
pub fn recommend(
    generation: &GenerationRecord,
    k: usize,
    flow: &FlowModel,
    space: &ParamSpace,
    seed: u64,
) -> Result<RecommendOutput> {
    let (recs, km) = cluster_and_recommend(generation, k, flow, seed)?;
    let points: Vec<Vec<f64>> = generation
        .candidates
        .iter()
        .map(|c| c.latent_mean.0.clone())
        .collect();
    let proj = project2d(&points)?;
    let recommendations = recs
        .iter()
        .map(|r| {
            Ok(RecommendationReport {
                cluster: r.cluster,
                size: r.members.len(),
                params_raw: space.denormalize(&r.params)?,
                params_normalized: r.params.0.clone(),
                mean_fitness: r.mean_fitness,
                point: proj.project(&r.center)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let projection = generation
        .candidates
        .iter()
        .zip(&proj.points)
        .zip(&km.assignments)
        .map(|((c, &point), &cluster)| ProjectedCandidate {
            id: c.id,
            point,
            cluster,
        })
        .collect();
    Ok(RecommendOutput {
        recommendations,
        projection,
        sse_history: km.sse_history,
    })
}

/// Seed used for clustering at the end of a run with GA seed `seed`.
pub fn cluster_seed(seed: u64) -> u64 {
    derive_seed(seed, 2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub lineage: Lineage,
    #[serde(flatten)]
    pub recommend: RecommendOutput,
}

/// Headless exploration: GA search, lineage export, clustering and
/// projection of the final generation.
pub fn explore(
    flow: &FlowModel,
    space: &ParamSpace,
    prefs: &[PreferenceEntry],
    weights: &FitnessWeights,
    config: &GaConfig,
    clusters: usize,
    progress: Option<&mut Progress<'_>>,
) -> Result<(Vec<GenerationRecord>, ExplorationReport)> {
    let model = FlowFitness {
        flow,
        prefs,
        k: config.k_nearest,
        uq_samples: config.uq_samples,
    };
    let generations = optimize(config, flow.cond_dim(), &model, weights, progress)?;
    let last = generations
        .last()
        .expect("optimize returns at least one generation");
    let recommend = recommend(last, clusters, flow, space, cluster_seed(config.seed))?;
    let lineage = export_lineage(&generations, space)?;
    Ok((generations, ExplorationReport { lineage, recommend }))
}

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use paramflow::dataset::field_from_le_bytes;
use paramflow::explorer::{
    cluster_seed, export_lineage, optimize, preference_from_raw, recommend as recommend_run,
    FitnessWeights, FlowFitness, GaConfig, GenerationRecord, Lineage, PreferenceEntry,
};
use paramflow::surrogate::{predict_and_quantify, reverse_predict, ParamSpace};
use paramflow::{Error, FieldGrid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::session::{AppState, GaRun, RunStatus, Session, SessionState, StoredPreference};

pub type Shared = Arc<AppState>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(ApiError::bad_payload)
}

/// JSON response with exactly the bytes of `serde_json::to_vec(value)`.
pub fn json_bytes<T: Serialize>(status: StatusCode, value: &T) -> Response {
    match serde_json::to_vec(value) {
        Ok(bytes) => (status, [("content-type", "application/json")], bytes).into_response(),
        Err(e) => ApiError::from(Error::Format(e.to_string())).into_response(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: String,
    pub ae: String,
    pub flow: String,
    pub seed: Option<u64>,
    pub uq_samples: Option<usize>,
}

pub async fn create_session(State(app): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse(&body)?;
    let seed = req.seed.unwrap_or(app.defaults.seed);
    let uq = req.uq_samples.unwrap_or(app.defaults.uq_samples);
    let app2 = app.clone();
    let state = tokio::task::spawn_blocking(move || {
        app2.create(&req.dataset, &req.ae, &req.flow, seed, uq)
    })
    .await
    .map_err(|e| Error::Training(e.to_string()))??;
    Ok(json_bytes(StatusCode::CREATED, &SessionView::of(&state)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: usize,
    pub status: RunStatus,
    pub seed: u64,
    pub generations_completed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub dataset: String,
    pub ae: String,
    pub flow: String,
    pub seed: u64,
    pub uq_samples: usize,
    pub param_space: ParamSpace,
    /// `"idle"` or `"running"`.
    pub status: String,
    pub preferences: Vec<StoredPreference>,
    pub runs: Vec<RunSummary>,
}

impl SessionView {
    pub fn of(s: &SessionState) -> Self {
        Self {
            id: s.id.clone(),
            dataset: s.dataset.clone(),
            ae: s.ae.clone(),
            flow: s.flow.clone(),
            seed: s.seed,
            uq_samples: s.uq_samples,
            param_space: s.param_space.clone(),
            status: if s.active_run().is_some() {
                "running"
            } else {
                "idle"
            }
            .into(),
            preferences: s.preferences.clone(),
            runs: s
                .runs
                .iter()
                .map(|r| RunSummary {
                    id: r.id,
                    status: r.status.clone(),
                    seed: r.config.seed,
                    generations_completed: r.generations.len(),
                })
                .collect(),
        }
    }
}

pub async fn get_session(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let view = SessionView::of(&session.lock());
    Ok(json_bytes(StatusCode::OK, &view))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> paramflow::Result<T> + Send + 'static,
) -> ApiResult<T> {
    Ok(tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::Training(e.to_string()))??)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub params: Vec<f64>,
    pub n_samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    /// 0 fixes depth, 1 height, 2 width.
    pub axis: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// The three central planes of `field`.
pub fn central_slices(field: &FieldGrid) -> Vec<Slice> {
    (0..3)
        .map(|axis| {
            let (rows, cols, values) = field.central_slice(axis);
            Slice {
                axis,
                rows,
                cols,
                values,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub params_raw: Vec<f64>,
    pub params_normalized: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub dims: [usize; 3],
    pub value_range: (f64, f64),
    pub mean: Vec<Slice>,
    pub variance: Vec<Slice>,
    pub mean_latent: Vec<f64>,
    pub var_latent: Vec<f64>,
    /// Mean latent variance, the GA's uncertainty term.
    pub mean_uncertainty: f64,
    /// Mean of the per-voxel variance field.
    pub mean_field_variance: f64,
}

pub async fn predict(
    State(app): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: PredictRequest = parse(&body)?;
    let session = app.session(&id)?;
    let (seed, default_n) = {
        let s = session.lock();
        (s.seed, s.uq_samples)
    };
    let n = req.n_samples.unwrap_or(default_n);
    let models = session.models.clone();
    let resp = blocking(move || {
        let c = models.space.normalize(&req.params)?;
        let uq = predict_and_quantify(&models.flow, &models.ae, &c, n, seed)?;
        let var = &uq.var_latent;
        Ok(PredictResponse {
            params_raw: req.params,
            params_normalized: c.0,
            n_samples: n,
            seed,
            dims: uq.mean_field.dims,
            value_range: models.value_range,
            mean: central_slices(&uq.mean_field),
            variance: central_slices(&uq.var_field),
            mean_uncertainty: paramflow::explorer::uncertainty_score(var)?,
            mean_field_variance: uq.var_field.values.iter().sum::<f64>()
                / uq.var_field.len() as f64,
            mean_latent: uq.mean_latent.0,
            var_latent: uq.var_latent.0,
        })
    })
    .await?;
    Ok(json_bytes(StatusCode::OK, &resp))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTable {
    pub preferences: Vec<StoredPreference>,
}

fn table(s: &SessionState) -> PreferenceTable {
    PreferenceTable {
        preferences: s.preferences.clone(),
    }
}

fn insert_preference(s: &mut SessionState, pref: StoredPreference) {
    let dup = s
        .preferences
        .iter()
        .any(|p| p.params_raw == pref.params_raw && p.entry.score == pref.entry.score);
    if !dup {
        s.preferences.push(pref);
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceRequest {
    pub params: Vec<f64>,
    pub score: f64,
}

fn check_score(score: f64) -> ApiResult<()> {
    if !(-1.0..=1.0).contains(&score) {
        return Err(Error::Domain(format!("preference score {score} is outside [-1, 1]")).into());
    }
    Ok(())
}

pub async fn add_preference(
    State(app): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: PreferenceRequest = parse(&body)?;
    check_score(req.score)?;
    let session = app.session(&id)?;
    let (seed, n) = {
        let s = session.lock();
        (s.seed, s.uq_samples)
    };
    let models = session.models.clone();
    let raw = req.params.clone();
    let entry = blocking(move || {
        preference_from_raw(&models.flow, &models.space, &raw, req.score, n, seed)
    })
    .await?;
    let mut s = session.lock();
    insert_preference(
        &mut s,
        StoredPreference {
            params_raw: req.params,
            entry,
        },
    );
    app.persist(&s)?;
    Ok(json_bytes(StatusCode::OK, &table(&s)))
}

pub async fn list_preferences(
    State(app): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let t = table(&session.lock());
    Ok(json_bytes(StatusCode::OK, &t))
}

pub async fn delete_preference(
    State(app): State<Shared>,
    Path((id, idx)): Path<(String, usize)>,
) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let mut s = session.lock();
    if idx >= s.preferences.len() {
        return Err(ApiError::not_found(format!(
            "preference {idx} of session {id}"
        )));
    }
    s.preferences.remove(idx);
    app.persist(&s)?;
    Ok(json_bytes(StatusCode::OK, &table(&s)))
}

/// Optional overrides of the service's default GA settings.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaRequest {
    pub weights: Option<FitnessWeights>,
    pub seed: Option<u64>,
    pub population: Option<usize>,
    pub generations: Option<usize>,
    pub mutation_rate: Option<f64>,
    pub mutation_sigma: Option<f64>,
    pub k_nearest: Option<usize>,
    pub elite: Option<usize>,
    pub uq_samples: Option<usize>,
}

impl GaRequest {
    fn apply(&self, base: GaConfig) -> GaConfig {
        GaConfig {
            population: self.population.unwrap_or(base.population),
            generations: self.generations.unwrap_or(base.generations),
            mutation_rate: self.mutation_rate.unwrap_or(base.mutation_rate),
            mutation_sigma: self.mutation_sigma.unwrap_or(base.mutation_sigma),
            k_nearest: self.k_nearest.unwrap_or(base.k_nearest),
            elite: self.elite.unwrap_or(base.elite),
            uq_samples: self.uq_samples.unwrap_or(base.uq_samples),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunView {
    pub id: usize,
    pub status: RunStatus,
    pub config: GaConfig,
    pub weights: FitnessWeights,
    pub generations_completed: usize,
    pub mean_fitness: Vec<f64>,
    pub max_fitness: Vec<f64>,
    /// Generations completed so far.
    pub lineage: Lineage,
}

fn run_view(run: &GaRun, space: &ParamSpace) -> paramflow::Result<RunView> {
    Ok(RunView {
        id: run.id,
        status: run.status.clone(),
        config: run.config.clone(),
        weights: run.weights,
        generations_completed: run.generations.len(),
        mean_fitness: run.generations.iter().map(|g| g.mean_fitness).collect(),
        max_fitness: run.generations.iter().map(|g| g.max_fitness).collect(),
        lineage: export_lineage(&run.generations, space)?,
    })
}

pub async fn start_ga(
    State(app): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: GaRequest = if body.is_empty() {
        GaRequest::default()
    } else {
        parse(&body)?
    };
    let session = app.session(&id)?;
    let (run_id, config, weights, prefs, view) = {
        let mut s = session.lock();
        if let Some(r) = s.active_run() {
            return Err(
                Error::Conflict(format!("run {} of session {id} is still running", r.id)).into(),
            );
        }
        if s.preferences.is_empty() {
            return Err(Error::Usage("a GA run needs at least one preference".into()).into());
        }
        let config = req.apply(app.defaults.ga_config(s.seed));
        config.validate()?;
        let weights = req.weights.unwrap_or(app.defaults.explorer.weights);
        weights.validate()?;
        let run = GaRun {
            id: s.runs.len(),
            config: config.clone(),
            weights,
            preferences: s.preferences.clone(),
            status: RunStatus::Running {
                completed: 0,
                total: config.generations + 1,
            },
            generations: Vec::new(),
        };
        let view = run_view(&run, &session.models.space)?;
        let prefs: Vec<PreferenceEntry> = s.preferences.iter().map(|p| p.entry.clone()).collect();
        s.runs.push(run);
        app.persist(&s)?;
        (s.runs.len() - 1, config, weights, prefs, view)
    };
    let app2 = app.clone();
    tokio::task::spawn_blocking(move || run_ga(&app2, &session, run_id, &config, &weights, &prefs));
    Ok(json_bytes(StatusCode::ACCEPTED, &view))
}

fn run_ga(
    app: &AppState,
    session: &Session,
    run_id: usize,
    config: &GaConfig,
    weights: &FitnessWeights,
    prefs: &[PreferenceEntry],
) {
    let models = &session.models;
    let model = FlowFitness {
        flow: &models.flow,
        prefs,
        k: config.k_nearest,
        uq_samples: config.uq_samples,
    };
    let mut progress = |g: &GenerationRecord| {
        let mut s = session.lock();
        let run = &mut s.runs[run_id];
        run.generations.push(g.clone());
        if let RunStatus::Running { completed, .. } = &mut run.status {
            *completed = run.generations.len();
        }
    };
    let result = optimize(
        config,
        models.flow.cond_dim(),
        &model,
        weights,
        Some(&mut progress),
    );
    let mut s = session.lock();
    let run = &mut s.runs[run_id];
    match result {
        Ok(generations) => {
            run.generations = generations;
            run.status = RunStatus::Done;
        }
        Err(e) => {
            run.status = RunStatus::Failed {
                reason: e.to_string(),
            }
        }
    }
    if let Err(e) = app.persist(&s) {
        eprintln!("failed to persist session {}: {e}", s.id);
    }
}

pub async fn poll_ga(
    State(app): State<Shared>,
    Path((id, run)): Path<(String, usize)>,
) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let run = session.lock().run(run)?.clone();
    let view = run_view(&run, &session.models.space)?;
    Ok(json_bytes(StatusCode::OK, &view))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromoteRequest {
    pub candidate: u64,
    pub score: f64,
}

pub async fn promote(
    State(app): State<Shared>,
    Path((id, run)): Path<(String, usize)>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: PromoteRequest = parse(&body)?;
    check_score(req.score)?;
    let session = app.session(&id)?;
    let mut s = session.lock();
    let cand = s
        .run(run)?
        .generations
        .iter()
        .flat_map(|g| &g.candidates)
        .find(|c| c.id == req.candidate)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("candidate {} in run {run}", req.candidate)))?;
    let entry = PreferenceEntry::new(cand.params.clone(), req.score, cand.latent_mean.clone())?;
    let params_raw = session.models.space.denormalize(&cand.params)?;
    insert_preference(&mut s, StoredPreference { params_raw, entry });
    app.persist(&s)?;
    Ok(json_bytes(StatusCode::OK, &table(&s)))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    pub run: usize,
    pub k: Option<usize>,
}

pub async fn recommend(
    State(app): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: RecommendRequest = parse(&body)?;
    let session = app.session(&id)?;
    let run = session.lock().run(req.run)?.clone();
    if run.status != RunStatus::Done {
        return Err(Error::Conflict(format!("run {} has not completed", req.run)).into());
    }
    let k = req.k.unwrap_or(app.defaults.explorer.clusters);
    if k == 0 || k > run.config.population {
        return Err(
            Error::Usage(format!("K = {k} must lie in 1..={}", run.config.population)).into(),
        );
    }
    let models = session.models.clone();
    let out = blocking(move || {
        let last = run
            .generations
            .last()
            .expect("completed runs hold generation 0");
        recommend_run(
            last,
            k,
            &models.flow,
            &models.space,
            cluster_seed(run.config.seed),
        )
    })
    .await?;
    Ok(json_bytes(StatusCode::OK, &out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseResponse {
    pub param_names: Vec<String>,
    pub params_raw: Vec<f64>,
    pub params_normalized: Vec<f64>,
}

/// Body: the field as little-endian f32 values in depth, height, width order.
pub async fn reverse(
    State(app): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let models = session.models.clone();
    let resp = blocking(move || {
        let x = field_from_le_bytes(&body, models.dims, models.value_range)?;
        let c = reverse_predict(&models.flow, &models.ae, &x)?;
        Ok(ReverseResponse {
            param_names: models.space.names.clone(),
            params_raw: models.space.denormalize(&c)?,
            params_normalized: c.0,
        })
    })
    .await?;
    Ok(json_bytes(StatusCode::OK, &resp))
}

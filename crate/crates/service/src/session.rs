use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use paramflow::autoencoder::AutoencoderModel;
use paramflow::checkpoint::Checkpoint;
use paramflow::config::PipelineConfig;
use paramflow::dataset::DatasetMeta;
use paramflow::explorer::{FitnessWeights, GaConfig, GenerationRecord, PreferenceEntry};
use paramflow::flow::FlowModel;
use paramflow::io::{read_json, write_json};
use paramflow::surrogate::ParamSpace;
use paramflow::{Error, Result};
use serde::{Deserialize, Serialize};

/// Frozen models and dataset metadata a session works against.
pub struct Models {
    pub ae: AutoencoderModel,
    pub flow: FlowModel,
    pub space: ParamSpace,
    pub dims: [usize; 3],
    pub value_range: (f64, f64),
}

impl Models {
    /// Loads `datasets/{dataset}.json` and `checkpoints/{ae,flow}.json`
    /// under `data`, checking the flow was trained on that autoencoder.
    pub fn load(data: &Path, dataset: &str, ae: &str, flow: &str) -> Result<Self> {
        let meta: DatasetMeta = read_json(&dataset_path(data, dataset))?;
        let ae = Checkpoint::load(&checkpoint_path(data, ae))?.into_autoencoder()?;
        let flow = Checkpoint::load(&checkpoint_path(data, flow))?.into_flow_for(&ae)?;
        if ae.config.dims != meta.dims {
            return Err(Error::Conflict(format!(
                "autoencoder dims {:?} do not match dataset dims {:?}",
                ae.config.dims, meta.dims
            )));
        }
        if flow.cond_dim() != meta.param_space.dim() {
            return Err(Error::Conflict(format!(
                "flow conditions on {} parameters but the dataset has {}",
                flow.cond_dim(),
                meta.param_space.dim()
            )));
        }
        Ok(Self {
            ae,
            flow,
            space: meta.param_space,
            dims: meta.dims,
            value_range: meta.value_range,
        })
    }
}

fn safe_id(id: &str) -> Result<&str> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(id)
    } else {
        Err(Error::Usage(format!("invalid artifact id {id:?}")))
    }
}

pub fn dataset_path(data: &Path, id: &str) -> PathBuf {
    data.join("datasets").join(format!("{id}.json"))
}

pub fn checkpoint_path(data: &Path, id: &str) -> PathBuf {
    data.join("checkpoints").join(format!("{id}.json"))
}

pub fn session_path(data: &Path, id: &str) -> PathBuf {
    data.join("sessions").join(format!("{id}.json"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredPreference {
    pub params_raw: Vec<f64>,
    #[serde(flatten)]
    pub entry: PreferenceEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running { completed: usize, total: usize },
    Done,
    Failed { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaRun {
    pub id: usize,
    pub config: GaConfig,
    pub weights: FitnessWeights,
    /// Preference table the run was started with.
    pub preferences: Vec<StoredPreference>,
    pub status: RunStatus,
    pub generations: Vec<GenerationRecord>,
}

/// Persisted document of one session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub dataset: String,
    pub ae: String,
    pub flow: String,
    pub seed: u64,
    pub uq_samples: usize,
    pub param_space: ParamSpace,
    pub preferences: Vec<StoredPreference>,
    pub runs: Vec<GaRun>,
}

impl SessionState {
    pub fn active_run(&self) -> Option<&GaRun> {
        self.runs
            .iter()
            .find(|r| matches!(r.status, RunStatus::Running { .. }))
    }

    pub fn run(&self, id: usize) -> Result<&GaRun> {
        self.runs
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("run {id} of session {}", self.id)))
    }
}

pub struct Session {
    pub models: Arc<Models>,
    state: Mutex<SessionState>,
}

impl Session {
    pub fn lock(&self) -> MutexGuard<'_, SessionState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Shared service state: the data directory, defaults and live sessions.
pub struct AppState {
    pub data: PathBuf,
    pub defaults: PipelineConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

fn session_number(id: &str) -> Option<u64> {
    id.strip_prefix('s')?.parse().ok()
}

impl AppState {
    /// Opens `data`, restoring every persisted session. Runs that were in
    /// progress when the previous process stopped are marked failed.
    pub fn open(data: PathBuf, defaults: PipelineConfig) -> Result<Self> {
        defaults.validate()?;
        let mut sessions = HashMap::new();
        let mut next = 0;
        let dir = data.join("sessions");
        if dir.exists() {
            let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut paths: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            for path in paths {
                let mut state: SessionState = read_json(&path)?;
                let models = Models::load(&data, &state.dataset, &state.ae, &state.flow)?;
                let mut changed = false;
                for run in &mut state.runs {
                    if matches!(run.status, RunStatus::Running { .. }) {
                        run.status = RunStatus::Failed {
                            reason: "service stopped before the run finished".into(),
                        };
                        changed = true;
                    }
                }
                if changed {
                    write_json(&path, &state)?;
                }
                if let Some(n) = session_number(&state.id) {
                    next = next.max(n + 1);
                }
                sessions.insert(
                    state.id.clone(),
                    Arc::new(Session {
                        models: Arc::new(models),
                        state: Mutex::new(state),
                    }),
                );
            }
        }
        Ok(Self {
            data,
            defaults,
            sessions: RwLock::new(sessions),
            next_id: AtomicU64::new(next),
        })
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    pub fn create(
        &self,
        dataset: &str,
        ae: &str,
        flow: &str,
        seed: u64,
        uq_samples: usize,
    ) -> Result<SessionState> {
        if uq_samples == 0 {
            return Err(Error::Usage("uq_samples must be at least 1".into()));
        }
        let models = Models::load(&self.data, safe_id(dataset)?, safe_id(ae)?, safe_id(flow)?)?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let state = SessionState {
            id: id.clone(),
            dataset: dataset.to_string(),
            ae: ae.to_string(),
            flow: flow.to_string(),
            seed,
            uq_samples,
            param_space: models.space.clone(),
            preferences: Vec::new(),
            runs: Vec::new(),
        };
        self.persist(&state)?;
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(
                id,
                Arc::new(Session {
                    models: Arc::new(models),
                    state: Mutex::new(state.clone()),
                }),
            );
        Ok(state)
    }

    pub fn persist(&self, state: &SessionState) -> Result<()> {
        write_json(&session_path(&self.data, &state.id), state)
    }
}

#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use paramflow::autoencoder::{AeConfig, AutoencoderModel};
use paramflow::checkpoint::Checkpoint;
use paramflow::config::PipelineConfig;
use paramflow::dataset::Dataset;
use paramflow::flow::{FlowConfig, FlowInit, FlowModel};
use paramflow::synth::{make_dataset, SynthConfig};
use paramflow_service::{router, AppState};
use tower::ServiceExt;

pub const DIMS: [usize; 3] = [8, 8, 8];
pub const LATENT: usize = 4;

pub fn small_flow(seed: u64) -> FlowModel {
    let mut cfg = FlowConfig::new(LATENT, 4);
    cfg.conditional_blocks = 2;
    cfg.unconditional_blocks = 2;
    cfg.coupling_hidden = vec![8];
    cfg.head_hidden = vec![8];
    cfg.init = FlowInit::Random;
    FlowModel::new(cfg, seed).unwrap()
}

pub fn small_ae(seed: u64) -> AutoencoderModel {
    let mut cfg = AeConfig::new(DIMS, LATENT);
    cfg.hidden = vec![16];
    AutoencoderModel::new(cfg, seed)
}

/// Writes dataset `toy`, checkpoints `ae`, `flow` and a flow `other-flow`
/// trained against a different autoencoder `other-ae`.
pub fn write_fixture(data: &Path) -> Dataset {
    let synth = SynthConfig {
        dims: DIMS,
        param_dim: 4,
        train_count: 12,
        test_count: 4,
    };
    let mut ds = make_dataset(&synth, 5).unwrap();
    ds.save(&data.join("datasets/toy.json")).unwrap();
    let ae = small_ae(1);
    let other = small_ae(2);
    let ckpt = data.join("checkpoints");
    Checkpoint::autoencoder(ae.clone())
        .unwrap()
        .save(&ckpt.join("ae.json"))
        .unwrap();
    Checkpoint::autoencoder(other.clone())
        .unwrap()
        .save(&ckpt.join("other-ae.json"))
        .unwrap();
    Checkpoint::flow(small_flow(3), &ae)
        .unwrap()
        .save(&ckpt.join("flow.json"))
        .unwrap();
    Checkpoint::flow(small_flow(3), &other)
        .unwrap()
        .save(&ckpt.join("other-flow.json"))
        .unwrap();
    ds
}

pub fn defaults() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.seed = 11;
    c.uq_samples = 6;
    c.explorer.population = 12;
    c.explorer.generations = 5;
    c.explorer.uq_samples = 4;
    c.explorer.weights = paramflow::explorer::FitnessWeights::new(1.0, 0.5, -0.5).unwrap();
    c
}

pub fn open(data: &Path) -> (Arc<AppState>, Router) {
    let app = Arc::new(AppState::open(data.to_path_buf(), defaults()).unwrap());
    (app.clone(), router(app))
}

pub async fn call(
    r: &Router,
    method: &str,
    uri: &str,
    body: impl Into<Body>,
) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .body(body.into())
        .unwrap();
    let resp = r.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

pub async fn json(
    r: &Router,
    method: &str,
    uri: &str,
    body: serde_json::Value,
) -> (StatusCode, serde_json::Value) {
    let (s, b) = call(r, method, uri, serde_json::to_vec(&body).unwrap()).await;
    (
        s,
        serde_json::from_slice(&b).unwrap_or(serde_json::Value::Null),
    )
}

pub async fn create(r: &Router) -> String {
    let (s, v) = json(
        r,
        "POST",
        "/sessions",
        serde_json::json!({"dataset": "toy", "ae": "ae", "flow": "flow"}),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

/// Polls a run until it leaves the running state.
pub async fn wait_done(r: &Router, session: &str, run: usize) -> Vec<u8> {
    for _ in 0..2000 {
        let (s, b) = call(
            r,
            "GET",
            &format!("/sessions/{session}/ga/{run}"),
            Body::empty(),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        let v: serde_json::Value = serde_json::from_slice(&b).unwrap();
        if v["status"]["state"] != "running" {
            return b;
        }
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    }
    panic!("run {run} did not finish");
}

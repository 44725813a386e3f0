use std::path::{Path, PathBuf};

use paramflow::autoencoder::{train_ae as fit_ae, AeConfig, AutoencoderModel};
use paramflow::checkpoint::Checkpoint;
use paramflow::config::PipelineConfig;
use paramflow::dataset::{read_field, write_field, Dataset};
use paramflow::eval::{evaluate, score_fields, FieldSummary};
use paramflow::explorer::{self, preference_from_raw, PreferenceEntry};
use paramflow::flow::{train_flow as fit_flow, FlowModel};
use paramflow::io::write_json;
use paramflow::surrogate::{predict_and_quantify, reverse_predict};
use paramflow::synth::make_dataset;
use paramflow::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::Recorder;
use crate::{settings, Common};

fn log_path(artifact: &Path) -> PathBuf {
    let stem = artifact
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    artifact.with_file_name(format!("{stem}.log.json"))
}

/// Parses `"v1,v2,..."` into raw parameter values.
pub fn parse_params(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .map_err(|_| Error::Usage(format!("cannot parse parameter value {s:?}")))
        })
        .collect()
}

fn load_ae(path: &Path) -> Result<AutoencoderModel> {
    Checkpoint::load(path)?.into_autoencoder()
}

fn load_models(ae: &Path, flow: &Path) -> Result<(AutoencoderModel, FlowModel)> {
    let ae = load_ae(ae)?;
    let flow = Checkpoint::load(flow)?.into_flow_for(&ae)?;
    Ok((ae, flow))
}

pub fn synth(common: &Common, out: &Path) -> Result<()> {
    let cfg = settings::load(common)?;
    let rec = Recorder::start("synth", &cfg);
    let mut ds = make_dataset(&cfg.synth, cfg.seed)?;
    ds.save(out)?;
    println!("wrote {} samples to {}", ds.len(), out.display());
    rec.finish(out, vec![out.to_path_buf(), Dataset::blob_path(out)])
}

pub fn train_ae(common: &Common, dataset: &Path, out: &Path) -> Result<()> {
    let cfg = settings::load(common)?;
    let rec = Recorder::start("train-ae", &cfg).input("dataset", dataset);
    let ds = Dataset::load(dataset)?;
    let arch = AeConfig {
        dims: ds.meta.dims,
        ..cfg.ae_config()
    };
    let (_, fields) = ds.train();
    let (model, log) = fit_ae(fields, arch, &cfg.ae_train(), cfg.seed)?;
    Checkpoint::autoencoder(model)?.save(out)?;
    write_json(&log_path(out), &log)?;
    if let Some(last) = log.epoch_losses.last() {
        println!("final epoch MSE {last:.6e}");
    }
    rec.finish(out, vec![out.to_path_buf(), log_path(out)])
}

pub fn train_flow(common: &Common, dataset: &Path, ae: &Path, out: &Path) -> Result<()> {
    let cfg = settings::load(common)?;
    let rec = Recorder::start("train-flow", &cfg)
        .input("dataset", dataset)
        .input("ae", ae);
    let ds = Dataset::load(dataset)?;
    let ae = load_ae(ae)?;
    let (params, fields) = ds.train();
    let latents = ae.encode_batch(fields)?;
    let arch = cfg.flow_config(ae.latent_dim(), ds.meta.param_space.dim());
    let (model, log) = fit_flow(&latents, params, arch, &cfg.flow_train(), cfg.seed)?;
    Checkpoint::flow(model, &ae)?.save(out)?;
    write_json(&log_path(out), &log)?;
    if let Some(last) = log.epochs.last() {
        println!(
            "final epoch loss {:.4} (nll {:.4}, zc {:.4})",
            last.total, last.nll, last.zc
        );
    }
    rec.finish(out, vec![out.to_path_buf(), log_path(out)])
}

pub fn eval(
    common: &Common,
    dataset: &Path,
    ae: &Path,
    flow: &Path,
    n_samples: Option<usize>,
    out: &Path,
) -> Result<()> {
    let cfg = settings::load(common)?;
    let rec = Recorder::start("eval", &cfg)
        .input("dataset", dataset)
        .input("ae", ae)
        .input("flow", flow);
    let ds = Dataset::load(dataset)?;
    let (ae, flow) = load_models(ae, flow)?;
    let (params, fields) = ds.test();
    let report = evaluate(
        &ae,
        &flow,
        params,
        fields,
        n_samples.unwrap_or(cfg.uq_samples),
        cfg.seed,
    )?;
    write_json(out, &report)?;
    println!(
        "reconstruction PSNR {:.2} SSIM {:.4}",
        report.reconstruction.mean_psnr, report.reconstruction.mean_ssim
    );
    println!(
        "surrogate PSNR {:.2} SSIM {:.4}",
        report.surrogate.mean_psnr, report.surrogate.mean_ssim
    );
    println!(
        "reverse MAE {:.4} cosine {:.4}",
        report.reverse.mean_mae, report.reverse.mean_cosine
    );
    rec.finish(out, vec![out.to_path_buf()])
}

/// Field-only report used when predictions come from another dataset.
#[derive(Debug, Serialize, Deserialize)]
pub struct FieldEvalReport {
    pub sample_count: usize,
    pub fields: FieldSummary,
}

pub fn eval_against(common: &Common, dataset: &Path, predictions: &Path, out: &Path) -> Result<()> {
    let cfg = settings::load(common)?;
    let rec = Recorder::start("eval", &cfg)
        .input("dataset", dataset)
        .input("predictions", predictions);
    let truth = Dataset::load(dataset)?;
    let pred = Dataset::load(predictions)?;
    if truth.meta.dims != pred.meta.dims {
        return Err(Error::Config(format!(
            "prediction dims {:?} do not match dataset dims {:?}",
            pred.meta.dims, truth.meta.dims
        )));
    }
    let fields = score_fields(truth.test().1, pred.test().1)?;
    let report = FieldEvalReport {
        sample_count: fields.samples.len(),
        fields,
    };
    write_json(out, &report)?;
    println!(
        "PSNR {:.2} SSIM {:.4}",
        report.fields.mean_psnr, report.fields.mean_ssim
    );
    rec.finish(out, vec![out.to_path_buf()])
}

fn preferences(
    cfg: &PipelineConfig,
    flow: &FlowModel,
    ds: &Dataset,
    params: Option<&str>,
) -> Result<Vec<PreferenceEntry>> {
    let specs: Vec<(Vec<f64>, f64)> = match params {
        Some(text) => vec![(parse_params(text)?, 1.0)],
        None => cfg
            .explorer
            .preferences
            .iter()
            .map(|p| (p.params.clone(), p.score))
            .collect(),
    };
    if specs.is_empty() {
        return Err(Error::Usage(
            "explore needs preferences: pass --params or list [[explorer.preferences]] in the config".into(),
        ));
    }
    specs
        .iter()
        .map(|(raw, score)| {
            preference_from_raw(
                flow,
                &ds.meta.param_space,
                raw,
                *score,
                cfg.uq_samples,
                cfg.seed,
            )
        })
        .collect()
}

pub fn explore(
    common: &Common,
    dataset: &Path,
    ae: &Path,
    flow: &Path,
    params: Option<&str>,
    out: &Path,
) -> Result<()> {
    let cfg = settings::load(common)?;
    let rec = Recorder::start("explore", &cfg)
        .input("dataset", dataset)
        .input("ae", ae)
        .input("flow", flow);
    let ds = Dataset::load(dataset)?;
    let (_, flow) = load_models(ae, flow)?;
    let prefs = preferences(&cfg, &flow, &ds, params)?;
    let mut progress = |g: &paramflow::explorer::GenerationRecord| {
        eprintln!(
            "generation {:>3}: mean {:.4} max {:.4}",
            g.index, g.mean_fitness, g.max_fitness
        );
    };
    let (_, report) = explorer::explore(
        &flow,
        &ds.meta.param_space,
        &prefs,
        &cfg.explorer.weights,
        &cfg.ga_config(cfg.seed),
        cfg.explorer.clusters,
        Some(&mut progress),
    )?;
    write_json(out, &report)?;
    for r in &report.recommend.recommendations {
        println!(
            "cluster {} ({} members): {:?}",
            r.cluster, r.size, r.params_raw
        );
    }
    rec.finish(out, vec![out.to_path_buf()])
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictSummary {
    pub param_names: Vec<String>,
    pub params_raw: Vec<f64>,
    pub params_normalized: Vec<f64>,
    pub n_samples: usize,
    pub dims: [usize; 3],
    /// Mean of the per-voxel variance field.
    pub mean_variance: f64,
    pub mean_field: PathBuf,
    pub var_field: PathBuf,
}

pub fn predict(
    common: &Common,
    dataset: &Path,
    ae: &Path,
    flow: &Path,
    params: &str,
    n_samples: Option<usize>,
    out: &Path,
) -> Result<()> {
    let cfg = settings::load(common)?;
    let rec = Recorder::start("predict", &cfg)
        .input("dataset", dataset)
        .input("ae", ae)
        .input("flow", flow);
    let ds = Dataset::load(dataset)?;
    let (ae, flow) = load_models(ae, flow)?;
    let raw = parse_params(params)?;
    let space = &ds.meta.param_space;
    let c = space.normalize(&raw)?;
    let n = n_samples.unwrap_or(cfg.uq_samples);
    let uq = predict_and_quantify(&flow, &ae, &c, n, cfg.seed)?;
    let mean_path = out.with_extension("mean.f32");
    let var_path = out.with_extension("var.f32");
    write_field(&mean_path, &uq.mean_field)?;
    write_field(&var_path, &uq.var_field)?;
    let summary = PredictSummary {
        param_names: space.names.clone(),
        params_raw: raw,
        params_normalized: c.0,
        n_samples: n,
        dims: uq.mean_field.dims,
        mean_variance: uq.var_field.values.iter().sum::<f64>() / uq.var_field.len() as f64,
        mean_field: mean_path.clone(),
        var_field: var_path.clone(),
    };
    write_json(out, &summary)?;
    println!("mean variance {:.4e}", summary.mean_variance);
    rec.finish(out, vec![out.to_path_buf(), mean_path, var_path])
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReverseResult {
    pub param_names: Vec<String>,
    pub params_raw: Vec<f64>,
    pub params_normalized: Vec<f64>,
}

pub fn reverse(
    common: &Common,
    dataset: &Path,
    ae: &Path,
    flow: &Path,
    field: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = settings::load(common)?;
    let rec = Recorder::start("reverse", &cfg)
        .input("dataset", dataset)
        .input("ae", ae)
        .input("flow", flow)
        .input("field", field);
    let ds = Dataset::load(dataset)?;
    let (ae, flow) = load_models(ae, flow)?;
    let x = read_field(field, ds.meta.dims, ds.meta.value_range)?;
    let c = reverse_predict(&flow, &ae, &x)?;
    let space = &ds.meta.param_space;
    let result = ReverseResult {
        param_names: space.names.clone(),
        params_raw: space.denormalize(&c)?,
        params_normalized: c.0,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&result).map_err(|e| Error::Format(e.to_string()))?
    );
    match out {
        Some(out) => {
            write_json(out, &result)?;
            rec.finish(out, vec![out.to_path_buf()])
        }
        None => Ok(()),
    }
}

pub fn serve(common: &Common, port: u16, data: &Path) -> Result<()> {
    let cfg = settings::load(common)?;
    eprintln!("serving {} on port {port}", data.display());
    paramflow_service::serve_blocking(data.to_path_buf(), port, cfg)
}

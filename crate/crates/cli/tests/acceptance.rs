//! Acceptance suite. Runs every headline criterion in sequence and prints
//! one `PASS`/`FAIL` line each, then fails if any criterion failed.
//!
//! The synthetic end-to-end criterion drives the real `paramflow` binary
//! through synth, train-ae, train-flow and eval with the reference preset;
//! the service criterion reuses the artifacts it produced.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use paramflow::autoencoder::{AeConfig, AutoencoderModel};
use paramflow::checkpoint::Checkpoint;
use paramflow::config::PipelineConfig;
use paramflow::dataset::{field_from_le_bytes, field_to_le_bytes, Dataset};
use paramflow::explorer::{
    diversity_score, explore, kmeans, optimize, preference_from_raw, select,
    selection_probabilities, similarity_score, uncertainty_score, Candidate, FitnessWeights,
    GaConfig, PreferenceEntry, StubFitness,
};
use paramflow::flow::{
    flow_loss, flow_loss_grad, train_flow, FlowConfig, FlowInit, FlowModel, FlowTrainConfig,
};
use paramflow::nn::{Activation, DenseNet, Parameters};
use paramflow::rng::seeded;
use paramflow::surrogate::{predict_and_quantify, reverse_predict};
use paramflow::{FieldGrid, Latent, ParamVector};
use paramflow_service::api::{central_slices, PredictResponse, ReverseResponse, RunView};
use paramflow_service::{router, AppState};
use rand::Rng;
use rand_distr::StandardNormal;
use tower::ServiceExt;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Suite {
    results: Vec<(String, bool)>,
}

impl Suite {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {name}: {detail} [{secs:.1}s]");
        self.results.push((name.to_string(), outcome.is_ok()));
    }
}

fn random_flow(
    d: usize,
    n: usize,
    k1: usize,
    k2: usize,
    hidden: Vec<usize>,
    seed: u64,
) -> FlowModel {
    let mut cfg = FlowConfig::new(d, n);
    cfg.conditional_blocks = k1;
    cfg.unconditional_blocks = k2;
    cfg.head_hidden = vec![hidden[0]];
    cfg.coupling_hidden = hidden;
    cfg.init = FlowInit::Random;
    FlowModel::new(cfg, seed).unwrap()
}

fn normal_vec(rng: &mut paramflow::rng::Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn uniform_vec(rng: &mut paramflow::rng::Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random::<f64>()).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()) + 1e-6)
}

// ---- flow ----

fn invertibility() -> Outcome {
    let t = Instant::now();
    let flow = random_flow(64, 4, 4, 4, vec![64, 64], 2024);
    let mut rng = seeded(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let z0 = Latent(normal_vec(&mut rng, 64));
        let c = ParamVector(uniform_vec(&mut rng, 4));
        let fwd = flow.forward(&z0, &c).unwrap();
        let back = flow.inverse(&fwd.z_k, &c).unwrap();
        for (a, b) in back.iter().zip(z0.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst < 1e-8 && secs < 10.0,
        format!("max |inverse(forward(z0)) - z0| = {worst:.2e} over 100 pairs at d=64, {secs:.2}s"),
    )
}

fn log_abs_det(d: usize, jac: &[f64]) -> f64 {
    nalgebra::DMatrix::from_row_slice(d, d, jac)
        .lu()
        .determinant()
        .abs()
        .ln()
}

fn logdet_exactness() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for (i, &d) in [2usize, 4, 8].iter().enumerate() {
        let flow = random_flow(d, 2, 4, 4, vec![16, 16], 50 + i as u64);
        let mut rng = seeded(60 + i as u64);
        for _ in 0..5 {
            let z0 = normal_vec(&mut rng, d);
            let c = ParamVector(uniform_vec(&mut rng, 2));
            let analytic = flow.forward(&Latent(z0.clone()), &c).unwrap().logdet;
            let mut jac = vec![0.0; d * d];
            for j in 0..d {
                let mut plus = z0.clone();
                plus[j] += h;
                let mut minus = z0.clone();
                minus[j] -= h;
                let fp = flow.forward(&Latent(plus), &c).unwrap().z_k;
                let fm = flow.forward(&Latent(minus), &c).unwrap().z_k;
                for r in 0..d {
                    jac[r * d + j] = (fp[r] - fm[r]) / (2.0 * h);
                }
            }
            let numeric = log_abs_det(d, &jac);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(1e-3));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst < 1e-3 && secs < 30.0,
        format!("worst relative log-det error {worst:.2e} for d in {{2,4,8}}, {secs:.2}s"),
    )
}

/// Fraction of forward samples landing inside the quadrature box.
fn coverage(flow: &FlowModel, c: &ParamVector, extent: f64, seed: u64) -> f64 {
    let (mu, sigma) = flow.base_params(c).unwrap();
    let mut rng = seeded(seed);
    let n = 20_000;
    let inside = (0..n)
        .filter(|_| {
            let z0: Vec<f64> = (0..2)
                .map(|k| mu[k] + sigma[k] * rng.sample::<f64, _>(StandardNormal))
                .collect();
            flow.forward(&Latent(z0), c)
                .unwrap()
                .z_k
                .iter()
                .all(|v| v.abs() < extent)
        })
        .count();
    inside as f64 / n as f64
}

fn box_mass(flow: &FlowModel, cv: f64) -> f64 {
    let n = 400;
    let step = 12.0 / n as f64;
    let z = ndarray::Array2::from_shape_fn((n * n, 2), |(i, k)| {
        let idx = if k == 0 { i % n } else { i / n };
        -6.0 + step * (idx as f64 + 0.5)
    });
    let c = ndarray::Array2::from_elem((n * n, 1), cv);
    let ll = flow.log_likelihood_batch(z.view(), c.view()).unwrap();
    ll.iter().map(|v| v.exp()).sum::<f64>() * step * step
}

/// A flow trained on a 2-d conditional toy density, plus shallow random
/// flows. Random flows whose samples spill past [-6,6]^2 cannot integrate
/// to 1 on that box, so they are screened by forward sampling first.
fn density_normalization() -> Outcome {
    let t = Instant::now();
    let conds = [0.2, 0.7];
    let mut rng = seeded(31);
    let mut z = Vec::new();
    let mut c = Vec::new();
    for _ in 0..1000 {
        let ci: f64 = rng.random();
        z.push(Latent(vec![
            2.0 * ci - 1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal),
            (3.0 * ci).sin() + 0.2 * rng.sample::<f64, _>(StandardNormal),
        ]));
        c.push(ParamVector(vec![ci]));
    }
    let mut cfg = FlowConfig::new(2, 1);
    cfg.conditional_blocks = 2;
    cfg.unconditional_blocks = 2;
    cfg.coupling_hidden = vec![16, 16];
    cfg.head_hidden = vec![16];
    let train = FlowTrainConfig {
        epochs: 40,
        batch_size: 64,
        learning_rate: 2e-3,
        clip_norm: Some(50.0),
    };
    let (trained, _) = train_flow(&z, &c, cfg, &train, 32).unwrap();
    let mut flows = vec![trained];
    let mut skipped = Vec::new();
    let mut seed = 0;
    while flows.len() < 3 && seed < 20 {
        let flow = random_flow(2, 1, 1, 1, vec![16, 16], seed);
        let covered = conds
            .iter()
            .all(|&cv| coverage(&flow, &ParamVector(vec![cv]), 6.0, 1000 + seed) >= 0.999);
        if covered {
            flows.push(flow);
        } else {
            skipped.push(seed);
        }
        seed += 1;
    }
    let masses: Vec<f64> = flows
        .iter()
        .flat_map(|f| conds.map(|cv| box_mass(f, cv)))
        .collect();
    let worst = masses.iter().fold(0.0f64, |a, m| a.max((m - 1.0).abs()));
    let secs = t.elapsed().as_secs_f64();
    check(
        flows.len() == 3 && worst < 0.02 && secs < 60.0,
        format!(
            "masses {masses:.4?} on a 400x400 midpoint grid over [-6,6]^2 (trained flow, then random flows; \
             random seeds {skipped:?} skipped for sample coverage < 0.999), {secs:.1}s"
        ),
    )
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let h = 1e-5;
    let mut dense_worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = seeded(seed);
        let hidden = if seed % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Identity
        };
        let net = DenseNet::mlp(&[3, 5, 4, 2], hidden, Activation::Tanh, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let og: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |n: &DenseNet| -> f64 {
            n.forward(&x)
                .unwrap()
                .iter()
                .zip(&og)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (grads, _) = net.backward(&x, &og).unwrap();
        let analytic: Vec<Vec<f64>> = grads.params().iter().map(|p| p.to_vec()).collect();
        let mut probe = net.clone();
        for (ti, g) in analytic.iter().enumerate() {
            for i in 0..g.len() {
                let orig = probe.params()[ti][i];
                probe.params_mut()[ti][i] = orig + h;
                let plus = objective(&probe);
                probe.params_mut()[ti][i] = orig - h;
                let minus = objective(&probe);
                probe.params_mut()[ti][i] = orig;
                dense_worst = dense_worst.max(rel_err(g[i], (plus - minus) / (2.0 * h)));
            }
        }
    }
    // Every flow tensor: actnorm, couplings, mean and log-sigma heads.
    let mut flow_worst: f64 = 0.0;
    let mut tensors = 0;
    for seed in 0..2u64 {
        let model = random_flow(4, 2, 1, 1, vec![6], 300 + seed);
        let mut rng = seeded(seed);
        let z: Vec<Latent> = (0..3).map(|_| Latent(normal_vec(&mut rng, 4))).collect();
        let c: Vec<ParamVector> = (0..3)
            .map(|_| ParamVector(uniform_vec(&mut rng, 2)))
            .collect();
        let (_, grads) = flow_loss_grad(&model, &z, &c, 0.7).unwrap();
        let analytic: Vec<Vec<f64>> = grads.params().iter().map(|p| p.to_vec()).collect();
        let mut probe = model.clone();
        for (ti, g) in analytic.iter().enumerate() {
            tensors += 1;
            for i in 0..g.len() {
                let orig = probe.params()[ti][i];
                probe.params_mut()[ti][i] = orig + h;
                let plus = flow_loss(&probe, &z, &c, 0.7).unwrap().total;
                probe.params_mut()[ti][i] = orig - h;
                let minus = flow_loss(&probe, &z, &c, 0.7).unwrap().total;
                probe.params_mut()[ti][i] = orig;
                flow_worst = flow_worst.max(rel_err(g[i], (plus - minus) / (2.0 * h)));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        dense_worst < 1e-4 && flow_worst < 1e-4 && secs < 60.0,
        format!(
            "dense nets {dense_worst:.2e}, flow loss over {tensors} tensors {flow_worst:.2e} (relative), {secs:.1}s"
        ),
    )
}

fn toy_conditional_density() -> Outcome {
    const SIGMA: f64 = 0.1;
    const D: usize = 4;
    let pairs = |count: usize, seed: u64| {
        let mut rng = seeded(seed);
        let mut z = Vec::new();
        let mut c = Vec::new();
        for _ in 0..count {
            let ci: f64 = rng.random();
            z.push(Latent(
                (0..D)
                    .map(|_| ci + SIGMA * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            ));
            c.push(ParamVector(vec![ci]));
        }
        (z, c)
    };
    let t = Instant::now();
    let (z, c) = pairs(2000, 21);
    let mut cfg = FlowConfig::new(D, 1);
    cfg.conditional_blocks = 2;
    cfg.unconditional_blocks = 2;
    cfg.coupling_hidden = vec![32, 32];
    cfg.head_hidden = vec![32];
    let train = FlowTrainConfig {
        epochs: 150,
        batch_size: 64,
        learning_rate: 2e-3,
        clip_norm: Some(50.0),
    };
    let (model, _) = train_flow(&z, &c, cfg, &train, 22).unwrap();
    let (zt, ct) = pairs(2000, 23);
    let nll = flow_loss(&model, &zt, &ct, 0.0).unwrap().nll;
    let entropy =
        D as f64 * 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * SIGMA * SIGMA).ln();
    let secs = t.elapsed().as_secs_f64();
    check(
        (nll - entropy).abs() < 0.2 && secs < 600.0,
        format!("held-out NLL {nll:.4} vs entropy {entropy:.4} nats, {secs:.1}s"),
    )
}

// ---- uncertainty quantification ----

fn small_models(seed: u64) -> (AutoencoderModel, FlowModel) {
    let mut cfg = AeConfig::new([8, 8, 8], 4);
    cfg.hidden = vec![12];
    (
        AutoencoderModel::new(cfg, seed),
        random_flow(4, 3, 2, 2, vec![8], seed + 1),
    )
}

/// Independent Monte Carlo loop: base draws sample by sample, each pushed
/// through the flow and decoded alone.
fn uq_oracle(
    ae: &AutoencoderModel,
    flow: &FlowModel,
    c: &ParamVector,
    n: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let (mu, sigma) = flow.base_params(c).unwrap();
    let mut rng = seeded(seed);
    let mut fields: Vec<FieldGrid> = Vec::new();
    for _ in 0..n {
        let z0: Vec<f64> = (0..mu.dim())
            .map(|k| mu[k] + sigma[k] * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let zk = flow.forward(&Latent(z0), c).unwrap().z_k;
        fields.push(ae.decode(&zk).unwrap());
    }
    let len = fields[0].len();
    let mut mean = vec![0.0; len];
    let mut var = vec![0.0; len];
    for v in 0..len {
        let m = fields.iter().map(|f| f.values[v]).sum::<f64>() / n as f64;
        mean[v] = m;
        var[v] = fields
            .iter()
            .map(|f| (f.values[v] - m).powi(2))
            .sum::<f64>()
            / n as f64;
    }
    (mean, var)
}

fn uq_contract() -> Outcome {
    let (ae, flow) = small_models(40);
    let mut rng = seeded(41);
    let mut min_var = f64::INFINITY;
    let mut max_n1 = 0.0f64;
    let mut oracle_err = 0.0f64;
    for i in 0..5u64 {
        let c = ParamVector(uniform_vec(&mut rng, 3));
        let one = predict_and_quantify(&flow, &ae, &c, 1, i).unwrap();
        max_n1 = max_n1.max(one.var_field.values.iter().fold(0.0, |a, v| a.max(v.abs())));
        let uq = predict_and_quantify(&flow, &ae, &c, 20, 100 + i).unwrap();
        min_var = min_var.min(
            uq.var_field
                .values
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min),
        );
        let (mean, var) = uq_oracle(&ae, &flow, &c, 20, 100 + i);
        for (a, b) in uq
            .mean_field
            .values
            .iter()
            .zip(&mean)
            .chain(uq.var_field.values.iter().zip(&var))
        {
            oracle_err = oracle_err.max((a - b).abs());
        }
    }
    check(
        max_n1 == 0.0 && min_var >= 0.0 && oracle_err <= 1e-12,
        format!("n=1 max |var| {max_n1:e}; min variance {min_var:.2e}; n=20 vs loop oracle {oracle_err:.2e}"),
    )
}

// ---- synthetic end-to-end ----

fn paramflow(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_paramflow"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn duration(artifact: &Path) -> f64 {
    let stem = artifact.file_stem().unwrap().to_string_lossy();
    read_json(&artifact.with_file_name(format!("{stem}.manifest.json")))["duration_secs"]
        .as_f64()
        .unwrap()
}

/// Thresholds are asserted with the documented 10% slack; whether the
/// nominal values were met is reported alongside.
fn end_to_end(dir: &Path) -> Outcome {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = dir.join("data.json");
    let ae = dir.join("ae.json");
    let flow = dir.join("flow.json");
    let report = dir.join("eval.json");
    paramflow(&[
        "synth",
        "--preset",
        "reference",
        "--seed",
        "0",
        "--out",
        &s(&data),
    ])?;
    paramflow(&[
        "train-ae",
        "--preset",
        "reference",
        "--seed",
        "1",
        "--dataset",
        &s(&data),
        "--out",
        &s(&ae),
    ])?;
    paramflow(&[
        "train-flow",
        "--preset",
        "reference",
        "--seed",
        "2",
        "--dataset",
        &s(&data),
        "--ae",
        &s(&ae),
        "--out",
        &s(&flow),
    ])?;
    paramflow(&[
        "eval",
        "--preset",
        "reference",
        "--seed",
        "3",
        "--dataset",
        &s(&data),
        "--ae",
        &s(&ae),
        "--flow",
        &s(&flow),
        "--out",
        &s(&report),
    ])?;
    let r = read_json(&report);
    let ae_psnr = r["reconstruction"]["mean_psnr"]
        .as_f64()
        .unwrap_or(f64::NAN);
    let sur_psnr = r["surrogate"]["mean_psnr"].as_f64().unwrap_or(f64::NAN);
    let mae = r["reverse"]["mean_mae"].as_f64().unwrap();
    let cos = r["reverse"]["mean_cosine"].as_f64().unwrap();
    let (t_ae, t_flow) = (duration(&ae), duration(&flow));
    let nominal = ae_psnr >= 35.0 && sur_psnr >= 30.0 && mae <= 0.1 && cos >= 0.95;
    let slack =
        ae_psnr >= 35.0 * 0.9 && sur_psnr >= 30.0 * 0.9 && mae <= 0.1 * 1.1 && cos >= 0.95 * 0.9;
    check(
        slack && t_ae <= 900.0 && t_flow <= 1800.0 && r["sample_count"] == 20,
        format!(
            "AE PSNR {ae_psnr:.2}, surrogate PSNR {sur_psnr:.2}, reverse MAE {mae:.4}, cosine {cos:.4} on {} test \
             samples; AE {t_ae:.0}s, flow {t_flow:.0}s; nominal thresholds {}",
            r["sample_count"],
            if nominal { "met" } else { "NOT met" }
        ),
    )
}

// ---- explorer ----

fn sphere(c: &ParamVector) -> f64 {
    -c.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>()
}

fn with_fitness(values: &[f64]) -> Vec<Candidate> {
    values
        .iter()
        .enumerate()
        .map(|(i, &f)| Candidate {
            id: i as u64,
            params: ParamVector(vec![0.5]),
            latent_mean: Latent(vec![0.0]),
            latent_var: Latent(vec![0.0]),
            sim: f,
            div: 0.0,
            unc: 0.0,
            fitness: Some(f),
            parents: Vec::new(),
            elite: false,
        })
        .collect()
}

fn ga_properties() -> Outcome {
    let mut monotone = true;
    let mut worst_dist: f64 = 0.0;
    let mut worst_time: f64 = 0.0;
    for seed in 0..5 {
        let cfg = GaConfig {
            seed,
            ..GaConfig::default()
        };
        let t = Instant::now();
        let h = optimize(
            &cfg,
            4,
            &StubFitness(sphere),
            &FitnessWeights::default(),
            None,
        )
        .unwrap();
        worst_time = worst_time.max(t.elapsed().as_secs_f64());
        monotone &= h.windows(2).all(|w| w[1].max_fitness >= w[0].max_fitness);
        let best = h.last().unwrap().best().unwrap();
        let dist = best
            .params
            .iter()
            .map(|v| (v - 0.5).powi(2))
            .sum::<f64>()
            .sqrt();
        worst_dist = worst_dist.max(dist);
    }
    // A rugged stub for the elitism property.
    let rugged = |c: &ParamVector| c.iter().map(|v| (13.0 * v).sin()).product::<f64>();
    for seed in 0..5 {
        let cfg = GaConfig {
            seed: 100 + seed,
            mutation_rate: 0.6,
            ..GaConfig::default()
        };
        let h = optimize(
            &cfg,
            3,
            &StubFitness(rugged),
            &FitnessWeights::default(),
            None,
        )
        .unwrap();
        monotone &= h.windows(2).all(|w| w[1].max_fitness >= w[0].max_fitness);
    }
    // Rank selection: worst gets rank 1, ties share the mean rank.
    let fit = [5.0, -1.0, 0.0, 9.0, 0.0, 3.0];
    let pop = with_fitness(&fit);
    let ranks: Vec<f64> = fit
        .iter()
        .map(|f| {
            let below = fit.iter().filter(|g| *g < f).count() as f64;
            let equal = fit.iter().filter(|g| *g == f).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let theory: Vec<f64> = ranks.iter().map(|r| r / total).collect();
    let probs = selection_probabilities(&pop).unwrap();
    let prob_err = probs
        .iter()
        .zip(&theory)
        .fold(0.0f64, |a, (p, t)| a.max((p - t).abs()));
    let draws = 50_000;
    let mut counts = vec![0usize; fit.len()];
    for (a, b) in select(&pop, draws, &mut seeded(5)).unwrap() {
        counts[a] += 1;
        counts[b] += 1;
    }
    let freq_err = counts.iter().zip(&theory).fold(0.0f64, |a, (c, t)| {
        a.max((*c as f64 / (2 * draws) as f64 - t).abs())
    });
    check(
        monotone && worst_dist < 0.05 && worst_time < 10.0 && prob_err < 1e-12 && freq_err < 0.01,
        format!(
            "max fitness monotone: {monotone}; sphere best within {worst_dist:.4} (p=40, g=30, slowest {worst_time:.2}s); \
             selection |freq - theory| <= {freq_err:.4} over 1e5 draws"
        ),
    )
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..k {
        let members: Vec<&Vec<f64>> = points
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == j)
            .map(|(p, _)| p)
            .collect();
        if members.is_empty() {
            continue;
        }
        let dim = members[0].len();
        let center: Vec<f64> = (0..dim)
            .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
            .collect();
        for p in members {
            total += p
                .iter()
                .zip(&center)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
    }
    total
}

fn fitness_and_clustering() -> Outcome {
    let mut rng = seeded(90);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(2..6);
        let n = rng.random_range(2..5);
        let np = rng.random_range(1..7);
        let prefs: Vec<PreferenceEntry> = (0..np)
            .map(|_| {
                PreferenceEntry::new(
                    ParamVector(uniform_vec(&mut rng, n)),
                    rng.random_range(-1.0..=1.0),
                    Latent(normal_vec(&mut rng, d)),
                )
                .unwrap()
            })
            .collect();
        let latent = normal_vec(&mut rng, d);
        let c = uniform_vec(&mut rng, n);
        let var: Vec<f64> = uniform_vec(&mut rng, d);
        let k = rng.random_range(1..8);

        let mut sim = 0.0;
        for p in &prefs {
            let term = p.score / ((1.0 - cosine(&latent, &p.latent_mean)) + 1e-6);
            let cap = 1e6 * p.score.abs();
            sim += term.clamp(-cap, cap);
        }
        let mut dists: Vec<f64> = prefs
            .iter()
            .map(|p| (0..n).map(|i| (c[i] - p.params[i]).abs()).sum())
            .collect();
        dists.sort_by(|a, b| a.total_cmp(b));
        let div: f64 = dists.iter().take(k.min(np)).sum();
        let unc = var.iter().sum::<f64>() / d as f64;

        worst = worst.max(
            (similarity_score(&Latent(latent.clone()), &prefs).unwrap() - sim).abs()
                / sim.abs().max(1.0),
        );
        worst =
            worst.max((diversity_score(&ParamVector(c.clone()), &prefs, k).unwrap() - div).abs());
        worst = worst.max((uncertainty_score(&var).unwrap() - unc).abs());
    }

    // Two planted blobs; the optimal 2-partition is found by enumeration.
    let mut planted_ok = true;
    for seed in 0..5u64 {
        let mut rng = seeded(500 + seed);
        let points: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let base = if i < 5 { -2.0 } else { 2.0 };
                (0..3)
                    .map(|_| base + 0.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << 9) {
            let labels: Vec<usize> = (0..10)
                .map(|i| {
                    if i == 9 {
                        0
                    } else {
                        ((mask >> i) & 1) as usize
                    }
                })
                .collect();
            let e = sse(&points, &labels, 2);
            if e < best.0 {
                best = (e, labels);
            }
        }
        let km = kmeans(&points, 2, seed).unwrap();
        let same = (0..10).all(|i| {
            (0..10).all(|j| (km.assignments[i] == km.assignments[j]) == (best.1[i] == best.1[j]))
        });
        planted_ok &= same;
    }
    let mut sse_ok = true;
    for seed in 0..20u64 {
        let mut rng = seeded(700 + seed);
        let points: Vec<Vec<f64>> = (0..40).map(|_| normal_vec(&mut rng, 3)).collect();
        let km = kmeans(&points, 4, seed).unwrap();
        sse_ok &= km.sse_history.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    }
    check(
        worst < 1e-9 && planted_ok && sse_ok,
        format!(
            "fitness terms vs loop oracles {worst:.2e} on 200 random instances; planted partitions recovered: \
             {planted_ok}; SSE non-increasing: {sse_ok}"
        ),
    )
}

// ---- service ----

async fn call(
    r: &axum::Router,
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
    (
        status,
        resp.into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec(),
    )
}

fn json_body(v: serde_json::Value) -> Vec<u8> {
    serde_json::to_vec(&v).unwrap()
}

async fn service_checks(artifacts: &Path) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().to_path_buf();
    std::fs::create_dir_all(data.join("datasets")).unwrap();
    std::fs::create_dir_all(data.join("checkpoints")).unwrap();
    for (from, to) in [
        ("data.json", "datasets/ref.json"),
        ("ae.json", "checkpoints/ref-ae.json"),
        ("flow.json", "checkpoints/ref-flow.json"),
    ] {
        std::fs::copy(artifacts.join(from), data.join(to)).map_err(|e| format!("{from}: {e}"))?;
    }
    let defaults = PipelineConfig {
        seed: 17,
        ..PipelineConfig::reference()
    };
    let ds = Dataset::load(&artifacts.join("data.json")).unwrap();
    let ae = Checkpoint::load(&artifacts.join("ae.json"))
        .unwrap()
        .into_autoencoder()
        .unwrap();
    let flow = Checkpoint::load(&artifacts.join("flow.json"))
        .unwrap()
        .into_flow_for(&ae)
        .unwrap();
    let space = &ds.meta.param_space;

    let mut failures = Vec::new();
    let r = router(Arc::new(
        AppState::open(data.clone(), defaults.clone()).unwrap(),
    ));
    let (_, b) = call(
        &r,
        "POST",
        "/sessions",
        json_body(serde_json::json!({"dataset": "ref", "ae": "ref-ae", "flow": "ref-flow"})),
    )
    .await;
    let id = serde_json::from_slice::<serde_json::Value>(&b).unwrap()["id"]
        .as_str()
        .unwrap()
        .to_string();

    // predict
    let raw = vec![0.4, 0.6, 0.12, 0.7];
    let (_, b) = call(
        &r,
        "POST",
        &format!("/sessions/{id}/predict"),
        json_body(serde_json::json!({"params": raw})),
    )
    .await;
    let c = space.normalize(&raw).unwrap();
    let uq = predict_and_quantify(&flow, &ae, &c, defaults.uq_samples, defaults.seed).unwrap();
    let expected = PredictResponse {
        params_raw: raw.clone(),
        params_normalized: c.0.clone(),
        n_samples: defaults.uq_samples,
        seed: defaults.seed,
        dims: uq.mean_field.dims,
        value_range: ds.meta.value_range,
        mean: central_slices(&uq.mean_field),
        variance: central_slices(&uq.var_field),
        mean_uncertainty: uncertainty_score(&uq.var_latent).unwrap(),
        mean_field_variance: uq.var_field.values.iter().sum::<f64>() / uq.var_field.len() as f64,
        mean_latent: uq.mean_latent.0.clone(),
        var_latent: uq.var_latent.0.clone(),
    };
    if b != serde_json::to_vec(&expected).unwrap() {
        failures.push("predict");
    }

    // preferences and a GA run against the headless explorer
    let prefs_raw = [
        (vec![0.5, 0.5, 0.1, 0.5], 1.0),
        (vec![0.3, 0.7, 0.2, 0.9], -0.5),
    ];
    let mut table = serde_json::Value::Null;
    for (p, score) in &prefs_raw {
        let (_, b) = call(
            &r,
            "POST",
            &format!("/sessions/{id}/preferences"),
            json_body(serde_json::json!({"params": p, "score": score})),
        )
        .await;
        table = serde_json::from_slice(&b).unwrap();
    }
    let prefs: Vec<PreferenceEntry> = prefs_raw
        .iter()
        .map(|(p, s)| {
            preference_from_raw(&flow, space, p, *s, defaults.uq_samples, defaults.seed).unwrap()
        })
        .collect();
    for (i, p) in prefs.iter().enumerate() {
        if serde_json::to_vec(&table["preferences"][i]["latent_mean"]).unwrap()
            != serde_json::to_vec(&p.latent_mean).unwrap()
        {
            failures.push("preferences");
        }
    }
    call(
        &r,
        "POST",
        &format!("/sessions/{id}/ga"),
        json_body(serde_json::json!({})),
    )
    .await;
    let mut run_bytes = Vec::new();
    for _ in 0..6000 {
        let (_, b) = call(&r, "GET", &format!("/sessions/{id}/ga/0"), Body::empty()).await;
        let v: serde_json::Value = serde_json::from_slice(&b).unwrap();
        if v["status"]["state"] != "running" {
            run_bytes = b;
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
    let view: RunView =
        serde_json::from_slice(&run_bytes).map_err(|e| format!("GA run did not finish: {e}"))?;
    let (_, report) = explore(
        &flow,
        space,
        &prefs,
        &defaults.explorer.weights,
        &defaults.ga_config(defaults.seed),
        defaults.explorer.clusters,
        None,
    )
    .unwrap();
    if serde_json::to_vec(&view.lineage).unwrap() != serde_json::to_vec(&report.lineage).unwrap() {
        failures.push("lineage");
    }
    let (_, b) = call(
        &r,
        "POST",
        &format!("/sessions/{id}/recommend"),
        json_body(serde_json::json!({"run": 0})),
    )
    .await;
    if b != serde_json::to_vec(&report.recommend).unwrap() {
        failures.push("recommend");
    }

    // reverse on a held-out field
    let bytes = field_to_le_bytes(&ds.test().1[0]);
    let (_, b) = call(
        &r,
        "POST",
        &format!("/sessions/{id}/reverse"),
        bytes.clone(),
    )
    .await;
    let x = field_from_le_bytes(&bytes, ds.meta.dims, ds.meta.value_range).unwrap();
    let p = reverse_predict(&flow, &ae, &x).unwrap();
    let expected = ReverseResponse {
        param_names: space.names.clone(),
        params_raw: space.denormalize(&p).unwrap(),
        params_normalized: p.0,
    };
    if b != serde_json::to_vec(&expected).unwrap() {
        failures.push("reverse");
    }

    // restart
    let (_, before) = call(&r, "GET", &format!("/sessions/{id}"), Body::empty()).await;
    drop(r);
    let r = router(Arc::new(AppState::open(data, defaults).unwrap()));
    let (_, after) = call(&r, "GET", &format!("/sessions/{id}"), Body::empty()).await;
    let (_, run_after) = call(&r, "GET", &format!("/sessions/{id}/ga/0"), Body::empty()).await;
    if before != after || run_after != run_bytes {
        failures.push("persistence");
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "predict, preferences, GA lineage ({} generations), recommend and reverse byte-equal library calls; \
                 session restored after restart",
                view.generations_completed
            )
        } else {
            format!("mismatches: {failures:?}")
        },
    )
}

fn service_equivalence(artifacts: &Path) -> Outcome {
    if !artifacts.join("flow.json").exists() {
        return Err("reference artifacts missing (end-to-end run failed)".into());
    }
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap()
        .block_on(service_checks(artifacts))
}

#[test]
fn acceptance() {
    let work = tempfile::tempdir().unwrap();
    let artifacts: PathBuf = work.path().to_path_buf();
    let mut suite = Suite {
        results: Vec::new(),
    };
    suite.run("flow invertibility", invertibility);
    suite.run("log-det exactness", logdet_exactness);
    suite.run("density normalization", density_normalization);
    suite.run("gradient suite", gradient_suite);
    suite.run("toy conditional density", toy_conditional_density);
    suite.run("uncertainty sampling contract", uq_contract);
    suite.run("synthetic end-to-end", || end_to_end(&artifacts));
    suite.run("GA properties", ga_properties);
    suite.run("fitness components and clustering", fitness_and_clustering);
    suite.run("service equivalence", || service_equivalence(&artifacts));
    let failed: Vec<&String> = suite
        .results
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| n)
        .collect();
    println!(
        "{} of {} criteria passed",
        suite.results.len() - failed.len(),
        suite.results.len()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

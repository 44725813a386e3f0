//! Browser bindings for a few cheap operations of the `paramflow` core.
//! Results are flat `Float64Array`s; `www/index.html` draws them.

use ndarray::Array2;
use paramflow::explorer::{optimize, FitnessWeights, GaConfig, StubFitness};
use paramflow::flow::{FlowConfig, FlowInit, FlowModel};
use paramflow::synth::generate_field;
use paramflow::ParamVector;
use wasm_bindgen::prelude::*;

fn js_err(e: paramflow::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Central slice of the synthetic field for normalized parameters
/// `(center_x, center_y, width, amplitude)` on a `res`³ grid.
/// `axis` 0 fixes depth, 1 height, 2 width. Returns `res * res` values.
#[wasm_bindgen]
pub fn field_slice(
    cx: f64,
    cy: f64,
    width: f64,
    amplitude: f64,
    res: usize,
    axis: usize,
) -> Result<Vec<f64>, JsError> {
    if !(2..=128).contains(&res) || axis > 2 {
        return Err(JsError::new("res must be in 2..=128 and axis in 0..=2"));
    }
    let c = ParamVector(vec![cx, cy, width, amplitude]);
    let field = generate_field(&c, [res; 3]).map_err(js_err)?;
    Ok(field.central_slice(axis).2)
}

/// Runs the GA on `-(x - tx)² - (y - ty)²` over the unit square.
/// Per generation returns `[mean fitness, max fitness, best x, best y]`.
#[wasm_bindgen]
pub fn ga_sphere(
    population: usize,
    generations: usize,
    mutation_rate: f64,
    seed: u32,
    tx: f64,
    ty: f64,
) -> Result<Vec<f64>, JsError> {
    let config = GaConfig {
        population,
        generations,
        mutation_rate,
        seed: seed as u64,
        ..GaConfig::default()
    };
    let model = StubFitness(move |c: &ParamVector| -((c[0] - tx).powi(2) + (c[1] - ty).powi(2)));
    let history = optimize(&config, 2, &model, &FitnessWeights::default(), None).map_err(js_err)?;
    let mut out = Vec::with_capacity(history.len() * 4);
    for g in &history {
        let best = g.best().ok_or_else(|| JsError::new("empty generation"))?;
        out.extend([
            g.mean_fitness,
            g.max_fitness,
            best.params[0],
            best.params[1],
        ]);
    }
    Ok(out)
}

/// Density of a randomly initialized 2D conditional flow at condition `c`,
/// evaluated on a `res`² grid over `[-extent, extent]²` (rows run along y).
#[wasm_bindgen]
pub fn flow_density(seed: u32, c: f64, res: usize, extent: f64) -> Result<Vec<f64>, JsError> {
    if !(2..=256).contains(&res) || !(extent > 0.0) {
        return Err(JsError::new("res must be in 2..=256 and extent positive"));
    }
    let mut cfg = FlowConfig::new(2, 1);
    cfg.conditional_blocks = 2;
    cfg.unconditional_blocks = 2;
    cfg.coupling_hidden = vec![16, 16];
    cfg.head_hidden = vec![16];
    cfg.init = FlowInit::Random;
    let flow = FlowModel::new(cfg, seed as u64).map_err(js_err)?;
    let step = 2.0 * extent / (res - 1) as f64;
    let z = Array2::from_shape_fn((res * res, 2), |(i, k)| {
        let idx = if k == 0 { i % res } else { i / res };
        -extent + step * idx as f64
    });
    let cond = Array2::from_elem((res * res, 1), c);
    let ll = flow
        .log_likelihood_batch(z.view(), cond.view())
        .map_err(js_err)?;
    Ok(ll.iter().map(|v| v.exp()).collect())
}

//! Analytic Gaussian-bump fields standing in for an expensive simulation.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::surrogate::ParamSpace;
use crate::types::{FieldGrid, ParamVector};

/// Fixed centre of the secondary bump.
pub const SECOND_CENTER: [f64; 3] = [0.75, 0.25, 0.5];
pub const SECOND_WIDTH: f64 = 0.15;
pub const BACKGROUND_SLOPE: f64 = 0.2;
/// Value used for generator inputs when fewer than four parameters exist.
const MISSING_PARAM: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dims: [usize; 3],
    pub param_dim: usize,
    pub train_count: usize,
    pub test_count: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dims: [16, 16, 16],
            param_dim: 4,
            train_count: 128,
            test_count: 20,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n < 8) {
            return Err(Error::Config(format!(
                "grid resolution {:?} must be at least 8 per axis",
                self.dims
            )));
        }
        if self.param_dim < 1 {
            return Err(Error::Config(
                "parameter dimension must be at least 1".into(),
            ));
        }
        if self.train_count < 1 || self.test_count < 1 {
            return Err(Error::Config(
                "train and test counts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Raw ranges for the generator's parameters; normalized values map
/// linearly onto these.
pub fn synth_param_space(n: usize) -> ParamSpace {
    let known = [
        ("center_x", (0.2, 0.8)),
        ("center_y", (0.2, 0.8)),
        ("width", (0.05, 0.25)),
        ("amplitude", (0.0, 1.0)),
    ];
    let (names, ranges) = (0..n)
        .map(|i| match known.get(i) {
            Some(&(name, r)) => (name.to_string(), r),
            None => (format!("unused_{i}"), (0.0, 1.0)),
        })
        .unzip();
    ParamSpace { names, ranges }
}

struct BumpParams {
    mu1: [f64; 3],
    sigma1: f64,
    amp2: f64,
}

fn bump_params(c: &ParamVector) -> Result<BumpParams> {
    if c.dim() < 1 {
        return Err(Error::Usage(
            "generator needs at least one parameter".into(),
        ));
    }
    if let Some((i, v)) = c
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::Domain(format!(
            "parameter {i} = {v} is outside [0, 1]"
        )));
    }
    let p = |i: usize| c.get(i).copied().unwrap_or(MISSING_PARAM);
    Ok(BumpParams {
        mu1: [0.2 + 0.6 * p(0), 0.2 + 0.6 * p(1), 0.5],
        sigma1: 0.05 + 0.2 * p(2),
        amp2: p(3),
    })
}

fn eval(b: &BumpParams, v: [f64; 3]) -> f64 {
    let d1: f64 = (0..3).map(|k| (v[k] - b.mu1[k]).powi(2)).sum();
    let d2: f64 = (0..3).map(|k| (v[k] - SECOND_CENTER[k]).powi(2)).sum();
    (-d1 / (2.0 * b.sigma1 * b.sigma1)).exp()
        + b.amp2 * (-d2 / (2.0 * SECOND_WIDTH * SECOND_WIDTH)).exp()
        + BACKGROUND_SLOPE * v[2]
}

/// Closed-form field value at unit-cube point `v = (x, y, z)`.
pub fn field_value_at(c: &ParamVector, v: [f64; 3]) -> Result<f64> {
    Ok(eval(&bump_params(c)?, v))
}

/// Cell-centred unit coordinate of voxel `(d, h, w)`: x runs along W,
/// y along H and z along D.
pub fn voxel_coord(dims: [usize; 3], d: usize, h: usize, w: usize) -> [f64; 3] {
    [
        (w as f64 + 0.5) / dims[2] as f64,
        (h as f64 + 0.5) / dims[1] as f64,
        (d as f64 + 0.5) / dims[0] as f64,
    ]
}

pub fn generate_field(c: &ParamVector, dims: [usize; 3]) -> Result<FieldGrid> {
    let b = bump_params(c)?;
    let mut values = Vec::with_capacity(dims.iter().product());
    for d in 0..dims[0] {
        for h in 0..dims[1] {
            for w in 0..dims[2] {
                values.push(eval(&b, voxel_coord(dims, d, h, w)));
            }
        }
    }
    FieldGrid::with_own_range(dims, values)
}

/// Latin-hypercube sample of `count` points in `[0, 1]^dim`.
pub fn latin_hypercube(count: usize, dim: usize, seed: u64) -> Vec<ParamVector> {
    let mut rng = seeded(seed);
    let mut points = vec![vec![0.0; dim]; count];
    for k in 0..dim {
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(&mut rng);
        for (p, s) in points.iter_mut().zip(strata) {
            let u: f64 = rng.random();
            p[k] = (s as f64 + u) / count as f64;
        }
    }
    points.into_iter().map(ParamVector).collect()
}

/// Samples train and test parameters from independent hypercubes and
/// renders every field. Train samples come first.
pub fn make_dataset(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let train = latin_hypercube(cfg.train_count, cfg.param_dim, derive_seed(seed, 1));
    let test = latin_hypercube(cfg.test_count, cfg.param_dim, derive_seed(seed, 2));
    if test.iter().any(|t| train.contains(t)) {
        return Err(Error::Training(
            "train and test parameter sets overlap".into(),
        ));
    }
    let params: Vec<ParamVector> = train.into_iter().chain(test).collect();
    let fields = params
        .iter()
        .map(|c| generate_field(c, cfg.dims))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        synth_param_space(cfg.param_dim),
        params,
        fields,
        cfg.train_count,
    )
}

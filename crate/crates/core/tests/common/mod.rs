#![allow(dead_code)]

use paramflow::flow::{FlowConfig, FlowInit, FlowModel};

/// Relative error with a small absolute floor so near-zero gradient
/// components do not dominate.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()) + 1e-6)
}

/// Central finite difference of `f` with respect to `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

pub fn random_flow(
    d: usize,
    n: usize,
    k1: usize,
    k2: usize,
    hidden: usize,
    seed: u64,
) -> FlowModel {
    let mut cfg = FlowConfig::new(d, n);
    cfg.conditional_blocks = k1;
    cfg.unconditional_blocks = k2;
    cfg.coupling_hidden = vec![hidden];
    cfg.head_hidden = vec![hidden];
    cfg.init = FlowInit::Random;
    FlowModel::new(cfg, seed).unwrap()
}

/// log |det J| via LU decomposition of a dense row-major matrix.
pub fn log_abs_det(d: usize, jac: &[f64]) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(d, d, jac);
    m.lu().determinant().abs().ln()
}

//! Field-quality and parameter-accuracy metrics.

use crate::error::{check_dim, Error, Result};
use crate::types::FieldGrid;

/// Side of the square SSIM window.
pub const SSIM_WINDOW: usize = 7;

fn check_same_dims(a: &FieldGrid, b: &FieldGrid) -> Result<()> {
    check_dim("field length", a.len(), b.len())?;
    if a.dims != b.dims {
        return Err(Error::shape(
            "field dims",
            a.dims.iter().product(),
            b.dims.iter().product(),
        ));
    }
    Ok(())
}

fn dynamic_range(a: &FieldGrid) -> f64 {
    let l = a.dynamic_range();
    if l > 0.0 {
        l
    } else {
        1.0
    }
}

/// Peak signal-to-noise ratio in dB with peak `L` taken from `a`'s value
/// range. Identical fields give `f64::INFINITY`.
pub fn psnr(a: &FieldGrid, b: &FieldGrid) -> Result<f64> {
    check_same_dims(a, b)?;
    let mse = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let l = dynamic_range(a);
    Ok(10.0 * (l * l / mse).log10())
}

/// Mean SSIM over all valid 7x7 windows of the central depth slice.
pub fn ssim(a: &FieldGrid, b: &FieldGrid) -> Result<f64> {
    check_same_dims(a, b)?;
    let (rows, cols, sa) = a.central_slice(0);
    let (_, _, sb) = b.central_slice(0);
    ssim_2d(&sa, &sb, rows, cols, dynamic_range(a))
}

/// SSIM of two row-major images with a uniform window.
pub fn ssim_2d(a: &[f64], b: &[f64], rows: usize, cols: usize, range: f64) -> Result<f64> {
    check_dim("image length", a.len(), b.len())?;
    check_dim("image length", rows * cols, a.len())?;
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::Usage(format!(
            "SSIM needs at least a {SSIM_WINDOW}x{SSIM_WINDOW} slice, got {rows}x{cols}"
        )));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let area = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=rows - SSIM_WINDOW {
        for c0 in 0..=cols - SSIM_WINDOW {
            let (mut sa, mut sb) = (0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    sa += a[r * cols + c];
                    sb += b[r * cols + c];
                }
            }
            let (ma, mb) = (sa / area, sb / area);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let da = a[r * cols + c] - ma;
                    let db = b[r * cols + c] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= area;
            vb /= area;
            cov /= area;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Mean absolute error between two parameter vectors.
pub fn mae_params(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_dim("parameter vector", truth.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::Usage("MAE of empty vectors".into()));
    }
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("vector", a.len(), b.len())?;
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Mean of per-sample MAE and cosine similarity over paired vectors.
pub fn aggregate_param_errors<P: AsRef<[f64]>, T: AsRef<[f64]>>(
    preds: &[P],
    truths: &[T],
) -> Result<(f64, f64)> {
    check_dim("sample count", truths.len(), preds.len())?;
    if preds.is_empty() {
        return Err(Error::Usage("no samples to aggregate".into()));
    }
    let mut mae = 0.0;
    let mut cos = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        mae += mae_params(p.as_ref(), t.as_ref())?;
        cos += cosine_sim(p.as_ref(), t.as_ref())?;
    }
    let n = preds.len() as f64;
    Ok((mae / n, cos / n))
}

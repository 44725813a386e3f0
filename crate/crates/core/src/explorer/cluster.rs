//! K-means over latent means and a PCA projection for display.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-8;
pub const PCA_TOL: f64 = 1e-10;
const PCA_MAX_ITERS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster SSE after each assignment step.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist2(p, c)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map(Vec::len).unwrap_or(0);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Usage("points must share a dimension".into()));
    }
    Ok(dim)
}

/// k-means++ seeding: first center uniform, the rest proportional to the
/// squared distance from the nearest chosen center.
fn plus_plus(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d.iter().sum();
        let idx = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d.iter()
                .position(|&w| {
                    acc += w;
                    acc > u
                })
                .unwrap_or_else(|| d.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[idx].clone());
    }
    centers
}

/// Lloyd's algorithm with k-means++ initialization. A cluster that loses
/// all members keeps its previous center.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    let dim = check_points(points)?;
    if k < 1 || k > points.len() {
        return Err(Error::Usage(format!(
            "k = {k} must be in 1..={}",
            points.len()
        )));
    }
    let mut centers = plus_plus(points, k, seed);
    let mut assignments = vec![0; points.len()];
    let mut sse_history = Vec::new();
    let mut iterations = 0;
    for _ in 0..KMEANS_MAX_ITERS {
        iterations += 1;
        let mut sse = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (i, d) = nearest(p, &centers);
            *a = i;
            sse += d;
        }
        sse_history.push(sse);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut shift: f64 = 0.0;
        for ((c, s), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            if n == 0 {
                continue;
            }
            let new: Vec<f64> = s.into_iter().map(|v| v / n as f64).collect();
            shift = shift.max(dist2(c, &new).sqrt());
            *c = new;
        }
        if shift <= KMEANS_TOL {
            break;
        }
    }
    Ok(KMeansResult {
        centers,
        assignments,
        sse_history,
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
}

fn covariance(centered: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = centered[0].len();
    let n = centered.len() as f64;
    let mut cov = vec![vec![0.0; dim]; dim];
    for p in centered {
        for i in 0..dim {
            for j in 0..dim {
                cov[i][j] += p[i] * p[j];
            }
        }
    }
    cov.iter_mut().flatten().for_each(|v| *v /= n);
    cov
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Leading eigenpair by power iteration from `start`.
fn power_iteration(m: &[Vec<f64>], mut v: Vec<f64>) -> (f64, Vec<f64>) {
    if normalize(&mut v) == 0.0 {
        return (0.0, v);
    }
    for _ in 0..PCA_MAX_ITERS {
        let mut w = mat_vec(m, &v);
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return (0.0, v);
        }
        let delta = v
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = w;
        if delta < PCA_TOL {
            break;
        }
    }
    let mv = mat_vec(m, &v);
    let rayleigh = v.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>();
    (rayleigh, v)
}

/// Largest-norm row after removing the span of `basis`; used as a start
/// vector that lies in the data span.
fn residual_start(centered: &[Vec<f64>], basis: &[Vec<f64>]) -> Vec<f64> {
    centered
        .iter()
        .map(|p| {
            let mut r = p.clone();
            for b in basis {
                let dot: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
                r.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            r
        })
        .max_by(|a, b| dist2(a, &vec![0.0; a.len()]).total_cmp(&dist2(b, &vec![0.0; b.len()])))
        .unwrap()
}

/// Basis vector least aligned with `basis`, orthogonalized against it.
fn orthogonal_unit(dim: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let align = |i: usize| basis.iter().map(|b| b[i].abs()).sum::<f64>();
    let i = (0..dim)
        .min_by(|&a, &b| align(a).total_cmp(&align(b)))
        .unwrap_or(0);
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    for b in basis {
        let dot = v[i] * b[i];
        v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
    }
    normalize(&mut v);
    v
}

/// Projects points onto their top two principal components, found by
/// power iteration with deflation. Each component's sign makes its
/// largest-magnitude entry positive.
pub fn project2d(points: &[Vec<f64>]) -> Result<Projection> {
    let dim = check_points(points)?;
    if points.len() < 2 {
        return Err(Error::Usage("projection needs at least 2 points".into()));
    }
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n)
        .collect();
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(a, b)| a - b).collect())
        .collect();
    let mut cov = covariance(&centered);
    let mut comps: Vec<Vec<f64>> = Vec::new();
    let mut eig = [0.0; 2];
    for slot in 0..2 {
        if dim <= slot {
            comps.push(vec![0.0; dim]);
            continue;
        }
        let (lambda, mut v) = power_iteration(&cov, residual_start(&centered, &comps));
        // Re-orthogonalize; matters when the deflated matrix is numerically zero.
        for c in &comps {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        if normalize(&mut v) < 1e-8 {
            v = orthogonal_unit(dim, &comps);
        }
        if let Some(big) = v.iter().cloned().max_by(|a, b| a.abs().total_cmp(&b.abs())) {
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        eig[slot] = lambda;
        comps.push(v);
    }
    let proj = |p: &Vec<f64>, c: &Vec<f64>| p.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
    Ok(Projection {
        points: centered
            .iter()
            .map(|p| [proj(p, &comps[0]), proj(p, &comps[1])])
            .collect(),
        eigenvalues: eig,
        components: [comps[0].clone(), comps[1].clone()],
        mean,
    })
}

impl Projection {
    /// Projects a further point with the fitted mean and components.
    pub fn project(&self, p: &[f64]) -> Result<[f64; 2]> {
        if p.len() != self.mean.len() {
            return Err(Error::shape("projected point", self.mean.len(), p.len()));
        }
        let dot = |c: &Vec<f64>| {
            p.iter()
                .zip(&self.mean)
                .zip(c)
                .map(|((x, m), v)| (x - m) * v)
                .sum::<f64>()
        };
        Ok([dot(&self.components[0]), dot(&self.components[1])])
    }
}

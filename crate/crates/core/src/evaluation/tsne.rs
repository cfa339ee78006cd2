//! Exact t-SNE and the silhouette coefficient.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and low momentum.
    pub exaggeration_iterations: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self { perplexity: 30.0, iterations: 1000, learning_rate: 200.0, early_exaggeration: 12.0, exaggeration_iterations: 250 }
    }
}

fn squared_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Row `i` of the conditional affinities, with the Gaussian precision
/// found by bisection so that the row entropy matches `ln(perplexity)`.
fn conditional_row(d: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
    let d_min = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut p = vec![0.0; d.len()];
    for _ in 0..200 {
        let mut sum = 0.0;
        for (j, (pj, &dj)) in p.iter_mut().zip(d).enumerate() {
            // shifting by the nearest distance keeps exp() away from underflow
            *pj = if j == i { 0.0 } else { (-(dj - d_min) * beta).exp() };
            sum += *pj;
        }
        let weighted: f64 = p.iter().zip(d).map(|(pj, dj)| pj * (dj - d_min)).sum();
        let entropy = sum.ln() + beta * weighted / sum;
        p.iter_mut().for_each(|v| *v /= sum);
        let diff = entropy - target;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    p
}

/// Embeds the rows of `x` in two dimensions. Deterministic given `seed`.
pub fn tsne_embed(x: ArrayView2<f64>, cfg: &TsneConfig, seed: u64) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 4 {
        return Err(Error::Evaluation(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !(cfg.perplexity > 0.0) || cfg.perplexity >= n as f64 / 3.0 {
        return Err(Error::Evaluation(format!(
            "perplexity {} must be positive and below N/3 = {:.2}",
            cfg.perplexity,
            n as f64 / 3.0
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("t-SNE input contains non-finite values".into()));
    }
    let d = squared_distances(x);
    let mut p = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let row = conditional_row(d.row(i).as_slice().expect("standard layout"), i, cfg.perplexity);
        p.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    let p = (&p + &p.t()).mapv(|v| (v / (2.0 * n as f64)).max(1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y = Array2::from_shape_simple_fn((n, 2), || init.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut num = Array2::<f64>::zeros((n, n));
    let mut grad = Array2::<f64>::zeros((n, 2));
    for it in 0..cfg.iterations {
        let early = it < cfg.exaggeration_iterations;
        let exaggeration = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let mut sum_q = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dy0 = y[[i, 0]] - y[[j, 0]];
                let dy1 = y[[i, 1]] - y[[j, 1]];
                let v = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[[i, j]] = v;
                num[[j, i]] = v;
                sum_q += 2.0 * v;
            }
        }
        grad.fill(0.0);
        for i in 0..n {
            let (mut g0, mut g1) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = num[[i, j]];
                let w = (exaggeration * p[[i, j]] - (v / sum_q).max(1e-12)) * v;
                g0 += w * (y[[i, 0]] - y[[j, 0]]);
                g1 += w * (y[[i, 1]] - y[[j, 1]]);
            }
            grad[[i, 0]] = 4.0 * g0;
            grad[[i, 1]] = 4.0 * g1;
        }
        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) { *gain + 0.2 } else { (*gain * 0.8).max(0.01) };
            *u = momentum * *u - cfg.learning_rate * *gain * g;
        }
        y += &update;
        let mean = y.mean_axis(ndarray::Axis(0)).expect("non-empty");
        y -= &mean;
    }
    Ok(y)
}

/// Mean silhouette coefficient of `x`'s rows under `labels`, Euclidean
/// distance. Points alone in their cluster score 0.
pub fn silhouette_score(x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::Evaluation(format!("{n} points for {} labels", labels.len())));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Evaluation("silhouette needs at least two non-empty clusters".into()));
    }
    let d = squared_distances(x).mapv(f64::sqrt);
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            sums[labels[j]] += d[[i, j]];
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k).filter(|&c| c != own && sizes[c] > 0).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / n as f64)
}

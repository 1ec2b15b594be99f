//! Sample-quality metrics against the analytic data distribution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::score::MixtureSpec;
use crate::state::State;

/// Number of random projections used by the sliced distance.
pub const N_PROJECTIONS: usize = 64;
/// Seed of the projection directions.
pub const PROJECTION_SEED: u64 = 0x5eed_0f_d1ec;
/// Minimum sample count accepted by [`sample_error_metrics`].
pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    /// Euclidean gap between sample and data position means.
    pub mean_err: f64,
    /// Frobenius gap between sample and data position covariances.
    pub cov_err: f64,
    /// Average 1-D Wasserstein-1 distance over fixed random projections.
    pub sliced_w1: f64,
}

/// Position mean and covariance of a sample set (`d × d`, row-major).
pub fn empirical_moments(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = xs.first().map_or(0, Vec::len);
    let n = xs.len() as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        for i in 0..d {
            mean[i] += x[i] / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for x in xs {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}

/// Unit directions shared by every sliced-distance evaluation.
pub fn projections(d: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    (0..N_PROJECTIONS)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / norm).collect()
        })
        .collect()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Projected position marginal of the data mixture: `(weight, mean, sd)` per component.
fn projected_mixture(mixture: &MixtureSpec, dir: &[f64]) -> Vec<(f64, f64, f64)> {
    mixture
        .components
        .iter()
        .map(|c| {
            let mu: f64 = c.mean.x.iter().zip(dir).map(|(a, b)| a * b).sum();
            (c.weight, mu, c.cov.xx.sqrt())
        })
        .collect()
}

fn mixture_cdf(comps: &[(f64, f64, f64)], y: f64) -> f64 {
    comps.iter().map(|&(w, mu, sd)| w * normal_cdf((y - mu) / sd)).sum()
}

/// `∫ |F_n(y) − F(y)| dy` for sorted samples against an analytic mixture CDF.
/// The empirical CDF is constant between breakpoints; each segment is
/// integrated with Simpson's rule after merging a uniform background grid.
fn w1_against_cdf(sorted: &[f64], comps: &[(f64, f64, f64)]) -> f64 {
    let lo_mix = comps.iter().map(|&(_, mu, sd)| mu - 12.0 * sd).fold(f64::INFINITY, f64::min);
    let hi_mix = comps.iter().map(|&(_, mu, sd)| mu + 12.0 * sd).fold(f64::NEG_INFINITY, f64::max);
    let lo = lo_mix.min(sorted[0]);
    let hi = hi_mix.max(sorted[sorted.len() - 1]);
    const GRID: usize = 2048;
    let n = sorted.len() as f64;
    let mut total = 0.0;
    let mut a = lo;
    let mut count = 0usize;
    let mut g = 1usize;
    let mut f_lo = mixture_cdf(comps, a);
    loop {
        let next_grid = if g <= GRID { lo + (hi - lo) * g as f64 / GRID as f64 } else { f64::INFINITY };
        let next_sample = sorted.get(count).copied().unwrap_or(f64::INFINITY);
        let b = next_grid.min(next_sample);
        if !b.is_finite() {
            break;
        }
        if b > a {
            let c = count as f64 / n;
            let f_mid = mixture_cdf(comps, 0.5 * (a + b));
            let f_hi = mixture_cdf(comps, b);
            total += (b - a) / 6.0 * ((c - f_lo).abs() + 4.0 * (c - f_mid).abs() + (c - f_hi).abs());
            a = b;
            f_lo = f_hi;
        }
        if next_sample <= next_grid {
            count += 1;
        } else {
            g += 1;
        }
    }
    total
}

/// Sliced W1 between position samples and the data mixture's exact position marginal.
pub fn sliced_w1_analytic(xs: &[Vec<f64>], mixture: &MixtureSpec) -> f64 {
    let d = mixture.dim();
    let dirs = projections(d);
    let mut acc = 0.0;
    for dir in &dirs {
        let mut proj: Vec<f64> = xs.iter().map(|x| x.iter().zip(dir).map(|(a, b)| a * b).sum()).collect();
        proj.sort_by(f64::total_cmp);
        acc += w1_against_cdf(&proj, &projected_mixture(mixture, dir));
    }
    acc / dirs.len() as f64
}

/// Sliced W1 between two equally sized empirical position sets.
pub fn sliced_w1_empirical(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let dirs = projections(a[0].len());
    let mut acc = 0.0;
    for dir in &dirs {
        let proj = |xs: &[Vec<f64>]| {
            let mut p: Vec<f64> = xs.iter().map(|x| x.iter().zip(dir).map(|(u, v)| u * v).sum()).collect();
            p.sort_by(f64::total_cmp);
            p
        };
        let (pa, pb) = (proj(a), proj(b));
        acc += pa.iter().zip(&pb).map(|(u, v)| (u - v).abs()).sum::<f64>() / pa.len() as f64;
    }
    Ok(acc / dirs.len() as f64)
}

/// Mean, covariance and sliced-W1 gaps of `samples` (positions only) to the data mixture.
pub fn sample_error_metrics(samples: &[State], mixture: &MixtureSpec) -> Result<SampleMetrics> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InvalidSpec(format!("need at least {MIN_SAMPLES} samples, got {}", samples.len())));
    }
    let d = mixture.dim();
    if let Some(s) = samples.iter().find(|s| s.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: s.dim() });
    }
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
    let (mean, cov) = empirical_moments(&xs);
    let (dmean, dcov) = mixture.position_moments();
    let mean_err = mean.iter().zip(&dmean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let cov_err = cov.iter().zip(&dcov).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let sliced_w1 = if samples.iter().all(State::is_finite) { sliced_w1_analytic(&xs, mixture) } else { f64::INFINITY };
    Ok(SampleMetrics { mean_err, cov_err, sliced_w1 })
}

//! Local truncation order estimates against the exact single-Gaussian flow.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conjugate::{BTChoice, TableOptions};
use crate::error::{Error, Result};
use crate::harness::reference::exact_flow;
use crate::ode::Tolerance;
use crate::score::{GaussianMixtureScore, MixtureSpec, ScoreParameterization, ScoreProvider};
use crate::splitting::{ChainState, SamplerKind, Sampler};
use crate::state::State;

/// Magnus substeps per reference interval.
pub const REFERENCE_SUBSTEPS: usize = 64;

/// One-step errors and fitted log–log slopes for one sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderResult {
    pub kind: SamplerKind,
    pub hs: Vec<f64>,
    pub err_x: Vec<f64>,
    pub err_m: Vec<f64>,
    pub slope_x: f64,
    pub slope_m: f64,
    /// `exp(mean(log err − 2 log h))`: the `h²` coefficient.
    pub coef_x: f64,
    pub coef_m: f64,
}

/// `n` log-spaced points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Least-squares slope of `log err` against `log h`.
pub fn fit_slope(hs: &[f64], errs: &[f64]) -> f64 {
    let n = hs.len() as f64;
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Geometric-mean coefficient `c` of `err ≈ c h^p`.
pub fn fixed_slope_coefficient(hs: &[f64], errs: &[f64], p: f64) -> f64 {
    let n = hs.len() as f64;
    (hs.iter().zip(errs).map(|(h, e)| e.ln() - p * h.ln()).sum::<f64>() / n).exp()
}

/// Largest absolute one-step errors `(position, momentum)` of `kind` from
/// `(z, t)` to `t − h` for each `h`.
pub fn one_step_errors(
    kind: SamplerKind,
    param: &ScoreParameterization,
    mixture: &MixtureSpec,
    z: &State,
    t: f64,
    hs: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if kind.is_stochastic() {
        return Err(Error::UnsupportedProcess { kind: kind.to_string(), process: "one-step order test".into() });
    }
    let spec = param.spec;
    let model = Arc::new(GaussianMixtureScore::new(mixture.clone(), spec)?);
    let opts = TableOptions { tol: Tolerance::uniform(1e-12), ab_order: 0 };
    let mut ex = Vec::with_capacity(hs.len());
    let mut em = Vec::with_capacity(hs.len());
    for &h in hs {
        if !(h > 0.0 && h < t) {
            return Err(Error::BadRange(format!("step {h} does not fit below t = {t}")));
        }
        let times = [t, t - h];
        let sampler = Sampler::new(kind, param, &times, BTChoice::Zero, opts)?;
        let provider = ScoreProvider::new(model.clone(), *param);
        let mut chain = ChainState::new(z.clone());
        sampler.step(&provider, 0, 0, &mut chain)?;
        let exact = exact_flow(&spec, mixture, z, t, t - h, REFERENCE_SUBSTEPS)?;
        let dx = chain.z.x.iter().zip(&exact.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dm = chain.z.m.iter().zip(&exact.m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ex.push(dx);
        em.push(dm);
    }
    Ok((ex, em))
}

/// Slopes and `h²` coefficients of the one-step errors of `kind`.
pub fn convergence_order(
    kind: SamplerKind,
    param: &ScoreParameterization,
    mixture: &MixtureSpec,
    z: &State,
    t: f64,
    hs: &[f64],
) -> Result<OrderResult> {
    let (err_x, err_m) = one_step_errors(kind, param, mixture, z, t, hs)?;
    Ok(OrderResult {
        kind,
        hs: hs.to_vec(),
        slope_x: fit_slope(hs, &err_x),
        slope_m: fit_slope(hs, &err_m),
        coef_x: fixed_slope_coefficient(hs, &err_x, 2.0),
        coef_m: fixed_slope_coefficient(hs, &err_m, 2.0),
        err_x,
        err_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let hs = log_grid(1e-3, 1e-1, 7);
        let errs: Vec<f64> = hs.iter().map(|h| 3.0 * h * h).collect();
        assert!((fit_slope(&hs, &errs) - 2.0).abs() < 1e-12);
        assert!((fixed_slope_coefficient(&hs, &errs, 2.0) - 3.0).abs() < 1e-12);
    }
}

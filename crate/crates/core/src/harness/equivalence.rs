//! Equivalence checks of the conjugate integrator against independently
//! written update rules: DDIM for VP, and the original-space exponential
//! integrator (with and without polynomial extrapolation) for PSLD.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conjugate::{build_table, conjugate_ab_step, conjugate_euler_step, BTChoice, Mask, TableOptions};
use crate::error::Result;
use crate::harness::schedule::{make_schedule, ScheduleKind};
use crate::linalg2::{apply_to_state, cholesky2, inverse2, mat_exp, BlockMat2};
use crate::ode::{integrate, Tolerance};
use crate::score::{GaussianMixtureScore, MixtureSpec, ScoreModel, ScoreParameterization, ScoreProvider};
use crate::sde::ProcessSpec;
use crate::state::State;

/// Quadrature tolerance used for the coefficient tables in these checks.
pub const EQUIVALENCE_QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub name: String,
    pub n_steps: usize,
    pub max_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl EquivalenceReport {
    fn new(name: &str, n_steps: usize, max_diff: f64, tolerance: f64) -> Self {
        EquivalenceReport { name: name.into(), n_steps, max_diff, tolerance, pass: max_diff < tolerance }
    }
}

fn table_opts(ab_order: usize) -> TableOptions {
    TableOptions { tol: Tolerance::uniform(EQUIVALENCE_QUAD_TOL), ab_order }
}

/// DDIM with `α_t = exp(−½∫β)`, `σ_t = √(1 − α_t²)`, `ε = −σ_t s`:
/// `x' = (α'/α) x + (σ' − α'σ/α) ε`.
pub fn ddim_update(spec: &ProcessSpec, model: &dyn ScoreModel, x: &[f64], t: f64, t_next: f64) -> Result<Vec<f64>> {
    let alpha = |t: f64| (-0.5 * spec.beta_integral(t)).exp();
    let sigma = |t: f64| (-(-spec.beta_integral(t)).exp_m1()).sqrt();
    let z = State { x: x.to_vec(), m: vec![0.0; x.len()] };
    let s = model.score(&z, t)?;
    let ratio = alpha(t_next) / alpha(t);
    let coef = sigma(t_next) - ratio * sigma(t);
    Ok(x.iter().zip(&s.x).map(|(xi, si)| ratio * xi + coef * (-sigma(t) * si)).collect())
}

/// VP (β = 8) with a single Gaussian: conjugate Euler with `B = 0` against DDIM.
pub fn ddim_equivalence(n_steps: usize) -> Result<EquivalenceReport> {
    let spec = ProcessSpec::vp_constant(8.0);
    let mix = MixtureSpec::from_position_mixture(&spec, &[1.0], &[vec![0.6, -0.3]], &[0.2])?;
    let model = Arc::new(GaussianMixtureScore::new(mix, spec)?);
    let param = ScoreParameterization::default_for(spec);
    let provider = ScoreProvider::new(model.clone(), param);
    let times = make_schedule(ScheduleKind::Quadratic, n_steps, spec.t_end, 1e-3)?.times;
    let table = build_table(&param, BTChoice::Zero, &times, Mask::None, table_opts(0))?;
    let mut z = State { x: vec![1.1, -0.7], m: vec![0.0; 2] };
    let mut x = z.x.clone();
    let mut worst: f64 = 0.0;
    for j in 0..n_steps {
        let ev = provider.eval(&z, times[j])?;
        z = conjugate_euler_step(&table, j, &z, &ev.eps);
        x = ddim_update(&spec, model.as_ref(), &x, times[j], times[j + 1])?;
        worst = z.x.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok(EquivalenceReport::new("vp-ddim", n_steps, worst, 1e-10))
}

/// `−L_s^{-ᵀ}` of the noise-only kernel, computed from the kernel covariance directly.
fn neg_chol_inv_t(spec: &ProcessSpec, s: f64) -> Result<BlockMat2> {
    let cov = spec.kernel_cov(s, spec.zero_init_cov());
    Ok(-inverse2(cholesky2(cov)?)?.transpose())
}

/// Weights `∫_{t}^{t_next} ψ(t_next, s) ½ G Gᵀ L_s^{-ᵀ} ℓ_k(s) ds` for the
/// Lagrange basis `ℓ_k` on `nodes` (`ℓ_0 ≡ 1` when `nodes` has one entry).
fn exponential_weights(spec: &ProcessSpec, t: f64, t_next: f64, nodes: &[f64]) -> Result<Vec<BlockMat2>> {
    let f = spec.drift_matrix(0.0);
    let ggt = spec.ggt(0.0);
    let k = nodes.len();
    let failure = std::cell::RefCell::new(None);
    let rhs = |s: f64, _y: &[f64]| -> Vec<f64> {
        let c_out = match neg_chol_inv_t(spec, s) {
            Ok(c) => c,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                return vec![0.0; 4 * k];
            }
        };
        let base = mat_exp(f, t_next - s) * (ggt * c_out).scale(-0.5);
        let mut out = Vec::with_capacity(4 * k);
        for i in 0..k {
            let li: f64 = (0..k).filter(|&j| j != i).map(|j| (s - nodes[j]) / (nodes[i] - nodes[j])).product();
            out.extend_from_slice(&base.scale(li).to_array());
        }
        out
    };
    let sol = integrate(rhs, t, &vec![0.0; 4 * k], &[t_next], Tolerance::new(1e-14, 1e-12))?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok((0..k).map(|i| BlockMat2::from_array([sol[0][4 * i], sol[0][4 * i + 1], sol[0][4 * i + 2], sol[0][4 * i + 3]])).collect())
}

fn psld_single_gaussian() -> Result<(ProcessSpec, Arc<GaussianMixtureScore>)> {
    let spec = ProcessSpec::psld_default();
    let mix = MixtureSpec::from_position_mixture(&spec, &[1.0], &[vec![0.5, -1.0]], &[0.3])?;
    Ok((spec, Arc::new(GaussianMixtureScore::new(mix, spec)?)))
}

/// PSLD defaults: conjugate Euler (`B = 0`) against `z' = ψ z + (∫ψ ½GGᵀL^{-ᵀ}) ε`.
pub fn exponential_integrator_equivalence(n_steps: usize) -> Result<EquivalenceReport> {
    let (spec, model) = psld_single_gaussian()?;
    let param = ScoreParameterization::default_for(spec);
    let provider = ScoreProvider::new(model, param);
    let times = make_schedule(ScheduleKind::Quadratic, n_steps, spec.t_end, 1e-3)?.times;
    let table = build_table(&param, BTChoice::Zero, &times, Mask::None, table_opts(0))?;
    let f = spec.drift_matrix(0.0);
    let mut z = State { x: vec![0.9, -0.4], m: vec![0.3, 0.8] };
    let mut w = z.clone();
    let mut worst: f64 = 0.0;
    for j in 0..n_steps {
        let (t, t1) = (times[j], times[j + 1]);
        let ev = provider.eval(&z, t)?;
        z = conjugate_euler_step(&table, j, &z, &ev.eps);
        let ew = provider.eval(&w, t)?;
        let weights = exponential_weights(&spec, t, t1, &[t])?;
        w = apply_to_state(mat_exp(f, t1 - t), &w).axpy(1.0, &apply_to_state(weights[0], &ew.eps));
        worst = worst.max(z.max_abs_diff(&w));
    }
    Ok(EquivalenceReport::new("psld-exponential-integrator", n_steps, worst, 1e-8))
}

/// PSLD defaults: order-1 Adams–Bashforth conjugate steps against the
/// exponential integrator with linear extrapolation of `ε` through the last
/// two nodes (first step uses the constant extrapolation).
pub fn ab_polynomial_equivalence(n_steps: usize) -> Result<EquivalenceReport> {
    let (spec, model) = psld_single_gaussian()?;
    let param = ScoreParameterization::default_for(spec);
    let provider = ScoreProvider::new(model, param);
    let times = make_schedule(ScheduleKind::Quadratic, n_steps, spec.t_end, 1e-3)?.times;
    let table = build_table(&param, BTChoice::Zero, &times, Mask::None, table_opts(1))?;
    let f = spec.drift_matrix(0.0);
    let mut z = State { x: vec![0.9, -0.4], m: vec![0.3, 0.8] };
    let mut w = z.clone();
    let mut hist_z: Vec<State> = Vec::new();
    let mut hist_w: Vec<State> = Vec::new();
    let mut worst: f64 = 0.0;
    for j in 0..n_steps {
        let (t, t1) = (times[j], times[j + 1]);
        hist_z.insert(0, provider.eval(&z, t)?.eps);
        hist_z.truncate(2);
        let order = if j >= 1 { 1 } else { 0 };
        z = conjugate_ab_step(&table, j, &z, &hist_z, order)?;

        hist_w.insert(0, provider.eval(&w, t)?.eps);
        hist_w.truncate(2);
        let nodes: Vec<f64> = (0..=order).map(|l| times[j - l]).collect();
        let weights = exponential_weights(&spec, t, t1, &nodes)?;
        let mut next = apply_to_state(mat_exp(f, t1 - t), &w);
        for (wk, e) in weights.iter().zip(&hist_w) {
            next = next.axpy(1.0, &apply_to_state(*wk, e));
        }
        w = next;
        worst = worst.max(z.max_abs_diff(&w));
    }
    Ok(EquivalenceReport::new("psld-adams-bashforth-1", n_steps, worst, 1e-6))
}

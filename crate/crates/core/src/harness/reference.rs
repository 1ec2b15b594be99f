//! Ground-truth probability-flow trajectories: an adaptive high-accuracy
//! solve for any score, and the exact affine flow for a single Gaussian.

use crate::error::{Error, Result};
use crate::linalg2::{apply_to_state, inverse2, mat_exp, BlockMat2};
use crate::ode::{integrate, Tolerance};
use crate::score::{MixtureSpec, ScoreModel};
use crate::sde::ProcessSpec;
use crate::state::State;

/// Default tolerance of the reference solve.
pub const REFERENCE_TOL: f64 = 1e-10;

/// Solves the probability-flow ODE from `z` at `times[0]` through every
/// entry of `times` (monotone) with an adaptive 5(4) pair.
pub fn reference_solution(
    spec: &ProcessSpec,
    model: &dyn ScoreModel,
    z: &State,
    times: &[f64],
    tol: f64,
) -> Result<Vec<State>> {
    let Some(&t0) = times.first() else {
        return Ok(Vec::new());
    };
    let failure = std::cell::RefCell::new(None);
    let rhs = |t: f64, y: &[f64]| -> Vec<f64> {
        let z = State::from_flat(y);
        match model.score(&z, t) {
            Ok(s) => spec.prob_flow_field(&s, &z, t).to_flat(),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                vec![0.0; y.len()]
            }
        }
    };
    let sol = integrate(rhs, t0, &z.to_flat(), times, Tolerance::new(tol * 1e-2, tol))?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(sol.iter().map(|y| State::from_flat(y)).collect())
}

/// Coefficient `F_t + ½ G Gᵀ P_t⁻¹` of the linear deviation dynamics
/// `w = z − μ_t` under a single-Gaussian marginal `N(μ_t, P_t)`.
fn deviation_matrix(spec: &ProcessSpec, mixture: &MixtureSpec, t: f64) -> Result<BlockMat2> {
    let comp = &mixture.marginal(spec, t)?[0];
    let prec = inverse2(comp.cov.to_mat())?;
    Ok(spec.drift_matrix(t) + (spec.ggt(t) * prec).scale(0.5))
}

/// Propagator `Ψ(t_to, t_from)` of the deviation dynamics, built from
/// fourth-order Magnus steps on `n_sub` uniform substeps.
pub fn linear_flow_map(spec: &ProcessSpec, mixture: &MixtureSpec, t_from: f64, t_to: f64, n_sub: usize) -> Result<BlockMat2> {
    if mixture.components.len() != 1 {
        return Err(Error::InvalidMixture("the affine flow needs a single Gaussian".into()));
    }
    let n_sub = n_sub.max(1);
    let h = (t_to - t_from) / n_sub as f64;
    let c = 3f64.sqrt() / 6.0;
    let mut psi = BlockMat2::identity();
    for i in 0..n_sub {
        let t = t_from + i as f64 * h;
        let a1 = deviation_matrix(spec, mixture, t + (0.5 - c) * h)?;
        let a2 = deviation_matrix(spec, mixture, t + (0.5 + c) * h)?;
        let comm = a2 * a1 - a1 * a2;
        let omega = (a1 + a2).scale(0.5 * h) + comm.scale(3f64.sqrt() / 12.0 * h * h);
        psi = mat_exp(omega, 1.0) * psi;
    }
    Ok(psi)
}

/// Exact probability-flow map of a single-Gaussian problem:
/// `z(t_to) = μ_{t_to} + Ψ(t_to, t_from)(z − μ_{t_from})`.
pub fn exact_flow(spec: &ProcessSpec, mixture: &MixtureSpec, z: &State, t_from: f64, t_to: f64, n_sub: usize) -> Result<State> {
    let psi = linear_flow_map(spec, mixture, t_from, t_to, n_sub)?;
    let mu0 = &mixture.marginal(spec, t_from)?[0].mean;
    let mu1 = &mixture.marginal(spec, t_to)?[0].mean;
    Ok(mu1.axpy(1.0, &apply_to_state(psi, &z.axpy(-1.0, mu0))))
}

//! Conjugate integrators: the `A_t`, `Φ_t` coefficient tables, the
//! transformed-space Euler and Adams–Bashforth updates, and the linear
//! stability predicate.

use std::cell::RefCell;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg2::{apply_to_state, inverse2, mat_exp, BlockMat2};
use crate::ode::{integrate, Tolerance};
use crate::score::{ParamKind, ScoreParameterization};
use crate::sde::{ProcessKind, ProcessSpec};
use crate::state::State;

/// Choice of the free matrix `B_t` of the conjugate map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BTChoice {
    /// `B = 0`: exponential integrator (DDIM for VP).
    Zero,
    /// `B = λ I` (λ-DDIM-I).
    LambdaI(f64),
    /// `B = λ 𝟙` (λ-DDIM-II).
    LambdaOnes(f64),
    /// Any constant 2×2 block.
    Custom(BlockMat2),
}

impl BTChoice {
    pub fn lambda(&self) -> f64 {
        match *self {
            BTChoice::Zero | BTChoice::Custom(_) => 0.0,
            BTChoice::LambdaI(l) | BTChoice::LambdaOnes(l) => l,
        }
    }

    /// Block form of `B`. VP has no momentum, so only the position entry is kept.
    pub fn matrix(&self, kind: ProcessKind) -> BlockMat2 {
        let m = match *self {
            BTChoice::Zero => BlockMat2::zeros(),
            BTChoice::LambdaI(l) => BlockMat2::identity().scale(l),
            BTChoice::LambdaOnes(l) => BlockMat2::ones().scale(l),
            BTChoice::Custom(m) => m,
        };
        match kind {
            ProcessKind::Psld => m,
            ProcessKind::Vp => BlockMat2::diag(m.a, 0.0),
        }
    }
}

/// Coefficient masking for position-only conjugate updates inside splitting samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mask {
    /// Full (unmasked) probability-flow coefficients.
    None,
    /// Masked probability-flow coefficients (CSE, CVV).
    Deterministic,
    /// Masked reverse-SDE position coefficients (COBA).
    Stochastic,
}

/// Position-row mask `[[1, 1], [0, 0]]`.
pub const POSITION_MASK: BlockMat2 = BlockMat2::new(1.0, 1.0, 0.0, 0.0);

/// Build options for a coefficient table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableOptions {
    pub tol: Tolerance,
    /// Highest Adams–Bashforth order whose weights are tabulated (0..=2).
    pub ab_order: usize,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions { tol: Tolerance::default(), ab_order: 0 }
    }
}

/// Precomputed `A_t`, `A_t⁻¹`, `Φ_t` on a decreasing schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub times: Vec<f64>,
    pub a: Vec<BlockMat2>,
    pub a_inv: Vec<BlockMat2>,
    pub phi: Vec<BlockMat2>,
    pub bt: BTChoice,
    /// Block form of `B`.
    pub b: BlockMat2,
    pub mask: Mask,
    /// `ab[r - 1][j]` holds the order-`r` weights `W_{j,k}`, `k = 0..=r`, for
    /// the step `t_j → t_{j+1}`; empty for warm-up steps.
    pub ab: Vec<Vec<Vec<BlockMat2>>>,
    /// Per-step linear map `A_{j+1}⁻¹ A_j (I − h B)`.
    step_lin: Vec<BlockMat2>,
    /// Per-step residual map `A_{j+1}⁻¹ (Φ_{j+1} − Φ_j)`.
    step_eps: Vec<BlockMat2>,
}

/// Integrand pieces: `dA/dt = A K(t)` and `dΦ/dt = −A Q(t)`.
#[derive(Debug, Clone, Copy)]
struct Integrand {
    k: BlockMat2,
    q: BlockMat2,
}

fn integrand(param: &ScoreParameterization, b: BlockMat2, mask: Mask, t: f64) -> Result<Integrand> {
    integrand_with(param, b, mask, t, param.c_out(t)?)
}

fn integrand_with(
    param: &ScoreParameterization,
    b: BlockMat2,
    mask: Mask,
    t: f64,
    c_out: BlockMat2,
) -> Result<Integrand> {
    let spec = &param.spec;
    let c_skip = param.c_skip(t)?;
    Ok(match mask {
        Mask::None => {
            let ggt = spec.ggt(t);
            Integrand { k: b - spec.drift_matrix(t) + (ggt * c_skip).scale(0.5), q: (ggt * c_out).scale(0.5) }
        }
        Mask::Deterministic => {
            let g = spec.diffusion_matrix(t);
            let ggt = g.hadamard(POSITION_MASK) * g.transpose().hadamard(POSITION_MASK);
            let f = spec.drift_matrix(t).hadamard(POSITION_MASK);
            Integrand {
                k: b - f + (ggt * c_skip.hadamard(POSITION_MASK)).scale(0.5),
                q: (ggt * c_out.hadamard(POSITION_MASK)).scale(0.5),
            }
        }
        Mask::Stochastic => {
            let beta = spec.beta_at(t);
            let f = BlockMat2::new(-2.0 * spec.gamma_fric, spec.mass_inv, 0.0, 0.0).scale(0.5 * beta);
            let ggt = BlockMat2::diag(spec.gamma_fric * beta, 0.0);
            Integrand { k: b - f + ggt * c_skip.hadamard(POSITION_MASK), q: ggt * c_out.hadamard(POSITION_MASK) }
        }
    })
}

fn mat_from(v: &[f64]) -> BlockMat2 {
    BlockMat2::new(v[0], v[1], v[2], v[3])
}

fn lagrange(nodes: &[f64], k: usize, s: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != k)
        .map(|(_, &tl)| (s - tl) / (nodes[k] - tl))
        .product()
}

/// Lagrange basis polynomial `C_k(s)` over the nodes `t_j, t_{j−1}, …, t_{j−r}`.
pub fn lagrange_basis(times: &[f64], j: usize, r: usize, k: usize, s: f64) -> f64 {
    let nodes: Vec<f64> = (0..=r).map(|l| times[j - l]).collect();
    lagrange(&nodes, k, s)
}

/// Builds the coefficient table for `param` (which carries the process),
/// the choice of `B`, and a strictly decreasing schedule.
///
/// `Φ` is integrated from `Φ_0 = 0` in the variable `u = √t`, which removes
/// the `t^{-1/2}` endpoint singularity of `C_out`. `A_t` uses the closed-form
/// exponential when the integrand is constant in time.
pub fn build_table(
    param: &ScoreParameterization,
    bt: BTChoice,
    times: &[f64],
    mask: Mask,
    opts: TableOptions,
) -> Result<CoefficientTable> {
    let spec = param.spec;
    spec.validate()?;
    if times.len() < 2 {
        return Err(Error::BadRange("schedule needs at least two nodes".into()));
    }
    if times.windows(2).any(|w| !(w[1] < w[0])) || !(times[times.len() - 1] >= 0.0) {
        return Err(Error::BadRange("schedule must be strictly decreasing and non-negative".into()));
    }
    if mask != Mask::None && spec.kind == ProcessKind::Vp {
        return Err(Error::UnsupportedProcess { kind: "masked conjugate".into(), process: spec.kind.to_string() });
    }
    if opts.ab_order > 2 {
        return Err(Error::InvalidSpec(format!("Adams-Bashforth order {} exceeds 2", opts.ab_order)));
    }
    let b = bt.matrix(spec.kind);
    let constant = spec.is_time_homogeneous() && !matches!(param.kind, ParamKind::Preconditioned { .. });
    // K does not involve C_out, so any placeholder works here.
    let k_const = if constant { Some(integrand_with(param, b, mask, 0.0, BlockMat2::zeros())?.k) } else { None };

    let n = times.len();
    let mut a = vec![BlockMat2::identity(); n];
    let mut phi = vec![BlockMat2::zeros(); n];
    let mut ab: Vec<Vec<Vec<BlockMat2>>> = (0..opts.ab_order).map(|_| vec![Vec::new(); n - 1]).collect();

    // Ascending pass over [0, t_{n-1}], [t_{n-1}, t_{n-2}], …, [t_1, t_0].
    let mut a_cur = BlockMat2::identity();
    let mut phi_cur = BlockMat2::zeros();
    let mut t_lo = 0.0;
    for idx in (0..n).rev() {
        let t_hi = times[idx];
        // Weight groups for the step j = idx → idx + 1, which spans [t_{idx+1}, t_idx].
        let groups: Vec<(usize, Vec<f64>)> = if idx + 1 < n {
            (1..=opts.ab_order).filter(|&r| idx >= r).map(|r| (r, (0..=r).map(|l| times[idx - l]).collect())).collect()
        } else {
            Vec::new()
        };
        if t_hi > t_lo {
            let n_w: usize = groups.iter().map(|(r, _)| r + 1).sum();
            let mut y0 = Vec::with_capacity(8 + 4 * n_w);
            if k_const.is_none() {
                y0.extend_from_slice(&a_cur.to_array());
            }
            y0.extend_from_slice(&phi_cur.to_array());
            y0.resize(y0.len() + 4 * n_w, 0.0);
            let failure: RefCell<Option<Error>> = RefCell::new(None);
            let rhs = |u: f64, y: &[f64]| -> Vec<f64> {
                let u_eff = u.max(1e-12);
                let t = u_eff * u_eff;
                let mut out = vec![0.0; y.len()];
                let piece = match integrand(param, b, mask, t) {
                    Ok(p) => p,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        return out;
                    }
                };
                let (a_s, off) = match k_const {
                    Some(k) => (mat_exp(k, t), 0),
                    None => {
                        let a_s = mat_from(&y[0..4]);
                        let da = (a_s * piece.k).scale(2.0 * u_eff).to_array();
                        out[0..4].copy_from_slice(&da);
                        (a_s, 4)
                    }
                };
                let dphi = -(a_s * piece.q).scale(2.0 * u_eff);
                out[off..off + 4].copy_from_slice(&dphi.to_array());
                let mut w = off + 4;
                for (r, nodes) in &groups {
                    for kk in 0..=*r {
                        let c = lagrange(nodes, kk, t);
                        out[w..w + 4].copy_from_slice(&dphi.scale(c).to_array());
                        w += 4;
                    }
                }
                out
            };
            let sol = integrate(rhs, t_lo.sqrt(), &y0, &[t_hi.sqrt()], opts.tol)
                .map_err(|e| Error::QuadratureFailure(e.to_string()))?;
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            let y = &sol[0];
            let mut off = 0;
            if k_const.is_none() {
                a_cur = mat_from(&y[0..4]);
                off = 4;
            }
            phi_cur = mat_from(&y[off..off + 4]);
            let mut w = off + 4;
            for (r, _) in &groups {
                let weights: Vec<BlockMat2> = (0..=*r).map(|kk| -mat_from(&y[w + 4 * kk..w + 4 * kk + 4])).collect();
                w += 4 * (r + 1);
                ab[r - 1][idx] = weights;
            }
        }
        a[idx] = match k_const {
            Some(k) => mat_exp(k, t_hi),
            None => a_cur,
        };
        phi[idx] = phi_cur;
        t_lo = t_hi;
    }

    let mut a_inv = Vec::with_capacity(n);
    for (i, ai) in a.iter().enumerate() {
        let inv = inverse2(*ai).map_err(|_| Error::SingularA { t: times[i] })?;
        let resid = (*ai * inv - BlockMat2::identity()).max_abs();
        if !(resid < 1e-10 * (ai.max_abs() * inv.max_abs()).max(1.0)) {
            return Err(Error::SingularA { t: times[i] });
        }
        a_inv.push(inv);
    }
    let mut step_lin = Vec::with_capacity(n - 1);
    let mut step_eps = Vec::with_capacity(n - 1);
    for j in 0..n - 1 {
        let h = times[j] - times[j + 1];
        step_lin.push(a_inv[j + 1] * a[j] * (BlockMat2::identity() - b.scale(h)));
        step_eps.push(a_inv[j + 1] * (phi[j + 1] - phi[j]));
    }
    Ok(CoefficientTable { times: times.to_vec(), a, a_inv, phi, bt, b, mask, ab, step_lin, step_eps })
}

impl CoefficientTable {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Step size `t_j − t_{j+1}` (positive).
    pub fn step_size(&self, j: usize) -> f64 {
        self.times[j] - self.times[j + 1]
    }

    /// Transformed-space update `ẑ − h A B A⁻¹ ẑ + (Φ_{j+1} − Φ_j) ε`.
    pub fn transformed_step(&self, j: usize, zhat: &State, eps: &State) -> State {
        let h = self.step_size(j);
        let drift = apply_to_state(self.a[j] * self.b * self.a_inv[j], zhat);
        let d_phi = apply_to_state(self.phi[j + 1] - self.phi[j], eps);
        zhat.axpy(-h, &drift).axpy(1.0, &d_phi)
    }

    /// Serializes as CSV with header `t,a11,a12,a21,a22,phi11,phi12,phi21,phi22`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,a11,a12,a21,a22,phi11,phi12,phi21,phi22\n");
        for ((t, a), p) in self.times.iter().zip(&self.a).zip(&self.phi) {
            let [a1, a2, a3, a4] = a.to_array();
            let [p1, p2, p3, p4] = p.to_array();
            let _ = writeln!(out, "{t},{a1},{a2},{a3},{a4},{p1},{p2},{p3},{p4}");
        }
        out
    }

    /// Rebuilds a table from [`CoefficientTable::to_csv`] output. Adams–Bashforth
    /// weights are not part of the dump.
    pub fn from_csv(text: &str, bt: BTChoice, kind: ProcessKind, mask: Mask) -> Result<Self> {
        let mut times = Vec::new();
        let mut a = Vec::new();
        let mut phi = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != 9 {
                return Err(Error::Config(format!("line {}: expected 9 fields, got {}", lineno + 1, vals.len())));
            }
            times.push(vals[0]);
            a.push(mat_from(&vals[1..5]));
            phi.push(mat_from(&vals[5..9]));
        }
        if times.len() < 2 {
            return Err(Error::Config("table needs at least two rows".into()));
        }
        let b = bt.matrix(kind);
        let a_inv: Vec<BlockMat2> = a
            .iter()
            .zip(&times)
            .map(|(m, &t)| inverse2(*m).map_err(|_| Error::SingularA { t }))
            .collect::<Result<_>>()?;
        let n = times.len();
        let step_lin = (0..n - 1)
            .map(|j| a_inv[j + 1] * a[j] * (BlockMat2::identity() - b.scale(times[j] - times[j + 1])))
            .collect();
        let step_eps = (0..n - 1).map(|j| a_inv[j + 1] * (phi[j + 1] - phi[j])).collect();
        Ok(CoefficientTable { times, a, a_inv, phi, bt, b, mask, ab: Vec::new(), step_lin, step_eps })
    }
}

/// One conjugate Euler step `t_j → t_{j+1}` given `ε(z_j, t_j)`:
/// `z_{j+1} = A_{j+1}⁻¹ [A_j (I − hB) z_j + (Φ_{j+1} − Φ_j) ε]`.
pub fn conjugate_euler_step(table: &CoefficientTable, j: usize, z: &State, eps: &State) -> State {
    apply_to_state(table.step_lin[j], z).axpy(1.0, &apply_to_state(table.step_eps[j], eps))
}

/// Adams–Bashforth conjugate step of order `order`, with `history[k] = ε_{j−k}`
/// (most recent first). Order 0 is [`conjugate_euler_step`].
pub fn conjugate_ab_step(
    table: &CoefficientTable,
    j: usize,
    z: &State,
    history: &[State],
    order: usize,
) -> Result<State> {
    if history.len() < order + 1 {
        return Err(Error::InsufficientHistory { order, needed: order + 1, have: history.len() });
    }
    if order == 0 {
        return Ok(conjugate_euler_step(table, j, z, &history[0]));
    }
    let weights = table
        .ab
        .get(order - 1)
        .and_then(|w| w.get(j))
        .filter(|w| !w.is_empty())
        .ok_or(Error::InsufficientHistory { order, needed: order + 1, have: j + 1 })?;
    let mut acc = State::zeros(z.dim());
    for (w, e) in weights.iter().zip(history) {
        acc = acc.axpy(1.0, &apply_to_state(*w, e));
    }
    Ok(apply_to_state(table.step_lin[j], z).axpy(1.0, &apply_to_state(table.a_inv[j + 1], &acc)))
}

/// Eigenvalues of the conditioned linearization and the per-eigenvalue
/// amplification factors `|1 + h λ̃|`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub eigenvalues: Vec<Complex64>,
    pub margins: Vec<f64>,
    pub stable: bool,
}

/// `|1 + h λ̃| ≤ 1`.
pub fn stability_predicate(lambda_tilde: Complex64, h: f64) -> bool {
    (Complex64::new(1.0, 0.0) + lambda_tilde * h).norm() <= 1.0
}

/// Report for eigenvalues supplied directly (synthetic spectra).
pub fn stability_from_eigenvalues(eigenvalues: &[Complex64], h: f64) -> StabilityReport {
    let margins: Vec<f64> = eigenvalues.iter().map(|l| (Complex64::new(1.0, 0.0) + l * h).norm()).collect();
    let stable = margins.iter().all(|&m| m <= 1.0);
    StabilityReport { eigenvalues: eigenvalues.to_vec(), margins, stable }
}

/// Stability of the conjugate Euler update for a score with Jacobian
/// `∂s/∂z = score_jacobian` at time `t`: eigenvalues of
/// `½ G Gᵀ C_out ∂ε/∂z − B`, with `∂ε/∂z = C_out⁻¹ (∂s/∂z − C_skip)`.
/// VP uses the position entry only.
pub fn stability_report(
    param: &ScoreParameterization,
    score_jacobian: BlockMat2,
    t: f64,
    bt: BTChoice,
    h: f64,
) -> Result<StabilityReport> {
    let spec: &ProcessSpec = &param.spec;
    let c_out = param.c_out(t)?;
    let c_skip = param.c_skip(t)?;
    let c_out_inv = inverse2(c_out).map_err(|_| Error::SingularCOut { t })?;
    let jac_eps = c_out_inv * (score_jacobian - c_skip);
    let lin = (spec.ggt(t) * c_out * jac_eps).scale(0.5) - bt.matrix(spec.kind);
    let eigs: Vec<Complex64> = match spec.kind {
        ProcessKind::Psld => lin.eigenvalues().to_vec(),
        ProcessKind::Vp => vec![Complex64::new(lin.a, 0.0)],
    };
    Ok(stability_from_eigenvalues(&eigs, h))
}

//! Linear forward processes (PSLD and VP), their perturbation kernels and
//! the associated probability-flow and reverse-time vector fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg2::{apply_to_state, cholesky2, mat_exp, BlockMat2, Sym2};
pub use crate::state::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    /// Phase-space Langevin diffusion over `(x, m)`.
    Psld,
    /// Variance-preserving diffusion over `x` only.
    Vp,
}

impl std::fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProcessKind::Psld => "psld",
            ProcessKind::Vp => "vp",
        })
    }
}

/// Noise-rate schedule `β_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BetaSchedule {
    Constant(f64),
    /// `β_t = min + (max − min) · t / T`.
    Linear { min: f64, max: f64 },
}

/// Drift/diffusion definition of a linear forward SDE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    pub beta: BetaSchedule,
    /// Position friction Γ.
    pub gamma_fric: f64,
    /// Momentum friction ν.
    pub nu: f64,
    /// Inverse mass M⁻¹.
    pub mass_inv: f64,
    /// Initial momentum variance scale γ (momentum starts at `N(0, γM)`).
    pub gamma0: f64,
    /// Trajectory length T.
    pub t_end: f64,
}

impl Default for ProcessSpec {
    fn default() -> Self {
        ProcessSpec::psld_default()
    }
}

impl ProcessSpec {
    /// PSLD with β = 8, Γ = 0.01, ν = 4.01, M⁻¹ = 4, γ = 0.04, T = 1.
    pub fn psld_default() -> Self {
        ProcessSpec {
            kind: ProcessKind::Psld,
            beta: BetaSchedule::Constant(8.0),
            gamma_fric: 0.01,
            nu: 4.01,
            mass_inv: 4.0,
            gamma0: 0.04,
            t_end: 1.0,
        }
    }

    pub fn vp_constant(beta: f64) -> Self {
        ProcessSpec { kind: ProcessKind::Vp, beta: BetaSchedule::Constant(beta), ..ProcessSpec::psld_default() }
    }

    pub fn vp_linear(min: f64, max: f64) -> Self {
        ProcessSpec { kind: ProcessKind::Vp, beta: BetaSchedule::Linear { min, max }, ..ProcessSpec::psld_default() }
    }

    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.to_string()));
        match self.beta {
            BetaSchedule::Constant(b) if !(b > 0.0 && b.is_finite()) => return bad("beta must be positive"),
            BetaSchedule::Linear { min, max } if !(min > 0.0 && max > 0.0 && max.is_finite()) => {
                return bad("linear beta endpoints must be positive")
            }
            _ => {}
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("T must be positive");
        }
        if self.kind == ProcessKind::Psld {
            if !matches!(self.beta, BetaSchedule::Constant(_)) {
                return bad("PSLD requires a constant beta");
            }
            if !(self.gamma_fric >= 0.0 && self.gamma_fric.is_finite()) {
                return bad("Gamma must be non-negative");
            }
            if !(self.nu >= 0.0 && self.nu.is_finite()) {
                return bad("nu must be non-negative");
            }
            if !(self.mass_inv > 0.0 && self.mass_inv.is_finite()) {
                return bad("M^-1 must be positive");
            }
            if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
                return bad("gamma must be positive");
            }
        }
        Ok(())
    }

    pub fn is_psld(&self) -> bool {
        self.kind == ProcessKind::Psld
    }

    /// Mass M.
    pub fn mass(&self) -> f64 {
        1.0 / self.mass_inv
    }

    pub fn beta_at(&self, t: f64) -> f64 {
        match self.beta {
            BetaSchedule::Constant(b) => b,
            BetaSchedule::Linear { min, max } => min + (max - min) * t / self.t_end,
        }
    }

    /// `∫₀ᵗ β_s ds`.
    pub fn beta_integral(&self, t: f64) -> f64 {
        match self.beta {
            BetaSchedule::Constant(b) => b * t,
            BetaSchedule::Linear { min, max } => min * t + 0.5 * (max - min) * t * t / self.t_end,
        }
    }

    /// Whether F and G are constant in time.
    pub fn is_time_homogeneous(&self) -> bool {
        matches!(self.beta, BetaSchedule::Constant(_))
    }

    /// Drift coefficient F_t.
    pub fn drift_matrix(&self, t: f64) -> BlockMat2 {
        let b = self.beta_at(t);
        match self.kind {
            ProcessKind::Psld => {
                BlockMat2::new(-self.gamma_fric, self.mass_inv, -1.0, -self.nu).scale(0.5 * b)
            }
            ProcessKind::Vp => BlockMat2::diag(-0.5 * b, 0.0),
        }
    }

    /// Diffusion coefficient G_t.
    pub fn diffusion_matrix(&self, t: f64) -> BlockMat2 {
        let b = self.beta_at(t);
        match self.kind {
            ProcessKind::Psld => {
                BlockMat2::diag((self.gamma_fric * b).sqrt(), (self.mass() * self.nu * b).sqrt())
            }
            ProcessKind::Vp => BlockMat2::diag(b.sqrt(), 0.0),
        }
    }

    /// `G_t G_tᵀ`, formed directly from the rates.
    pub fn ggt(&self, t: f64) -> BlockMat2 {
        let b = self.beta_at(t);
        match self.kind {
            ProcessKind::Psld => BlockMat2::diag(self.gamma_fric * b, self.mass() * self.nu * b),
            ProcessKind::Vp => BlockMat2::diag(b, 0.0),
        }
    }

    /// Mean map `E_t = exp(∫₀ᵗ F_s ds)`.
    pub fn mean_map(&self, t: f64) -> BlockMat2 {
        match self.kind {
            ProcessKind::Psld => mat_exp(self.drift_matrix(0.0), t),
            ProcessKind::Vp => BlockMat2::diag((-0.5 * self.beta_integral(t)).exp(), 1.0),
        }
    }

    /// Stationary covariance `diag(1, M)` (VP: the frozen momentum block is 0).
    pub fn stationary_cov(&self) -> Sym2 {
        match self.kind {
            ProcessKind::Psld => Sym2::diag(1.0, self.mass()),
            ProcessKind::Vp => Sym2::diag(1.0, 0.0),
        }
    }

    /// Initial covariance of the noise-only kernel used by the score
    /// parameterization: zero for PSLD; VP carries unit variance on its frozen
    /// momentum channel so that joint covariances stay invertible.
    pub fn zero_init_cov(&self) -> Sym2 {
        match self.kind {
            ProcessKind::Psld => Sym2::zeros(),
            ProcessKind::Vp => Sym2::diag(0.0, 1.0),
        }
    }

    /// Momentum variance of the data distribution: `γM` for PSLD, 0 for VP.
    pub fn data_momentum_var(&self) -> f64 {
        match self.kind {
            ProcessKind::Psld => self.gamma0 * self.mass(),
            ProcessKind::Vp => 0.0,
        }
    }

    /// Covariance at time `t` of the kernel started from `initial_cov`.
    ///
    /// Uses `Σ_t = Σ_∞ + E_t (Σ₀ − Σ_∞) E_tᵀ`, exact because `Σ_∞` solves the
    /// algebraic Lyapunov equation for every admissible parameter set.
    pub fn kernel_cov(&self, t: f64, initial_cov: Sym2) -> Sym2 {
        if self.kind == ProcessKind::Vp {
            // Scalar form with expm1 keeps full relative accuracy as t → 0.
            let b = self.beta_integral(t);
            return Sym2::new(
                -(-b).exp_m1() + initial_cov.xx * (-b).exp(),
                initial_cov.xm * (-0.5 * b).exp(),
                initial_cov.mm,
            );
        }
        let sp = self.stationary_cov();
        sp + (initial_cov - sp).congruence(self.mean_map(t))
    }

    /// Same covariance by fixed-step RK4 on the Lyapunov ODE (step ≤ `max_step`).
    pub fn kernel_cov_rk4(&self, t: f64, initial_cov: Sym2, max_step: f64) -> Sym2 {
        if t == 0.0 {
            return initial_cov;
        }
        let n = (t / max_step).ceil().max(1.0) as usize;
        let h = t / n as f64;
        let rhs = |s: f64, v: [f64; 3]| -> [f64; 3] {
            let f = self.drift_matrix(s);
            let q = self.ggt(s);
            let sig = Sym2::new(v[0], v[1], v[2]).to_mat();
            let d = f * sig + sig * f.transpose() + q;
            [d.a, 0.5 * (d.b + d.c), d.dd]
        };
        let mut v = [initial_cov.xx, initial_cov.xm, initial_cov.mm];
        let add = |v: [f64; 3], k: [f64; 3], s: f64| [v[0] + s * k[0], v[1] + s * k[1], v[2] + s * k[2]];
        for i in 0..n {
            let s = i as f64 * h;
            let k1 = rhs(s, v);
            let k2 = rhs(s + 0.5 * h, add(v, k1, 0.5 * h));
            let k3 = rhs(s + 0.5 * h, add(v, k2, 0.5 * h));
            let k4 = rhs(s + h, add(v, k3, h));
            for j in 0..3 {
                v[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        Sym2::new(v[0], v[1], v[2])
    }

    /// Lyapunov residual `F Σ + Σ Fᵀ + G Gᵀ` at time `t`.
    pub fn lyapunov_residual(&self, t: f64, cov: Sym2) -> BlockMat2 {
        let f = self.drift_matrix(t);
        let s = cov.to_mat();
        f * s + s * f.transpose() + self.ggt(t)
    }

    /// Perturbation kernel statistics at time `t`.
    pub fn kernel_at(&self, t: f64, initial_cov: Sym2) -> Result<PerturbationKernel> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::QuadratureFailure(format!("kernel requested at invalid time {t}")));
        }
        let mean_map = self.mean_map(t);
        let cov = self.kernel_cov(t, initial_cov);
        let chol = match cholesky2(cov) {
            Ok(l) => l,
            Err(_) if t == 0.0 => BlockMat2::zeros(),
            Err(e) => return Err(Error::QuadratureFailure(format!("covariance at t = {t} is not SPD: {e}"))),
        };
        Ok(PerturbationKernel { t, mean_map, cov, chol })
    }

    /// Probability-flow field `F z − ½ G Gᵀ s`.
    pub fn prob_flow_field(&self, score: &State, z: &State, t: f64) -> State {
        let fz = apply_to_state(self.drift_matrix(t), z);
        let gs = apply_to_state(self.ggt(t), score);
        fz.axpy(-0.5, &gs)
    }

    /// Reverse-SDE drift `F z − G Gᵀ s` (in forward-time orientation).
    pub fn reverse_sde_drift(&self, score: &State, z: &State, t: f64) -> State {
        let fz = apply_to_state(self.drift_matrix(t), z);
        let gs = apply_to_state(self.ggt(t), score);
        fz.axpy(-1.0, &gs)
    }
}

/// Gaussian transition statistics `p(z_t | z_0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationKernel {
    pub t: f64,
    /// `E_t = exp(∫F)`.
    pub mean_map: BlockMat2,
    /// `Σ_t`.
    pub cov: Sym2,
    /// Lower Cholesky factor of `Σ_t + 1e-9 I` (zero at `t = 0` if `Σ_0` is singular).
    pub chol: BlockMat2,
}

//! Analytic score oracles and the `(C_skip, C_out, C_in, C_noise)`
//! parameterization that maps between scores and network-form residuals.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg2::{apply_to_state, cholesky2, inverse2, BlockMat2, Sym2};
use crate::sde::{ProcessKind, ProcessSpec};
use crate::state::State;

/// One Gaussian component with covariance `cov ⊗ I_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: State,
    pub cov: Sym2,
}

/// Gaussian-mixture data distribution over joint states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<Component>,
}

/// Per-component Gaussian statistics of the marginal `p_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalComponent {
    pub weight: f64,
    pub mean: State,
    pub cov: Sym2,
}

impl MixtureSpec {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let m = MixtureSpec { components };
        m.validate()?;
        Ok(m)
    }

    /// Position-space mixture; momenta start at the process's data momentum
    /// variance (`γM` for PSLD, frozen at zero for VP).
    pub fn from_position_mixture(
        spec: &ProcessSpec,
        weights: &[f64],
        means: &[Vec<f64>],
        variances: &[f64],
    ) -> Result<Self> {
        if weights.len() != means.len() || weights.len() != variances.len() {
            return Err(Error::InvalidMixture("weights, means and variances differ in length".into()));
        }
        let mv = spec.data_momentum_var();
        let components = weights
            .iter()
            .zip(means)
            .zip(variances)
            .map(|((&w, mu), &v)| Component {
                weight: w,
                mean: State { x: mu.clone(), m: vec![0.0; mu.len()] },
                cov: Sym2::diag(v, mv),
            })
            .collect();
        MixtureSpec::new(components)
    }

    /// Single Gaussian component.
    pub fn single(mean: State, cov: Sym2) -> Result<Self> {
        MixtureSpec::new(vec![Component { weight: 1.0, mean, cov }])
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.dim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidMixture("no components".into()));
        }
        let d = self.dim();
        let mut total = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidMixture(format!("component {k} has non-positive weight")));
            }
            if c.mean.x.len() != d || c.mean.m.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: c.mean.x.len().min(c.mean.m.len()) });
            }
            if !c.mean.is_finite() {
                return Err(Error::InvalidMixture(format!("component {k} has a non-finite mean")));
            }
            let s = c.cov;
            if !(s.xx > 0.0 && s.mm >= 0.0 && s.det() >= 0.0 && s.xm.is_finite() && s.mm.is_finite()) {
                return Err(Error::InvalidMixture(format!("component {k} covariance is not positive semi-definite")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMixture(format!("weights sum to {total}")));
        }
        Ok(())
    }

    /// Component statistics of `p_t`: means `E_t μ_k` and covariances
    /// `E_t S_k E_tᵀ + Σ_t` with `Σ_t` the noise-only kernel covariance.
    pub fn marginal(&self, spec: &ProcessSpec, t: f64) -> Result<Vec<MarginalComponent>> {
        let e = spec.mean_map(t);
        let noise = spec.kernel_cov(t, spec.zero_init_cov());
        self.components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let cov = c.cov.congruence(e) + noise;
                if !cov.is_spd() {
                    return Err(Error::DegenerateCovariance { component: k, t });
                }
                Ok(MarginalComponent { weight: c.weight, mean: apply_to_state(e, &c.mean), cov })
            })
            .collect()
    }

    /// Draws one sample of `p_t`. VP momenta are identically zero.
    pub fn sample<R: Rng + ?Sized>(&self, spec: &ProcessSpec, t: f64, rng: &mut R) -> Result<State> {
        let comps = self.marginal(spec, t)?;
        Ok(sample_from(&comps, spec.kind, rng))
    }

    /// Draws `n` samples of `p_t` from one seeded stream.
    pub fn sample_many<R: Rng + ?Sized>(&self, spec: &ProcessSpec, t: f64, n: usize, rng: &mut R) -> Result<Vec<State>> {
        let comps = self.marginal(spec, t)?;
        Ok((0..n).map(|_| sample_from(&comps, spec.kind, rng)).collect())
    }

    /// Position mean and covariance (`d × d`, row-major) of the data mixture.
    pub fn position_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for c in &self.components {
            for i in 0..d {
                mean[i] += c.weight * c.mean.x[i];
            }
        }
        let mut cov = vec![0.0; d * d];
        for c in &self.components {
            for i in 0..d {
                for j in 0..d {
                    let within = if i == j { c.cov.xx } else { 0.0 };
                    cov[i * d + j] += c.weight * (within + (c.mean.x[i] - mean[i]) * (c.mean.x[j] - mean[j]));
                }
            }
        }
        (mean, cov)
    }
}

fn sample_from<R: Rng + ?Sized>(comps: &[MarginalComponent], kind: ProcessKind, rng: &mut R) -> State {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = comps.len() - 1;
    for (k, c) in comps.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            pick = k;
            break;
        }
    }
    let c = &comps[pick];
    let d = c.mean.dim();
    let mut out = State::zeros(d);
    match kind {
        ProcessKind::Vp => {
            let sd = c.cov.xx.sqrt();
            for i in 0..d {
                let n: f64 = rng.sample(StandardNormal);
                out.x[i] = c.mean.x[i] + sd * n;
            }
        }
        ProcessKind::Psld => {
            let l = cholesky2(c.cov).unwrap_or(BlockMat2::zeros());
            for i in 0..d {
                let n1: f64 = rng.sample(StandardNormal);
                let n2: f64 = rng.sample(StandardNormal);
                out.x[i] = c.mean.x[i] + l.a * n1;
                out.m[i] = c.mean.m[i] + l.c * n1 + l.dd * n2;
            }
        }
    }
    out
}

/// Source of `∇ log p_t(z)`.
pub trait ScoreModel: Send + Sync {
    fn score(&self, z: &State, t: f64) -> Result<State>;

    /// `∂s/∂z` as a 2×2 block when the score is affine in `z`.
    fn jacobian(&self, _t: f64) -> Option<BlockMat2> {
        None
    }
}

/// Exact marginal score of a Gaussian mixture pushed through a linear SDE.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureScore {
    pub mixture: MixtureSpec,
    pub spec: ProcessSpec,
}

impl GaussianMixtureScore {
    pub fn new(mixture: MixtureSpec, spec: ProcessSpec) -> Result<Self> {
        mixture.validate()?;
        spec.validate()?;
        Ok(GaussianMixtureScore { mixture, spec })
    }

    /// Component log-densities (up to the shared `2π` constant) and scores.
    fn components(&self, z: &State, t: f64) -> Result<Vec<(f64, State)>> {
        let d = z.dim() as f64;
        let comps = self.mixture.marginal(&self.spec, t)?;
        comps
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let prec = inverse2(c.cov.to_mat()).map_err(|_| Error::DegenerateCovariance { component: k, t })?;
                let diff = z.axpy(-1.0, &c.mean);
                let pd = apply_to_state(prec, &diff);
                let quad: f64 = diff.x.iter().zip(&pd.x).chain(diff.m.iter().zip(&pd.m)).map(|(a, b)| a * b).sum();
                let logp = c.weight.ln() - 0.5 * quad - 0.5 * d * c.cov.det().ln();
                Ok((logp, pd.scale(-1.0)))
            })
            .collect()
    }

    /// Posterior component responsibilities at `(z, t)`.
    pub fn responsibilities(&self, z: &State, t: f64) -> Result<Vec<f64>> {
        let comps = self.components(z, t)?;
        let max = comps.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = comps.iter().map(|c| (c.0 - max).exp()).collect();
        let sum: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / sum).collect())
    }

    /// `log p_t(z)` including the normalization constant.
    pub fn log_density(&self, z: &State, t: f64) -> Result<f64> {
        let comps = self.components(z, t)?;
        let max = comps.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = comps.iter().map(|c| (c.0 - max).exp()).sum();
        Ok(max + sum.ln() - z.dim() as f64 * (2.0 * std::f64::consts::PI).ln())
    }
}

impl ScoreModel for GaussianMixtureScore {
    fn score(&self, z: &State, t: f64) -> Result<State> {
        let comps = self.components(z, t)?;
        let max = comps.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = comps.iter().map(|c| (c.0 - max).exp()).collect();
        let sum: f64 = w.iter().sum();
        let mut out = State::zeros(z.dim());
        for (wk, (_, s)) in w.iter().zip(&comps) {
            out = out.axpy(wk / sum, s);
        }
        Ok(out)
    }

    fn jacobian(&self, t: f64) -> Option<BlockMat2> {
        if self.mixture.components.len() != 1 {
            return None;
        }
        let c = self.mixture.marginal(&self.spec, t).ok()?;
        inverse2(c[0].cov.to_mat()).ok().map(|p| -p)
    }
}

/// Time-independent Gaussian score `−K (z − μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticGaussianScore {
    pub mean: State,
    pub precision: Sym2,
}

impl ScoreModel for StaticGaussianScore {
    fn score(&self, z: &State, _t: f64) -> Result<State> {
        Ok(apply_to_state(-self.precision.to_mat(), &z.axpy(-1.0, &self.mean)))
    }

    fn jacobian(&self, _t: f64) -> Option<BlockMat2> {
        Some(-self.precision.to_mat())
    }
}

/// Parameterization family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ParamKind {
    /// `C_skip = 0`, `C_out = −L_t^{-ᵀ}`.
    Default,
    /// `C_skip = diag(Σ̄_t)` from the kernel started at `diag(σ₀², Mγ)`.
    Preconditioned { sigma0_sq: f64 },
    /// `C_skip = 0`, `C_out = −I`.
    Unit,
}

impl ParamKind {
    pub const DEFAULT_SIGMA0_SQ: f64 = 0.25;

    pub fn preconditioned() -> Self {
        ParamKind::Preconditioned { sigma0_sq: Self::DEFAULT_SIGMA0_SQ }
    }
}

/// `s = C_skip z + C_out ε(C_in z, C_noise)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParameterization {
    pub kind: ParamKind,
    pub spec: ProcessSpec,
}

impl ScoreParameterization {
    pub fn new(kind: ParamKind, spec: ProcessSpec) -> Result<Self> {
        if let ParamKind::Preconditioned { sigma0_sq } = kind {
            if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
                return Err(Error::InvalidSpec("sigma0^2 must be positive".into()));
            }
        }
        spec.validate()?;
        Ok(ScoreParameterization { kind, spec })
    }

    pub fn default_for(spec: ProcessSpec) -> Self {
        ScoreParameterization { kind: ParamKind::Default, spec }
    }

    /// Initial covariance `diag(σ₀², Mγ)` of the preconditioning kernel.
    pub fn precond_initial_cov(&self, sigma0_sq: f64) -> Sym2 {
        Sym2::diag(sigma0_sq, self.spec.data_momentum_var())
    }

    pub fn c_skip(&self, t: f64) -> Result<BlockMat2> {
        match self.kind {
            ParamKind::Default | ParamKind::Unit => Ok(BlockMat2::zeros()),
            ParamKind::Preconditioned { sigma0_sq } => {
                let s = self.spec.kernel_cov(t, self.precond_initial_cov(sigma0_sq));
                Ok(BlockMat2::diag(s.xx, s.mm))
            }
        }
    }

    /// `−L_t^{-ᵀ}` of the noise-only kernel. VP uses the exact `σ_t`
    /// without jitter and `−1` on its frozen momentum channel.
    pub fn c_out(&self, t: f64) -> Result<BlockMat2> {
        if self.kind == ParamKind::Unit {
            return Ok(-BlockMat2::identity());
        }
        let cov = self.spec.kernel_cov(t, self.spec.zero_init_cov());
        match self.spec.kind {
            ProcessKind::Vp => {
                let sigma = cov.xx.sqrt();
                if !(sigma > 0.0) {
                    return Err(Error::SingularCOut { t });
                }
                Ok(BlockMat2::diag(-1.0 / sigma, -1.0))
            }
            ProcessKind::Psld => {
                let l = cholesky2(cov).map_err(|_| Error::SingularCOut { t })?;
                let linv = inverse2(l).map_err(|_| Error::SingularCOut { t })?;
                Ok(-linv.transpose())
            }
        }
    }

    pub fn c_in(&self, _t: f64) -> BlockMat2 {
        BlockMat2::identity()
    }

    pub fn c_noise(&self, t: f64) -> f64 {
        t
    }

    /// `ε = C_out^{-1} (s − C_skip z)`.
    pub fn eps_from_score(&self, z: &State, t: f64, s: &State) -> Result<State> {
        let inv = inverse2(self.c_out(t)?).map_err(|_| Error::SingularCOut { t })?;
        let resid = s.axpy(-1.0, &apply_to_state(self.c_skip(t)?, z));
        Ok(apply_to_state(inv, &resid))
    }

    /// `s = C_skip z + C_out ε`.
    pub fn score_from_eps(&self, z: &State, t: f64, eps: &State) -> Result<State> {
        let skip = apply_to_state(self.c_skip(t)?, z);
        Ok(skip.axpy(1.0, &apply_to_state(self.c_out(t)?, eps)))
    }
}

/// Preconditioned parameterization with initial variance `σ₀²`.
pub fn preconditioned_param(spec: ProcessSpec, sigma0_sq: f64) -> Result<ScoreParameterization> {
    ScoreParameterization::new(ParamKind::Preconditioned { sigma0_sq }, spec)
}

/// Score and network-form residual at one `(z, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEval {
    pub s: State,
    pub eps: State,
}

/// Counts score evaluations and converts them to network form.
pub struct ScoreProvider {
    model: Arc<dyn ScoreModel>,
    pub param: ScoreParameterization,
    nfe: AtomicU64,
}

impl ScoreProvider {
    pub fn new(model: Arc<dyn ScoreModel>, param: ScoreParameterization) -> Self {
        ScoreProvider { model, param, nfe: AtomicU64::new(0) }
    }

    /// One function evaluation: returns both `s` and `ε` at `(z, t)`.
    pub fn eval(&self, z: &State, t: f64) -> Result<ScoreEval> {
        self.nfe.fetch_add(1, Ordering::Relaxed);
        let zin = apply_to_state(self.param.c_in(t), z);
        let s = self.model.score(&zin, t)?;
        let eps = self.param.eps_from_score(z, t, &s)?;
        Ok(ScoreEval { s, eps })
    }

    pub fn model(&self) -> &dyn ScoreModel {
        self.model.as_ref()
    }

    pub fn nfe(&self) -> u64 {
        self.nfe.load(Ordering::Relaxed)
    }

    pub fn reset_nfe(&self) {
        self.nfe.store(0, Ordering::Relaxed);
    }
}

impl std::fmt::Debug for ScoreProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScoreProvider").field("param", &self.param).field("nfe", &self.nfe()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn psld() -> ProcessSpec {
        ProcessSpec::psld_default()
    }

    #[test]
    fn symmetric_mixture_has_zero_score_at_origin() {
        let spec = psld();
        let mix = MixtureSpec::from_position_mixture(&spec, &[0.5, 0.5], &[vec![1.5], vec![-1.5]], &[0.2, 0.2]).unwrap();
        let sc = GaussianMixtureScore::new(mix, spec).unwrap();
        let s = sc.score(&State::zeros(1), 0.3).unwrap();
        assert!(s.max_abs() < 1e-14);
    }

    #[test]
    fn unit_param_negates() {
        let p = ScoreParameterization::new(ParamKind::Unit, psld()).unwrap();
        let z = State { x: vec![1.0], m: vec![2.0] };
        let s = State { x: vec![0.3], m: vec![-0.7] };
        let e = p.eps_from_score(&z, 0.5, &s).unwrap();
        assert_eq!(e, s.scale(-1.0));
    }

    #[test]
    fn bad_weights_rejected() {
        let spec = psld();
        assert!(MixtureSpec::from_position_mixture(&spec, &[0.5, 0.6], &[vec![0.0], vec![1.0]], &[1.0, 1.0]).is_err());
        assert!(MixtureSpec::from_position_mixture(&spec, &[1.0], &[vec![0.0]], &[-1.0]).is_err());
    }

    #[test]
    fn counter_increments() {
        let spec = psld();
        let mix = MixtureSpec::from_position_mixture(&spec, &[1.0], &[vec![0.0]], &[1.0]).unwrap();
        let model = Arc::new(GaussianMixtureScore::new(mix, spec).unwrap());
        let p = ScoreProvider::new(model, ScoreParameterization::default_for(spec));
        for _ in 0..3 {
            p.eval(&State::zeros(1), 0.5).unwrap();
        }
        assert_eq!(p.nfe(), 3);
    }
}

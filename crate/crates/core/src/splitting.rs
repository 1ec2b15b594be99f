//! Sampler kinds and their update rules: Euler baselines, conjugate
//! integrators, deterministic and stochastic splitting schemes, and the
//! conjugate-splitting hybrids.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conjugate::{
    build_table, conjugate_ab_step, conjugate_euler_step, BTChoice, CoefficientTable, Mask, TableOptions,
};
use crate::error::{Error, Result};
use crate::linalg2::apply_to_state;
use crate::score::{ScoreEval, ScoreParameterization, ScoreProvider};
use crate::sde::{ProcessKind, ProcessSpec};
use crate::state::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "euler")]
    Euler,
    #[serde(rename = "em")]
    EM,
    #[serde(rename = "conj-euler")]
    ConjEuler,
    #[serde(rename = "conj-ab")]
    ConjAB,
    #[serde(rename = "nse")]
    NSE,
    #[serde(rename = "nvv")]
    NVV,
    #[serde(rename = "rse")]
    RSE,
    #[serde(rename = "rvv")]
    RVV,
    #[serde(rename = "naive-oba")]
    NaiveOBA,
    #[serde(rename = "roba")]
    ROBA,
    #[serde(rename = "rbao")]
    RBAO,
    #[serde(rename = "robab")]
    ROBAB,
    #[serde(rename = "cse")]
    CSE,
    #[serde(rename = "cvv")]
    CVV,
    #[serde(rename = "coba")]
    COBA,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 15] = [
        SamplerKind::Euler,
        SamplerKind::EM,
        SamplerKind::ConjEuler,
        SamplerKind::ConjAB,
        SamplerKind::NSE,
        SamplerKind::NVV,
        SamplerKind::RSE,
        SamplerKind::RVV,
        SamplerKind::NaiveOBA,
        SamplerKind::ROBA,
        SamplerKind::RBAO,
        SamplerKind::ROBAB,
        SamplerKind::CSE,
        SamplerKind::CVV,
        SamplerKind::COBA,
    ];

    /// Score evaluations per update step.
    pub fn npu(self) -> u64 {
        use SamplerKind::*;
        match self {
            Euler | EM | ConjEuler | ConjAB | RSE | ROBA | RBAO | CSE | COBA => 1,
            NSE | RVV | NaiveOBA | ROBAB | CVV => 2,
            NVV => 3,
        }
    }

    pub fn is_stochastic(self) -> bool {
        use SamplerKind::*;
        matches!(self, EM | NaiveOBA | ROBA | RBAO | ROBAB | COBA)
    }

    /// Coefficient masking used by the kind's conjugate map, if it has one.
    pub fn mask(self) -> Option<Mask> {
        use SamplerKind::*;
        match self {
            ConjEuler | ConjAB => Some(Mask::None),
            CSE | CVV => Some(Mask::Deterministic),
            COBA => Some(Mask::Stochastic),
            _ => None,
        }
    }

    pub fn needs_table(self) -> bool {
        self.mask().is_some()
    }

    /// Whether the kind is defined for the given process.
    pub fn supports(self, kind: ProcessKind) -> bool {
        use SamplerKind::*;
        kind == ProcessKind::Psld || matches!(self, Euler | EM | ConjEuler | ConjAB)
    }

    pub fn name(self) -> &'static str {
        use SamplerKind::*;
        match self {
            Euler => "euler",
            EM => "em",
            ConjEuler => "conj-euler",
            ConjAB => "conj-ab",
            NSE => "nse",
            NVV => "nvv",
            RSE => "rse",
            RVV => "rvv",
            NaiveOBA => "naive-oba",
            ROBA => "roba",
            RBAO => "rbao",
            ROBAB => "robab",
            CSE => "cse",
            CVV => "cvv",
            COBA => "coba",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown sampler '{s}'")))
    }
}

/// Position-space noise scaling of the OU substep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChurnConfig {
    pub lambda_s: f64,
    pub enabled: bool,
}

impl ChurnConfig {
    pub fn off() -> Self {
        ChurnConfig::default()
    }

    pub fn with_lambda(lambda_s: f64) -> Self {
        ChurnConfig { lambda_s, enabled: true }
    }
}

/// Counter-based Gaussian noise keyed by `(seed, chain, step, substep)`.
/// Substep 0 is position noise and substep 1 momentum noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    pub seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl NoiseSource {
    pub const POSITION: u64 = 0;
    pub const MOMENTUM: u64 = 1;

    pub fn new(seed: u64) -> Self {
        NoiseSource { seed }
    }

    /// Stream key for one `(chain, step, substep)` triple.
    pub fn key(&self, chain: u64, step: u64, substep: u64) -> u64 {
        let mut h = splitmix64(self.seed);
        for v in [chain, step, substep] {
            h = splitmix64(h ^ v);
        }
        h
    }

    pub fn normals(&self, chain: u64, step: u64, substep: u64, d: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key(chain, step, substep));
        (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

/// Noise draws for one OU substep.
#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise {
    pub x: Vec<f64>,
    pub m: Vec<f64>,
}

/// Position noise standard deviation of the OU substep over `[t1, t]`.
pub fn ou_position_std(spec: &ProcessSpec, t: f64, t1: f64, churn: ChurnConfig) -> f64 {
    let bg = spec.beta_at(t) * spec.gamma_fric;
    if churn.enabled {
        let t_mid = 0.5 * (t + t1);
        (-(-t_mid * churn.lambda_s * bg).exp_m1()).sqrt()
    } else {
        (-(-(t - t1) * bg).exp_m1()).sqrt()
    }
}

/// Exact OU substep: `x ← e^{−hβΓ/2} x + σ_x ξ_x`,
/// `m ← e^{−hβν/2} m + √M √(1 − e^{−hβν}) ξ_m`.
pub fn ou_substep(spec: &ProcessSpec, z: &State, t: f64, t1: f64, churn: ChurnConfig, noise: &OuNoise) -> State {
    let h = t - t1;
    let beta = spec.beta_at(t);
    let cx = (-0.5 * h * beta * spec.gamma_fric).exp();
    let sx = ou_position_std(spec, t, t1, churn);
    let cm = (-0.5 * h * beta * spec.nu).exp();
    let sm = spec.mass().sqrt() * (-(-h * beta * spec.nu).exp_m1()).sqrt();
    State {
        x: z.x.iter().zip(&noise.x).map(|(x, n)| cx * x + sx * n).collect(),
        m: z.m.iter().zip(&noise.m).map(|(m, n)| cm * m + sm * n).collect(),
    }
}

/// Position split `x += (hβ/2)[kΓx − M⁻¹m + kΓ s_x]` with `k = 1`
/// (deterministic) or `k = 2` (stochastic).
fn a_update(spec: &ProcessSpec, z: &State, s_x: &[f64], h: f64, k: f64) -> State {
    let c = 0.5 * h * spec.beta_at(0.0);
    let g = k * spec.gamma_fric;
    State {
        x: z.x.iter().zip(&z.m).zip(s_x).map(|((x, m), s)| x + c * (g * x - spec.mass_inv * m + g * s)).collect(),
        m: z.m.clone(),
    }
}

/// Momentum split `m += (hβ/2)[x + kνm + kMν s_m]`.
fn b_update(spec: &ProcessSpec, z: &State, s_m: &[f64], h: f64, k: f64) -> State {
    let c = 0.5 * h * spec.beta_at(0.0);
    let n = k * spec.nu;
    let mn = k * spec.mass() * spec.nu;
    State {
        x: z.x.clone(),
        m: z.x.iter().zip(&z.m).zip(s_m).map(|((x, m), s)| m + c * (x + n * m + mn * s)).collect(),
    }
}

/// Deterministic position substep.
pub fn split_substep_a(spec: &ProcessSpec, z: &State, s_x: &[f64], h: f64) -> State {
    a_update(spec, z, s_x, h, 1.0)
}

/// Deterministic momentum substep.
pub fn split_substep_b(spec: &ProcessSpec, z: &State, s_m: &[f64], h: f64) -> State {
    b_update(spec, z, s_m, h, 1.0)
}

/// Stochastic position substep (doubled friction and score terms).
pub fn split_substep_a_stoch(spec: &ProcessSpec, z: &State, s_x: &[f64], h: f64) -> State {
    a_update(spec, z, s_x, h, 2.0)
}

/// Stochastic momentum substep (doubled friction and score terms).
pub fn split_substep_b_stoch(spec: &ProcessSpec, z: &State, s_m: &[f64], h: f64) -> State {
    b_update(spec, z, s_m, h, 2.0)
}

/// One Euler step of the reverse-SDE drift from `t = cutoff` to 0.
pub fn last_step_denoise(spec: &ProcessSpec, z: &State, cutoff: f64, provider: &ScoreProvider) -> Result<State> {
    if cutoff == 0.0 {
        return Ok(z.clone());
    }
    let ev = provider.eval(z, cutoff)?;
    Ok(z.axpy(-cutoff, &spec.reverse_sde_drift(&ev.s, z, cutoff)))
}

/// A configured sampler: kind, process, optional coefficient table and noise settings.
#[derive(Debug, Clone)]
pub struct Sampler {
    pub kind: SamplerKind,
    pub spec: ProcessSpec,
    pub times: Vec<f64>,
    pub table: Option<Arc<CoefficientTable>>,
    pub churn: ChurnConfig,
    pub noise: NoiseSource,
    /// Adams–Bashforth order for [`SamplerKind::ConjAB`].
    pub ab_order: usize,
    /// Apply last-step denoising (stochastic kinds only).
    pub denoise: bool,
}

/// Per-chain mutable state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub z: State,
    /// Past residuals `ε_{j}, ε_{j−1}, …` (most recent first).
    pub history: Vec<State>,
}

impl ChainState {
    pub fn new(z: State) -> Self {
        ChainState { z, history: Vec::new() }
    }
}

impl Sampler {
    /// Builds a sampler, precomputing the coefficient table when the kind needs one.
    /// `bt` is used by ConjEuler/ConjAB; conjugate-splitting kinds use `B = λ𝟙`
    /// with `λ = bt.lambda()`.
    pub fn new(
        kind: SamplerKind,
        param: &ScoreParameterization,
        times: &[f64],
        bt: BTChoice,
        table_opts: TableOptions,
    ) -> Result<Self> {
        let spec = param.spec;
        if !kind.supports(spec.kind) {
            return Err(Error::UnsupportedProcess { kind: kind.to_string(), process: spec.kind.to_string() });
        }
        let table = match kind.mask() {
            None => None,
            Some(mask) => {
                let bt = if mask == Mask::None { bt } else { BTChoice::LambdaOnes(bt.lambda()) };
                let mut opts = table_opts;
                if kind != SamplerKind::ConjAB {
                    opts.ab_order = 0;
                }
                Some(Arc::new(build_table(param, bt, times, mask, opts)?))
            }
        };
        Ok(Sampler {
            kind,
            spec,
            times: times.to_vec(),
            table,
            churn: ChurnConfig::off(),
            noise: NoiseSource::new(0),
            ab_order: table_opts.ab_order,
            denoise: false,
        })
    }

    pub fn with_table(mut self, table: Arc<CoefficientTable>) -> Self {
        self.table = Some(table);
        self
    }

    pub fn with_churn(mut self, churn: ChurnConfig) -> Self {
        self.churn = churn;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.noise = NoiseSource::new(seed);
        self
    }

    pub fn with_denoise(mut self, denoise: bool) -> Self {
        self.denoise = denoise;
        self
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Expected score evaluations for one chain.
    pub fn expected_nfe(&self) -> u64 {
        self.n_steps() as u64 * self.kind.npu() + u64::from(self.denoise && self.kind.is_stochastic())
    }

    fn table(&self) -> Result<&CoefficientTable> {
        self.table.as_deref().ok_or_else(|| Error::MissingTable(self.kind.to_string()))
    }

    fn ou_noise(&self, chain: u64, n: usize, d: usize) -> OuNoise {
        OuNoise {
            x: self.noise.normals(chain, n as u64, NoiseSource::POSITION, d),
            m: self.noise.normals(chain, n as u64, NoiseSource::MOMENTUM, d),
        }
    }

    fn ou(&self, z: &State, n: usize, chain: u64, churn: ChurnConfig) -> State {
        let (t, t1) = (self.times[n], self.times[n + 1]);
        ou_substep(&self.spec, z, t, t1, churn, &self.ou_noise(chain, n, z.dim()))
    }

    /// Advances `chain` from `t_n` to `t_{n+1}`.
    pub fn step(&self, provider: &ScoreProvider, n: usize, chain_id: u64, chain: &mut ChainState) -> Result<()> {
        use SamplerKind::*;
        let spec = &self.spec;
        let (t, t1) = (self.times[n], self.times[n + 1]);
        let h = t - t1;
        let z = &chain.z;
        let eval = |z: &State, t: f64| -> Result<ScoreEval> { provider.eval(z, t) };
        let next = match self.kind {
            Euler => {
                let ev = eval(z, t)?;
                z.axpy(-h, &spec.prob_flow_field(&ev.s, z, t))
            }
            EM => {
                let ev = eval(z, t)?;
                let drift = spec.reverse_sde_drift(&ev.s, z, t);
                let d = z.dim();
                let xi = State {
                    x: self.noise.normals(chain_id, n as u64, NoiseSource::POSITION, d),
                    m: self.noise.normals(chain_id, n as u64, NoiseSource::MOMENTUM, d),
                };
                let kick = apply_to_state(spec.diffusion_matrix(t), &xi);
                z.axpy(-h, &drift).axpy(h.sqrt(), &kick)
            }
            ConjEuler => {
                let ev = eval(z, t)?;
                conjugate_euler_step(self.table()?, n, z, &ev.eps)
            }
            ConjAB => {
                let ev = eval(z, t)?;
                chain.history.insert(0, ev.eps);
                chain.history.truncate(self.ab_order + 1);
                let order = if n >= self.ab_order { self.ab_order } else { 0 };
                conjugate_ab_step(self.table()?, n, z, &chain.history, order)?
            }
            NSE => {
                let s = eval(z, t)?.s;
                let zb = split_substep_b(spec, z, &s.m, h);
                let s2 = eval(&zb, t)?.s;
                split_substep_a(spec, &zb, &s2.x, h)
            }
            RSE => {
                let s = eval(z, t)?.s;
                let zb = split_substep_b(spec, z, &s.m, h);
                split_substep_a(spec, &zb, &s.x, h)
            }
            NVV => {
                let s = eval(z, t)?.s;
                let zh = split_substep_b(spec, z, &s.m, 0.5 * h);
                let s2 = eval(&zh, t)?.s;
                let za = split_substep_a(spec, &zh, &s2.x, h);
                let s3 = eval(&za, t)?.s;
                split_substep_b(spec, &za, &s3.m, 0.5 * h)
            }
            RVV => {
                let s = eval(z, t)?.s;
                let zh = split_substep_b(spec, z, &s.m, 0.5 * h);
                let za = split_substep_a(spec, &zh, &s.x, h);
                let s3 = eval(&za, t1)?.s;
                split_substep_b(spec, &za, &s3.m, 0.5 * h)
            }
            NaiveOBA => {
                let zo = self.ou(z, n, chain_id, ChurnConfig::off());
                let s = eval(&zo, t)?.s;
                let zb = split_substep_b_stoch(spec, &zo, &s.m, h);
                let s2 = eval(&zb, t)?.s;
                split_substep_a_stoch(spec, &zb, &s2.x, h)
            }
            ROBA => {
                let zo = self.ou(z, n, chain_id, self.churn);
                let s = eval(&zo, t)?.s;
                let zb = split_substep_b_stoch(spec, &zo, &s.m, h);
                split_substep_a_stoch(spec, &zb, &s.x, h)
            }
            RBAO => {
                let s = eval(z, t)?.s;
                let zb = split_substep_b_stoch(spec, z, &s.m, h);
                let za = split_substep_a_stoch(spec, &zb, &s.x, h);
                self.ou(&za, n, chain_id, self.churn)
            }
            ROBAB => {
                let zo = self.ou(z, n, chain_id, self.churn);
                let s = eval(&zo, t)?.s;
                let zh = split_substep_b_stoch(spec, &zo, &s.m, 0.5 * h);
                let za = split_substep_a_stoch(spec, &zh, &s.x, h);
                let s3 = eval(&za, t1)?.s;
                split_substep_b_stoch(spec, &za, &s3.m, 0.5 * h)
            }
            CSE => {
                let ev = eval(z, t)?;
                let zb = split_substep_b(spec, z, &ev.s.m, h);
                let x = conjugate_euler_step(self.table()?, n, &zb, &ev.eps).x;
                State { x, m: zb.m }
            }
            CVV => {
                let ev = eval(z, t)?;
                let zh = split_substep_b(spec, z, &ev.s.m, 0.5 * h);
                let x = conjugate_euler_step(self.table()?, n, &zh, &ev.eps).x;
                let za = State { x, m: zh.m };
                let s3 = eval(&za, t1)?.s;
                split_substep_b(spec, &za, &s3.m, 0.5 * h)
            }
            COBA => {
                let zo = self.ou(z, n, chain_id, self.churn);
                let ev = eval(&zo, t)?;
                let zb = split_substep_b_stoch(spec, &zo, &ev.s.m, h);
                let x = conjugate_euler_step(self.table()?, n, &zb, &ev.eps).x;
                State { x, m: zb.m }
            }
        };
        chain.z = next;
        Ok(())
    }

    /// Runs one chain over the whole schedule, then optionally denoises.
    pub fn run_chain(&self, provider: &ScoreProvider, z0: State, chain_id: u64) -> Result<State> {
        let mut chain = ChainState::new(z0);
        for n in 0..self.n_steps() {
            self.step(provider, n, chain_id, &mut chain)?;
        }
        if self.denoise && self.kind.is_stochastic() {
            let cutoff = self.times[self.n_steps()];
            chain.z = last_step_denoise(&self.spec, &chain.z, cutoff, provider)?;
        }
        Ok(chain.z)
    }
}

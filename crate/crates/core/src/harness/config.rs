//! Flat TOML run configuration. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::conjugate::{BTChoice, TableOptions};
use crate::error::{Error, Result};
use crate::harness::schedule::ScheduleKind;
use crate::ode::Tolerance;
use crate::score::{MixtureSpec, ParamKind, ScoreParameterization};
use crate::sde::{BetaSchedule, ProcessKind, ProcessSpec};
use crate::splitting::{ChurnConfig, SamplerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamChoice {
    Default,
    Preconditioned,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BtKind {
    Zero,
    LambdaI,
    LambdaOnes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub process: ProcessKind,
    /// Constant β, or the initial β of a linear VP schedule when `beta_max` is set.
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_max: Option<f64>,
    pub gamma_fric: f64,
    pub nu: f64,
    pub mass_inv: f64,
    pub gamma0: f64,
    pub t_end: f64,
    pub eps: f64,
    pub param: ParamChoice,
    pub sigma0_sq: f64,
    pub sampler: SamplerKind,
    /// One output row per entry.
    pub steps: Vec<usize>,
    pub schedule: ScheduleKind,
    pub bt: BtKind,
    pub lambda: f64,
    pub churn: bool,
    pub lambda_s: f64,
    pub ab_order: usize,
    pub chains: usize,
    pub seed: u64,
    pub denoise: bool,
    pub quad_tol: f64,
    /// Write measured wall times into the CSV (breaks byte-identical reruns).
    pub report_timing: bool,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = ProcessSpec::psld_default();
        RunConfig {
            process: ProcessKind::Psld,
            beta: 8.0,
            beta_max: None,
            gamma_fric: spec.gamma_fric,
            nu: spec.nu,
            mass_inv: spec.mass_inv,
            gamma0: spec.gamma0,
            t_end: spec.t_end,
            eps: 1e-3,
            param: ParamChoice::Default,
            sigma0_sq: ParamKind::DEFAULT_SIGMA0_SQ,
            sampler: SamplerKind::RVV,
            steps: vec![50],
            schedule: ScheduleKind::Quadratic,
            bt: BtKind::LambdaOnes,
            lambda: 0.0,
            churn: false,
            lambda_s: 0.0,
            ab_order: 1,
            chains: 10_000,
            seed: 0,
            denoise: false,
            quad_tol: 1e-5,
            report_timing: false,
            weights: vec![0.25; 4],
            means: vec![vec![2.0, 2.0], vec![-2.0, 2.0], vec![2.0, -2.0], vec![-2.0, -2.0]],
            variances: vec![0.05; 4],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        RunConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn process_spec(&self) -> ProcessSpec {
        let beta = match self.beta_max {
            Some(max) => BetaSchedule::Linear { min: self.beta, max },
            None => BetaSchedule::Constant(self.beta),
        };
        ProcessSpec {
            kind: self.process,
            beta,
            gamma_fric: self.gamma_fric,
            nu: self.nu,
            mass_inv: self.mass_inv,
            gamma0: self.gamma0,
            t_end: self.t_end,
        }
    }

    pub fn param_kind(&self) -> ParamKind {
        match self.param {
            ParamChoice::Default => ParamKind::Default,
            ParamChoice::Preconditioned => ParamKind::Preconditioned { sigma0_sq: self.sigma0_sq },
            ParamChoice::Unit => ParamKind::Unit,
        }
    }

    pub fn parameterization(&self) -> Result<ScoreParameterization> {
        ScoreParameterization::new(self.param_kind(), self.process_spec())
    }

    pub fn bt_choice(&self) -> BTChoice {
        match self.bt {
            BtKind::Zero => BTChoice::Zero,
            BtKind::LambdaI => BTChoice::LambdaI(self.lambda),
            BtKind::LambdaOnes => BTChoice::LambdaOnes(self.lambda),
        }
    }

    pub fn churn_config(&self) -> ChurnConfig {
        ChurnConfig { lambda_s: self.lambda_s, enabled: self.churn }
    }

    pub fn table_options(&self) -> TableOptions {
        TableOptions { tol: Tolerance::uniform(self.quad_tol), ab_order: self.ab_order }
    }

    pub fn mixture(&self) -> Result<MixtureSpec> {
        MixtureSpec::from_position_mixture(&self.process_spec(), &self.weights, &self.means, &self.variances)
    }

    pub fn validate(&self) -> Result<()> {
        self.process_spec().validate()?;
        self.parameterization()?;
        self.mixture()?;
        if !(self.eps > 0.0 && self.eps < self.t_end) {
            return Err(Error::Config(format!("need 0 < eps < t_end, got eps = {}", self.eps)));
        }
        if self.steps.is_empty() || self.steps.contains(&0) {
            return Err(Error::Config("steps must be a non-empty list of positive integers".into()));
        }
        if self.chains == 0 {
            return Err(Error::Config("chains must be positive".into()));
        }
        if self.ab_order > 2 {
            return Err(Error::Config("ab_order must be 0, 1 or 2".into()));
        }
        if !(self.quad_tol > 0.0) {
            return Err(Error::Config("quad_tol must be positive".into()));
        }
        if !(self.lambda.is_finite() && self.lambda_s >= 0.0 && self.lambda_s.is_finite()) {
            return Err(Error::Config("lambda must be finite and lambda_s non-negative".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must fit in a signed 64-bit integer".into()));
        }
        if !self.sampler.supports(self.process) {
            return Err(Error::UnsupportedProcess { kind: self.sampler.to_string(), process: self.process.to_string() });
        }
        Ok(())
    }
}

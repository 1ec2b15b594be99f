//! End-to-end sampling runs on a Gaussian-mixture target with CSV and JSON output.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::metrics::{sample_error_metrics, MIN_SAMPLES};
use crate::harness::schedule::make_schedule;
use crate::score::{GaussianMixtureScore, ScoreProvider};
use crate::splitting::Sampler;
use crate::state::State;

/// Stream of the ChaCha generator that draws initial samples.
const INIT_STREAM: u64 = 0x1417;

pub const CSV_HEADER: [&str; 10] =
    ["sampler", "n_steps", "nfe", "lambda", "lambda_s", "seed", "mean_err", "cov_err", "sliced_w1", "wall_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub sampler: String,
    pub n_steps: usize,
    /// Score evaluations per chain.
    pub nfe: u64,
    pub lambda: f64,
    pub lambda_s: f64,
    pub seed: u64,
    /// NaN when fewer than [`MIN_SAMPLES`] chains were run.
    pub mean_err: f64,
    pub cov_err: f64,
    pub sliced_w1: f64,
    /// Zero unless timing is requested.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub schedule_formula: String,
    pub rows: Vec<RunRow>,
    /// Final positions of the last row's chains.
    #[serde(skip)]
    pub samples: Vec<State>,
}

/// Initial chains drawn from the exact marginal at `t_end`.
pub fn initial_samples(config: &RunConfig) -> Result<Vec<State>> {
    let spec = config.process_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(INIT_STREAM);
    config.mixture()?.sample_many(&spec, spec.t_end, config.chains, &mut rng)
}

/// Runs the configured sampler once per entry of `config.steps`.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let spec = config.process_spec();
    let param = config.parameterization()?;
    let mixture = config.mixture()?;
    let model = Arc::new(GaussianMixtureScore::new(mixture.clone(), spec)?);
    let init = initial_samples(config)?;
    let mut rows = Vec::with_capacity(config.steps.len());
    let mut samples = Vec::new();
    for &n in &config.steps {
        let start = Instant::now();
        let schedule = make_schedule(config.schedule, n, spec.t_end, config.eps)?;
        let sampler = Sampler::new(config.sampler, &param, &schedule.times, config.bt_choice(), config.table_options())?
            .with_churn(config.churn_config())
            .with_seed(config.seed)
            .with_denoise(config.denoise);
        let provider = ScoreProvider::new(model.clone(), param);
        let out: Vec<State> = init
            .par_iter()
            .enumerate()
            .map(|(i, z)| sampler.run_chain(&provider, z.clone(), i as u64))
            .collect::<Result<_>>()?;
        let (mean_err, cov_err, sliced_w1) = if out.len() >= MIN_SAMPLES {
            let m = sample_error_metrics(&out, &mixture)?;
            (m.mean_err, m.cov_err, m.sliced_w1)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        let wall_ms = if config.report_timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        rows.push(RunRow {
            sampler: config.sampler.to_string(),
            n_steps: n,
            nfe: provider.nfe() / config.chains as u64,
            lambda: config.lambda,
            lambda_s: if config.churn { config.lambda_s } else { 0.0 },
            seed: config.seed,
            mean_err,
            cov_err,
            sliced_w1,
            wall_ms,
        });
        samples = out;
    }
    Ok(RunReport { config: config.clone(), schedule_formula: config.schedule.formula().into(), rows, samples })
}

impl RunReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.sampler.clone(),
                r.n_steps.to_string(),
                r.nfe.to_string(),
                r.lambda.to_string(),
                r.lambda_s.to_string(),
                r.seed.to_string(),
                format!("{:.10e}", r.mean_err),
                format!("{:.10e}", r.cov_err),
                format!("{:.10e}", r.sliced_w1),
                format!("{:.3}", r.wall_ms),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes `<stem>.csv` and `<stem>.json` next to each other.
    pub fn write(&self, out: &Path) -> Result<()> {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(out.with_extension("csv"), self.to_csv()?)?;
        std::fs::write(out.with_extension("json"), self.to_json()?)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

//! Command-line driver: sampling runs, order estimates, stability sweeps,
//! equivalence checks and coefficient-table dumps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use phaseflow::harness::config::RunConfig;
use phaseflow::harness::convergence::{convergence_order, log_grid};
use phaseflow::harness::equivalence::{ab_polynomial_equivalence, ddim_equivalence, exponential_integrator_equivalence};
use phaseflow::harness::run::run;
use phaseflow::harness::schedule::make_schedule;
use phaseflow::harness::stability::{stability_sweep, StiffProblem};
use phaseflow::linalg2::Sym2;
use phaseflow::score::MixtureSpec;
use phaseflow::splitting::{Sampler, SamplerKind};
use phaseflow::{Error, Result, State};

#[derive(Parser)]
#[command(name = "phaseflow", version, about = "Conjugate and splitting samplers for phase-space diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sampler on the mixture benchmark and report error metrics.
    Sample(RunArgs),
    /// Estimate one-step truncation orders on a single-Gaussian problem.
    Convergence(RunArgs),
    /// Sweep λ on the stiff stability problem.
    Stability(StabilityArgs),
    /// Check the conjugate integrator against DDIM and the exponential integrator.
    Equivalence,
    /// Write the coefficient table of a conjugate sampler as CSV.
    DumpCoeffs(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    /// Step counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<usize>>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Churn parameter; setting it enables churn.
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; `.csv` and `.json` files are written next to each other.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    denoise: Option<Switch>,
}

#[derive(Args)]
struct StabilityArgs {
    /// λ values to sweep, comma separated (defaults to a grid around λ̄).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    lambda: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.sampler {
            cfg.sampler = s;
        }
        if let Some(steps) = &self.steps {
            cfg.steps = steps.clone();
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(ls) = self.lambda_s {
            cfg.lambda_s = ls;
            cfg.churn = true;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(d) = self.denoise {
            cfg.denoise = matches!(d, Switch::On);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| Error::Io(e.to_string()))
}

fn sample(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.config()?;
    let report = run(&cfg)?;
    if let Some(out) = &args.out {
        report.write(out)?;
    }
    print!("{}", report.to_csv()?);
    Ok(ExitCode::SUCCESS)
}

fn convergence(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.config()?;
    let param = cfg.parameterization()?;
    let mix = MixtureSpec::single(State { x: vec![1.0], m: vec![0.0] }, Sym2::diag(0.5, 0.5))?;
    let z = State { x: vec![1.0], m: vec![0.0] };
    let kinds = match args.sampler {
        Some(k) => vec![k],
        None => vec![SamplerKind::Euler, SamplerKind::NVV, SamplerKind::RVV],
    };
    let mut results = Vec::new();
    for kind in kinds {
        results.push(convergence_order(kind, &param, &mix, &z, 0.15, &log_grid(1e-3, 1e-1, 9))?);
    }
    emit(args.out.as_deref(), &to_json(&results)?)?;
    Ok(ExitCode::SUCCESS)
}

fn stability(args: &StabilityArgs) -> Result<ExitCode> {
    let problem = StiffProblem::default();
    let lambda_bar = problem.lambda_bar()?;
    let lambdas = args.lambda.clone().unwrap_or_else(|| (0..=10).map(|i| lambda_bar * f64::from(i) / 5.0 + 0.0).collect());
    let rows = stability_sweep(&problem, &lambdas)?;
    let mut text = String::from("lambda,eigenvalue,margin,predicted_stable,amplification,empirical_stable\n");
    for r in &rows {
        text += &format!(
            "{},{},{},{},{},{}\n",
            r.lambda, r.eigenvalue, r.margin, r.predicted_stable, r.amplification, r.empirical_stable
        );
    }
    emit(args.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn equivalence() -> Result<ExitCode> {
    let reports = [ddim_equivalence(100)?, exponential_integrator_equivalence(50)?, ab_polynomial_equivalence(50)?];
    for r in &reports {
        println!(
            "{} {}: max diff {:.3e} (tolerance {:.0e}, {} steps)",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.max_diff,
            r.tolerance,
            r.n_steps
        );
    }
    Ok(if reports.iter().all(|r| r.pass) { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn dump_coeffs(args: &RunArgs) -> Result<ExitCode> {
    let mut cfg = args.config()?;
    if args.sampler.is_none() && !cfg.sampler.needs_table() {
        cfg.sampler = SamplerKind::ConjEuler;
    }
    if !cfg.sampler.needs_table() {
        return Err(Error::Config(format!("sampler {} has no coefficient table", cfg.sampler)));
    }
    let spec = cfg.process_spec();
    let times = make_schedule(cfg.schedule, cfg.steps[0], spec.t_end, cfg.eps)?.times;
    let sampler = Sampler::new(cfg.sampler, &cfg.parameterization()?, &times, cfg.bt_choice(), cfg.table_options())?;
    let table = sampler.table.ok_or_else(|| Error::MissingTable(cfg.sampler.to_string()))?;
    emit(args.out.as_deref(), &table.to_csv())?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sample(a) => sample(a),
        Command::Convergence(a) => convergence(a),
        Command::Stability(a) => stability(a),
        Command::Equivalence => equivalence(),
        Command::DumpCoeffs(a) => dump_coeffs(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

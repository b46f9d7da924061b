//! `protocal`: calibrate classification decision boundaries from unlabeled
//! prediction dumps, then predict, evaluate and sweep.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protocal_core::synth::BAYES_DRAWS;
use protocal_core::{Representation, ScenarioSpec, SelectionStrategy};

use config::{RunConfig, RunConfigFile};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "protocal",
    version,
    about = "Unsupervised decision-boundary calibration for classifier outputs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a calibrated classifier on an unlabeled estimate set sampled from a dump.
    Calibrate(CalibrateArgs),
    /// Score calibrated and argmax predictions against a labeled dump.
    Evaluate(EvaluateArgs),
    /// Write calibrated predictions for every record of a dump.
    Predict(PredictArgs),
    /// Accuracy of a binary threshold rule over a grid of thresholds.
    Sweep(SweepArgs),
    /// Generate synthetic estimate and test dumps with ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Prediction dump (JSONL); labels, if any, are ignored.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Classifier file to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Diagnostics file [default: <out stem>.diagnostics.json].
    #[arg(long, value_name = "FILE")]
    diagnostics: Option<PathBuf>,
    /// TOML run config; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Vector representation fed to the mixture: log-prob, prob or logits.
    #[arg(long)]
    mode: Option<Representation>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Convergence tolerance on the mean per-sample log-likelihood.
    #[arg(long)]
    tol: Option<f64>,
    /// Ridge added to every covariance diagonal.
    #[arg(long)]
    reg: Option<f64>,
    /// assignment-score or max-likelihood.
    #[arg(long)]
    selection: Option<SelectionStrategy>,
    /// Estimate-set size [default: 250 per class].
    #[arg(long)]
    estimate_size: Option<usize>,
    /// Base seed [default: $PROTOCAL_SEED, else 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Classifier file; repeat to aggregate mean and std over several runs.
    #[arg(long, value_name = "FILE", required = true)]
    classifier: Vec<PathBuf>,
    /// Labeled test dump (JSONL).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Metrics JSON [default: stdout].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    classifier: PathBuf,
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Predictions JSONL [default: stdout].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Labeled binary test dump (JSONL).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// `start:stop:count` or a comma-separated list of thresholds in (0, 1).
    #[arg(long, default_value = "0.01:0.99:99", allow_hyphen_values = true)]
    grid: String,
    /// CSV output [default: stdout].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML scenario file.
    #[arg(
        long,
        value_name = "FILE",
        conflicts_with = "preset",
        required_unless_present = "preset"
    )]
    config: Option<PathBuf>,
    /// Built-in scenario: biased-binary or symmetric-binary.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory for estimate.jsonl, test.jsonl and truth.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Scenario seed [default: the file's seed; presets use $PROTOCAL_SEED, else 0].
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_estimate: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Monte-Carlo draws for the Bayes-optimal accuracy.
    #[arg(long, default_value_t = BAYES_DRAWS)]
    bayes_draws: usize,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate(a) => {
            let file = match &a.config {
                Some(p) => RunConfigFile::load(p)?,
                None => RunConfigFile::default(),
            };
            let flags = RunConfigFile {
                mode: a.mode,
                restarts: a.restarts,
                max_iter: a.max_iter,
                tol: a.tol,
                reg: a.reg,
                selection: a.selection,
                estimate_size: a.estimate_size,
                seed: a.seed,
            };
            let cfg = RunConfig::resolve(file.overlay(flags))?;
            commands::calibrate(&a.input, &a.out, a.diagnostics.as_deref(), &cfg)
        }
        Command::Evaluate(a) => commands::evaluate_cmd(&a.classifier, &a.input, a.out.as_deref()),
        Command::Predict(a) => commands::predict(&a.classifier, &a.input, a.out.as_deref()),
        Command::Sweep(a) => {
            let grid = commands::parse_grid(&a.grid)?;
            commands::sweep(&a.input, &grid, a.out.as_deref())
        }
        Command::Synth(a) => {
            let mut spec = match (&a.config, &a.preset) {
                (Some(p), _) => commands::load_scenario(p)?,
                (None, Some(name)) => ScenarioSpec::preset(name, config::default_seed()?)?,
                (None, None) => unreachable!("clap requires one of --config/--preset"),
            };
            if let Some(seed) = a.seed {
                spec.seed = seed;
            }
            if let Some(n) = a.n_estimate {
                spec.n_estimate = n;
            }
            if let Some(n) = a.n_test {
                spec.n_test = n;
            }
            commands::synth(&spec, &a.out, a.bayes_draws)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

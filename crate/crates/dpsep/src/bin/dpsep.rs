//! Thin command-line front end over the library: dataset generation,
//! experiment sweeps, noise calibration, bound evaluation and figure data.
//!
//! Exit codes: 0 on full success, 1 on configuration/usage errors, 2 when a
//! sweep finished but some runs failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dpsep::bound::{default_m_tail, expected_kl_bound, mc_expected_kl, BoundInputs, BoundOutcome};
use dpsep::harness::{emit_figure_data, run_experiment, ExperimentConfig, RunReport};
use dpsep::mog::{generate_synthetic, Dataset};
use dpsep::seeding::derive_seed;
use dpsep::{calibrate_sigma, epsilon_of, GaussianNat};

#[derive(Parser)]
#[command(name = "dpsep", about = "Private and non-private stochastic EP for MoG clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustering dataset from a config's model.
    Generate(GenerateArgs),
    /// Run the configured method sweep and write CSV/JSON results.
    Run(RunArgs),
    /// Calibrate the noise multiplier for a privacy budget.
    Calibrate(CalibrateArgs),
    /// Evaluate the per-step privacy-accuracy KL bound on a posterior.
    Bound(BoundArgs),
    /// Emit figure data (means, confidence ellipses, labels) from a run report.
    Figure(FigureArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Experiment config JSON (model and n are used).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// Dataset size N (the subsampling rate is 1/N).
    #[arg(long)]
    n: u64,
    /// Number of passes T (the accountant composes T * N steps).
    #[arg(long)]
    epochs: u64,
    /// Optional comma-separated Renyi order grid.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args)]
struct BoundArgs {
    /// Posterior JSON with natural parameters {"eta": [...], "lambda": [[...]]}.
    #[arg(long)]
    posterior: PathBuf,
    /// Common noise scale applied to both natural-parameter blocks.
    #[arg(long)]
    sigma: f64,
    /// Spectrum floor of the repair step.
    #[arg(long, default_value_t = 1e-6)]
    rho: f64,
    /// Tail level multiplier: M = m_mult * sqrt(2 v ln d).
    #[arg(long, default_value_t = 3.0)]
    m_mult: f64,
    /// Monte-Carlo sample count for the companion estimate.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FigureArgs {
    /// Run report JSON produced by `dpsep run`.
    #[arg(long)]
    report: PathBuf,
    /// Dataset CSV the report was trained on.
    #[arg(long)]
    data: PathBuf,
    /// Two projection dimensions, e.g. "0,1".
    #[arg(long, default_value = "0,1")]
    dims: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Generate(args) => {
            let mut cfg = ExperimentConfig::from_json_file(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.master_seed = seed;
            }
            cfg.validate()?;
            let data = generate_synthetic(
                &cfg.model,
                cfg.n,
                derive_seed(cfg.master_seed, "dataset", 0),
            )?;
            data.write_csv(&args.out)?;
            println!("wrote {} points to {}", data.len(), args.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let mut cfg = ExperimentConfig::from_json_file(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.master_seed = seed;
            }
            if let Some(out) = args.out {
                cfg.output_dir = out;
            }
            let outcome = run_experiment(&cfg)?;
            println!(
                "{} runs ok, {} failed; results at {}",
                outcome.reports.len(),
                outcome.failed.len(),
                outcome.results_csv.display()
            );
            if outcome.failed.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
        Command::Calibrate(args) => {
            let q = 1.0 / args.n as f64;
            let steps = args.epochs * args.n;
            let sigma = calibrate_sigma(args.epsilon, args.delta, q, steps)?;
            let achieved = match &args.grid {
                Some(grid) => {
                    let orders: Vec<f64> = grid
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<Result<_, _>>()?;
                    dpsep::accountant::epsilon_of_with_orders(sigma, q, steps, args.delta, &orders)?
                }
                None => epsilon_of(sigma, q, steps, args.delta)?,
            };
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "sigma": sigma,
                    "epsilon": achieved,
                    "delta": args.delta,
                    "steps": steps,
                    "sampling_rate": q,
                }))?
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Bound(args) => {
            let text = std::fs::read_to_string(&args.posterior)?;
            let q: GaussianNat = serde_json::from_str(&text)?;
            let d = q.dim();
            let m_tail = default_m_tail(d, args.sigma, args.m_mult);
            let outcome = expected_kl_bound(&BoundInputs {
                q: q.clone(),
                sigma1: args.sigma,
                sigma2: args.sigma,
                rho: args.rho,
                m_tail,
            })?;
            let mc = mc_expected_kl(&q, args.sigma, args.sigma, args.rho, args.samples, args.seed)?;
            let payload = match outcome {
                BoundOutcome::Applicable { bound, confidence } => json!({
                    "applicable": true,
                    "bound": bound,
                    "confidence": confidence,
                    "m_tail": m_tail,
                    "mc_estimate": mc.estimate,
                    "mc_stderr": mc.stderr,
                    "mc_psd_repair_rate": mc.psd_repair_rate,
                }),
                BoundOutcome::Inapplicable { reason } => json!({
                    "applicable": false,
                    "reason": reason,
                    "m_tail": m_tail,
                    "mc_estimate": mc.estimate,
                    "mc_stderr": mc.stderr,
                    "mc_psd_repair_rate": mc.psd_repair_rate,
                }),
            };
            println!("{}", serde_json::to_string_pretty(&payload)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Figure(args) => {
            let report: RunReport = serde_json::from_str(&std::fs::read_to_string(&args.report)?)?;
            let data = Dataset::read_csv(&args.data)?;
            let dims = parse_dims(&args.dims)?;
            let model = report.model.clone();
            let fig = emit_figure_data(&report, &data, &model, dims)?;
            let (ellipses, labels) = fig.write_csv(&args.out)?;
            println!("wrote {} and {}", ellipses.display(), labels.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize), Box<dyn std::error::Error>> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("dims must be two comma-separated indices, e.g. 0,1".into());
    }
    Ok((parts[0].trim().parse()?, parts[1].trim().parse()?))
}

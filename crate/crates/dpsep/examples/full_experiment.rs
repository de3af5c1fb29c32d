//! The full config-driven sweep: every method on shared synthetic datasets,
//! scored against a Gibbs ground truth, with CSV and JSON outputs. By default
//! this runs a reduced two-repeat sweep; pass `--full` for the five-repeat
//! version (a few minutes).
//!
//! Run with `cargo run --release --example full_experiment [-- --full]`.

use dpsep::harness::{run_experiment, ExperimentConfig, MethodSpec};
use dpsep::{ClipPolicy, Method, MoGModel};

fn main() -> dpsep::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let repeats = if full { 5 } else { 2 };

    let spec = |name: &str, method: Method| MethodSpec {
        name: name.into(),
        seed_group: None,
        method,
        iterations: 100,
        damping: 1.0,
        clip: None,
        epsilon: None,
        sigma: None,
        delta: 1e-5,
        rho: 1e-6,
        init_jitter_sd: 0.1,
        ep_damping: None,
    };
    let cfg = ExperimentConfig {
        model: MoGModel::default(),
        n: 1000,
        methods: vec![
            spec("ep", Method::Ep),
            spec("sep", Method::Sep),
            MethodSpec {
                clip: Some(ClipPolicy::joint(20.0)?),
                ..spec("sep-clipped-c20", Method::ClippedSep)
            },
            MethodSpec {
                clip: Some(ClipPolicy::joint(10.0)?),
                ..spec("sep-clipped-c10", Method::ClippedSep)
            },
            MethodSpec {
                clip: Some(ClipPolicy::joint(1.0)?),
                ..spec("sep-clipped-c1", Method::ClippedSep)
            },
            MethodSpec {
                clip: Some(ClipPolicy::joint(1.0)?),
                epsilon: Some(50.0),
                seed_group: Some("dp-sep".into()),
                ..spec("dp-sep-eps50", Method::DpSep)
            },
            MethodSpec {
                clip: Some(ClipPolicy::joint(1.0)?),
                epsilon: Some(5.0),
                seed_group: Some("dp-sep".into()),
                ..spec("dp-sep-eps5", Method::DpSep)
            },
            MethodSpec {
                clip: Some(ClipPolicy::joint(1.0)?),
                epsilon: Some(1.0),
                seed_group: Some("dp-sep".into()),
                ..spec("dp-sep-eps1", Method::DpSep)
            },
        ],
        repeats,
        output_dir: std::env::temp_dir().join("dpsep-full-experiment"),
        emit_trace: false,
        trace_every: 0,
        master_seed: 71,
        gibbs_sweeps: 3000,
        gibbs_burn_in: 500,
    };

    let outcome = run_experiment(&cfg)?;
    println!(
        "{} runs ok, {} failed",
        outcome.reports.len(),
        outcome.failed.len()
    );
    println!("results: {}", outcome.results_csv.display());
    println!("summary:\n{}", std::fs::read_to_string(&outcome.summary_csv)?);
    Ok(())
}

//! Non-private baselines on the synthetic clustering task: EP, SEP and
//! clipped SEP against a Gibbs ground truth, with figure data written for
//! the SEP posterior.
//!
//! Run with `cargo run --release --example sep_clustering`.

use dpsep::engines::{run, EngineConfig, Method};
use dpsep::harness::{emit_figure_data, RunReport};
use dpsep::{f_norm, generate_synthetic, gibbs_ground_truth, ClipPolicy, MoGModel};

fn main() -> dpsep::Result<()> {
    let model = MoGModel::default();
    let n = 1000;
    let data = generate_synthetic(&model, n, 42)?;
    let truth = gibbs_ground_truth(&data, &model, 3000, 500, 43)?;

    let base = EngineConfig {
        method: Method::Sep,
        iterations: 100,
        damping: 1.0,
        clip: None,
        privacy: None,
        seed: 7,
        trace_every: 0,
        rho: 1e-6,
        init_jitter_sd: 0.1,
        ep_damping: None,
    };

    let variants: Vec<(&str, EngineConfig)> = vec![
        ("ep", EngineConfig { method: Method::Ep, ..base.clone() }),
        ("sep", base.clone()),
        (
            "sep-clipped C=20",
            EngineConfig {
                method: Method::ClippedSep,
                clip: Some(ClipPolicy::joint(20.0)?),
                ..base.clone()
            },
        ),
        (
            "sep-clipped C=1",
            EngineConfig {
                method: Method::ClippedSep,
                clip: Some(ClipPolicy::joint(1.0)?),
                ..base.clone()
            },
        ),
    ];

    println!("{:>18} {:>10} {:>10} {:>10} {:>9}", "method", "mean F", "cov F", "avg F", "failures");
    let mut sep_report = None;
    for (name, cfg) in variants {
        let out = run(&data, &model, &cfg)?;
        let posterior = out.posterior.to_moments()?;
        let f = f_norm(&posterior, &truth)?;
        println!(
            "{name:>18} {:>10.4} {:>10.4} {:>10.4} {:>9}",
            f.mean, f.cov, f.avg, out.failures
        );
        if name == "sep" {
            sep_report = Some(RunReport {
                method: name.into(),
                seed: cfg.seed,
                config: cfg,
                model: model.clone(),
                posterior,
                f_norms: f,
                achieved_privacy: None,
                failures: out.failures,
                wall_ms: out.wall_ms,
                trace: None,
            });
        }
    }

    let report = sep_report.expect("sep ran");
    let fig = emit_figure_data(&report, &data, &model, (0, 1))?;
    let out_dir = std::env::temp_dir().join("dpsep-sep-clustering");
    let (ellipses, labels) = fig.write_csv(&out_dir)?;
    println!("figure data: {} and {}", ellipses.display(), labels.display());
    Ok(())
}

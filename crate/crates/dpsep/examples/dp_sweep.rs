//! Differentially private clustering at several privacy budgets: calibrate
//! the noise multiplier for each epsilon, run DP-SEP, and score the private
//! posteriors against a Gibbs ground truth.
//!
//! Run with `cargo run --release --example dp_sweep`.

use dpsep::engines::{run, EngineConfig, Method};
use dpsep::{
    calibrate_sigma, f_norm, generate_synthetic, gibbs_ground_truth, ClipPolicy, MoGModel,
    PrivacySpec,
};

fn main() -> dpsep::Result<()> {
    let model = MoGModel::default();
    let n = 1000usize;
    let t = 100usize;
    let delta = 1e-5;
    let q = 1.0 / n as f64;
    let steps = (t * n) as u64;

    let data = generate_synthetic(&model, n, 42)?;
    let truth = gibbs_ground_truth(&data, &model, 3000, 500, 43)?;

    println!(
        "{:>8} {:>9} {:>10} {:>10} {:>10} {:>10}",
        "epsilon", "sigma", "achieved", "mean F", "cov F", "avg F"
    );
    for eps in [1.0, 5.0, 50.0] {
        let sigma = calibrate_sigma(eps, delta, q, steps)?;
        let cfg = EngineConfig {
            method: Method::DpSep,
            iterations: t,
            damping: 1.0,
            clip: Some(ClipPolicy::joint(1.0)?),
            privacy: Some(PrivacySpec {
                epsilon: Some(eps),
                delta,
                sigma: Some(sigma),
                sampling_rate: q,
                steps,
                clip_c: 1.0,
                damping: 1.0,
            }),
            seed: 7,
            trace_every: 0,
            rho: 1e-6,
            init_jitter_sd: 0.1,
            ep_damping: None,
        };
        let out = run(&data, &model, &cfg)?;
        let f = f_norm(&out.posterior.to_moments()?, &truth)?;
        let achieved = out.achieved_privacy.map(|(e, _)| e).unwrap_or(f64::NAN);
        println!(
            "{eps:>8} {sigma:>9.4} {achieved:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            f.mean, f.cov, f.avg
        );
    }
    Ok(())
}

//! Noise calibration for the clustering experiment's privacy budgets: the
//! accountant composes T * N subsampled-Gaussian invocations at rate 1/N and
//! searches for the smallest noise multiplier meeting each epsilon.
//!
//! Run with `cargo run --release --example calibrate_noise`.

use dpsep::{calibrate_sigma, epsilon_of, sensitivity};

fn main() -> dpsep::Result<()> {
    let n = 1000u64;
    let epochs = 100u64;
    let delta = 1e-5;
    let q = 1.0 / n as f64;
    let steps = epochs * n;

    println!("N = {n}, T = {epochs}, delta = {delta:.0e}, q = 1/N");
    println!("{:>8} {:>10} {:>12} {:>14}", "epsilon", "sigma", "achieved", "noise sd (C=1)");
    for eps in [1.0, 5.0, 50.0] {
        let sigma = calibrate_sigma(eps, delta, q, steps)?;
        let achieved = epsilon_of(sigma, q, steps, delta)?;
        let noise_sd = sigma * sensitivity(1.0, 1.0, n);
        println!("{eps:>8} {sigma:>10.4} {achieved:>12.4} {noise_sd:>14.6}");
    }
    Ok(())
}

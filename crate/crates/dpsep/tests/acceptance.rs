//! Acceptance suite: one test per criterion (the experiment-scale orderings
//! share a single sweep), each printing a PASS line with its measured
//! quantities. Run with `cargo test --test acceptance -- --nocapture` to see
//! the lines.

mod common;

use common::{
    assert_entries_close, qmc_tilted_oracle, random_cavity, random_proper, rng, Stopwatch,
};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use dpsep::bound::{
    clipped_posterior, clipped_sep_kl, default_m_tail, expected_kl_bound, mc_expected_kl,
    BoundInputs, BoundOutcome,
};
use dpsep::engines::{blocks_joint_norm, released_update, run, EngineConfig, Method};
use dpsep::gaussian::min_eigenvalue;
use dpsep::harness::{run_experiment, ExperimentConfig, MethodSpec};
use dpsep::mog::{generate_synthetic, tilted_moments, MoGModel};
use dpsep::{
    calibrate_sigma, combine, epsilon_of, kl_gaussian, ClipPolicy, GaussianMoments, GaussianNat,
    PrivacySpec,
};

fn pass(criterion: &str, detail: String, watch: &Stopwatch) {
    println!("criterion {criterion}: PASS ({detail}) [{:.1}s]", watch.secs());
}

/// Criterion 1 — released-update sensitivity by brute-force neighbour
/// enumeration: N = 5, d = 2, a 20-point replacement pool, 10 random
/// (gamma, C) pairs; the spread never exceeds 2 gamma C / N.
#[test]
fn criterion_01_sensitivity_brute_force() {
    let watch = Stopwatch::start();
    let model = MoGModel {
        j: 2,
        d: 2,
        noise_sd: 0.5,
        weights: vec![0.5, 0.5],
        prior_mean: vec![0.0, 0.0],
        prior_var: 1.0,
    };
    let n = 5usize;
    let mut r = rng(401);
    let prior: Vec<GaussianNat> = (0..model.j).map(|_| model.prior_natural()).collect();
    let factor: Vec<GaussianNat> = (0..model.j)
        .map(|_| {
            let eta = DVector::from_fn(2, |_, _| 0.3 * r.sample::<f64, _>(StandardNormal));
            let lambda =
                DMatrix::from_fn(2, 2, |_, _| 0.1 * r.sample::<f64, _>(StandardNormal));
            GaussianNat::new(eta, lambda).unwrap()
        })
        .collect();
    let posterior: Vec<GaussianNat> = (0..model.j)
        .map(|b| combine(&[(n as f64, &factor[b]), (1.0, &prior[b])]).unwrap())
        .collect();
    let pool: Vec<DVector<f64>> = (0..20)
        .map(|_| DVector::from_fn(2, |_, _| 2.5 * r.sample::<f64, _>(StandardNormal)))
        .collect();

    let mut worst_ratio = 0.0f64;
    for _ in 0..10 {
        let gamma = 0.2 + 1.5 * r.gen::<f64>();
        let c = 0.3 + 4.0 * r.gen::<f64>();
        let policy = ClipPolicy::joint(c).unwrap();
        let released: Vec<Vec<GaussianNat>> = pool
            .iter()
            .map(|x| {
                released_update(&posterior, &factor, &prior, x, &model, Some(&policy), gamma, n)
                    .unwrap()
                    .expect("proper state")
            })
            .collect();
        let bound = 2.0 * gamma * c / n as f64;
        let mut max_change = 0.0f64;
        for i in 0..released.len() {
            for k in (i + 1)..released.len() {
                let diff: Vec<GaussianNat> = (0..model.j)
                    .map(|b| combine(&[(1.0, &released[i][b]), (-1.0, &released[k][b])]).unwrap())
                    .collect();
                max_change = max_change.max(blocks_joint_norm(&diff));
            }
        }
        assert!(
            max_change <= bound + 1e-9,
            "sensitivity exceeded: {max_change} > {bound} (gamma {gamma}, C {c})"
        );
        worst_ratio = worst_ratio.max(max_change / bound);
    }
    pass(
        "01 [sensitivity]",
        format!("max empirical/analytic ratio {worst_ratio:.3} <= 1"),
        &watch,
    );
}

/// Criterion 2 — zero-noise reduction: DP-SEP with sigma = 0 and an inactive
/// clip norm reproduces SEP bitwise on the experiment-scale configuration.
#[test]
fn criterion_02_zero_noise_reduction() {
    let watch = Stopwatch::start();
    let model = MoGModel::default();
    let n = 1000usize;
    let t = 100usize;
    let data = generate_synthetic(&model, n, 902).unwrap();

    let sep_cfg = EngineConfig {
        method: Method::Sep,
        iterations: t,
        damping: 1.0,
        clip: None,
        privacy: None,
        seed: 19,
        trace_every: n,
        rho: 1e-6,
        init_jitter_sd: 0.1,
        ep_damping: None,
    };
    let mut dp_cfg = sep_cfg.clone();
    dp_cfg.method = Method::DpSep;
    dp_cfg.clip = Some(ClipPolicy::joint(1e9).unwrap());
    dp_cfg.privacy = Some(PrivacySpec {
        epsilon: None,
        delta: 1e-5,
        sigma: Some(0.0),
        sampling_rate: 1.0 / n as f64,
        steps: (t * n) as u64,
        clip_c: 1e9,
        damping: 1.0,
    });

    let sep = run(&data, &model, &sep_cfg).unwrap();
    let dp = run(&data, &model, &dp_cfg).unwrap();
    assert_eq!(sep.posterior, dp.posterior, "final posterior differs");
    assert_eq!(sep.trace.len(), dp.trace.len());
    for (a, b) in sep.trace.iter().zip(&dp.trace) {
        assert_eq!(a.posterior, b.posterior, "trajectory diverged at step {}", a.step);
    }
    assert_eq!(sep.failures, dp.failures);
    pass(
        "02 [zero-noise reduction]",
        format!("{} trajectory snapshots bitwise identical", sep.trace.len()),
        &watch,
    );
}

fn table_config(out: std::path::PathBuf) -> ExperimentConfig {
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
    let clipped = |name: &str, c: f64| MethodSpec {
        clip: Some(ClipPolicy::joint(c).unwrap()),
        ..spec(name, Method::ClippedSep)
    };
    // The privacy sweep is a coupled comparison: all three budgets run with
    // the same visit order and underlying noise draws, scaled by their own
    // calibrated multiplier.
    let dp = |name: &str, eps: f64| MethodSpec {
        clip: Some(ClipPolicy::joint(1.0).unwrap()),
        epsilon: Some(eps),
        seed_group: Some("dp-sep".into()),
        ..spec(name, Method::DpSep)
    };
    ExperimentConfig {
        model: MoGModel::default(),
        n: 1000,
        methods: vec![
            spec("ep", Method::Ep),
            spec("sep", Method::Sep),
            clipped("sep-clipped-c20", 20.0),
            clipped("sep-clipped-c10", 10.0),
            clipped("sep-clipped-c1", 1.0),
            dp("dp-sep-eps50", 50.0),
            dp("dp-sep-eps5", 5.0),
            dp("dp-sep-eps1", 1.0),
        ],
        repeats: 5,
        output_dir: out,
        emit_trace: false,
        trace_every: 0,
        master_seed: 71,
        gibbs_sweeps: 3000,
        gibbs_burn_in: 500,
    }
}

fn summary_stats(reports: &[dpsep::RunReport], name: &str) -> (f64, f64, f64) {
    let rows: Vec<_> = reports.iter().filter(|r| r.method == name).collect();
    assert_eq!(rows.len(), 5, "expected 5 runs of {name}");
    let k = rows.len() as f64;
    (
        rows.iter().map(|r| r.f_norms.mean).sum::<f64>() / k,
        rows.iter().map(|r| r.f_norms.cov).sum::<f64>() / k,
        rows.iter().map(|r| r.f_norms.avg).sum::<f64>() / k,
    )
}

/// Criteria 3, 4 and 10 share one experiment-scale sweep: the Table-style
/// orderings over methods, the clipping-norm monotonicity, and byte-level
/// determinism of the emitted results.
#[test]
fn criterion_03_04_10_table_orderings_and_determinism() {
    let watch = Stopwatch::start();
    let base = std::env::temp_dir().join("dpsep-acceptance-table");
    let _ = std::fs::remove_dir_all(&base);
    let cfg = table_config(base.join("first"));
    let outcome = run_experiment(&cfg).unwrap();
    assert!(outcome.failed.is_empty(), "runs failed: {:?}", outcome.failed);

    // Eight method rows in the summary.
    let summary = std::fs::read_to_string(&outcome.summary_csv).unwrap();
    assert_eq!(summary.lines().count(), 2 + 8);

    let (_, _, ep_avg) = summary_stats(&outcome.reports, "ep");
    let (sep_mean, _, sep_avg) = summary_stats(&outcome.reports, "sep");
    let (c20_mean, _, _) = summary_stats(&outcome.reports, "sep-clipped-c20");
    let (c10_mean, _, _) = summary_stats(&outcome.reports, "sep-clipped-c10");
    let (c1_mean, _, c1_avg) = summary_stats(&outcome.reports, "sep-clipped-c1");
    let (_, _, dp50_avg) = summary_stats(&outcome.reports, "dp-sep-eps50");
    let (_, _, dp5_avg) = summary_stats(&outcome.reports, "dp-sep-eps5");
    let (_, _, dp1_avg) = summary_stats(&outcome.reports, "dp-sep-eps1");

    // Criterion 3: baseline quality and orderings.
    assert!(sep_avg < 0.5, "sep avg F-norm {sep_avg} >= 0.5");
    assert!(ep_avg < 0.5, "ep avg F-norm {ep_avg} >= 0.5");
    assert!(
        sep_avg < c1_avg,
        "sep {sep_avg} not below clipped C=1 {c1_avg}"
    );
    assert!(
        dp50_avg < dp5_avg && dp5_avg < dp1_avg,
        "privacy ordering violated: {dp50_avg} / {dp5_avg} / {dp1_avg}"
    );
    // Achieved epsilon within budget on every private row.
    for report in outcome.reports.iter().filter(|r| r.method.starts_with("dp-sep")) {
        let configured = report.config.privacy.as_ref().unwrap().epsilon.unwrap();
        let (achieved, _) = report.achieved_privacy.unwrap();
        assert!(achieved <= configured, "achieved {achieved} > configured {configured}");
    }
    pass(
        "03 [table orderings]",
        format!(
            "sep {sep_avg:.4} < clipped-C1 {c1_avg:.4}; dp-sep avg {dp50_avg:.2} < {dp5_avg:.2} < {dp1_avg:.2}"
        ),
        &watch,
    );

    // Criterion 4: clipping monotonicity on the mean F-norm.
    assert!(
        c20_mean < c10_mean && c10_mean < c1_mean,
        "clip ordering violated: {c20_mean} / {c10_mean} / {c1_mean}"
    );
    assert!(sep_mean <= c20_mean + 1e-9);
    pass(
        "04 [clipping monotonicity]",
        format!("mean-F {c20_mean:.4} < {c10_mean:.4} < {c1_mean:.4}"),
        &watch,
    );

    // Criterion 10: the full sweep is a pure function of the config.
    let cfg2 = table_config(base.join("second"));
    let outcome2 = run_experiment(&cfg2).unwrap();
    let a = std::fs::read(&outcome.results_csv).unwrap();
    let b = std::fs::read(&outcome2.results_csv).unwrap();
    assert_eq!(a, b, "results.csv bytes differ between executions");
    pass(
        "10 [determinism]",
        format!("{} result bytes identical across executions", a.len()),
        &watch,
    );
}

/// Criterion 5 — the analytic bound collapses to exactly zero without noise
/// under the no-repair convention.
#[test]
fn criterion_05_bound_zero_limit() {
    let watch = Stopwatch::start();
    let mut r = rng(505);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let d = 1 + case % 6;
        let q = random_proper(d, 1.5, &mut r);
        let rho = min_eigenvalue(q.lambda());
        match expected_kl_bound(&BoundInputs {
            q,
            sigma1: 0.0,
            sigma2: 0.0,
            rho,
            m_tail: 0.0,
        })
        .unwrap()
        {
            BoundOutcome::Applicable { bound, confidence } => {
                assert!(bound.abs() <= 1e-9, "case {case}: bound {bound}");
                assert_eq!(confidence, 1.0);
                worst = worst.max(bound.abs());
            }
            other => panic!("case {case}: {other:?}"),
        }
    }
    pass(
        "05 [zero-noise bound limit]",
        format!("50 instances, worst |bound| {worst:.2e} <= 1e-9"),
        &watch,
    );
}

/// Criterion 6 — bound dominance over the Monte-Carlo estimate whenever the
/// bound is applicable (20 posteriors across d in {1, 2, 4}, both noise
/// scales, 1e5 samples each).
#[test]
fn criterion_06_bound_dominance() {
    let watch = Stopwatch::start();
    let mut r = rng(606);
    let mut applicable = 0usize;
    let mut total = 0usize;
    let mut qs: Vec<GaussianNat> = Vec::new();
    for &d in &[1usize, 2, 4] {
        for _ in 0..7 {
            qs.push(random_proper(d, 1.0, &mut r));
        }
    }
    for (idx, q) in qs.iter().take(20).enumerate() {
        for &sigma in &[0.001, 0.01] {
            total += 1;
            let d = q.dim();
            let outcome = expected_kl_bound(&BoundInputs {
                q: q.clone(),
                sigma1: sigma,
                sigma2: sigma,
                rho: 1e-6,
                m_tail: default_m_tail(d, sigma, 3.0),
            })
            .unwrap();
            if let BoundOutcome::Applicable { bound, .. } = outcome {
                applicable += 1;
                let mc = mc_expected_kl(q, sigma, sigma, 1e-6, 100_000, 7000 + idx as u64).unwrap();
                assert!(
                    bound >= mc.estimate - 3.0 * mc.stderr,
                    "instance {idx} sigma {sigma}: bound {bound} below mc {} +- {}",
                    mc.estimate,
                    mc.stderr
                );
            }
        }
    }
    assert!(applicable > 0, "no applicable instance among {total}");
    pass(
        "06 [bound dominance]",
        format!("{applicable}/{total} applicable, all dominate the MC estimate"),
        &watch,
    );
}

/// Criterion 7 — the clipped-posterior KL closed form equals the directly
/// constructed KL within 1e-9 on 100 random instances.
#[test]
fn criterion_07_clipped_kl_equivalence() {
    let watch = Stopwatch::start();
    let mut r = rng(707);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let d = 1 + case % 5;
        let q = random_proper(d, 2.0, &mut r);
        let c = 0.2 + 3.0 * r.gen::<f64>();
        let closed = clipped_sep_kl(&q, c).unwrap();
        let direct = kl_gaussian(&q, &clipped_posterior(&q, c)).unwrap();
        let err = (closed - direct).abs();
        assert!(
            err <= 1e-9 * (1.0 + direct.abs()),
            "case {case}: {closed} vs {direct}"
        );
        worst = worst.max(err / (1.0 + direct.abs()));
    }
    pass(
        "07 [clipped-KL closed form]",
        format!("100 instances, worst relative gap {worst:.2e} <= 1e-9"),
        &watch,
    );
}

/// Criterion 8 — accountant sanity: single-invocation calibration brackets
/// the classical Gaussian-mechanism noise level, and 200 randomized
/// monotonicity trials hold.
#[test]
fn criterion_08_accountant_sanity() {
    let watch = Stopwatch::start();
    let classical = (2.0 * (1.25f64 / 1e-5).ln()).sqrt() / 1.0;
    let sigma = calibrate_sigma(1.0, 1e-5, 1.0, 1).unwrap();
    assert!(
        sigma >= 0.5 * classical && sigma <= 1.5 * classical,
        "sigma {sigma} outside [{}, {}]",
        0.5 * classical,
        1.5 * classical
    );

    let mut r = rng(808);
    for _ in 0..200 {
        let s = 0.4 * (1.0 + 20.0 * r.gen::<f64>());
        let q = if r.gen::<f64>() < 0.25 {
            1.0
        } else {
            10f64.powf(-4.0 + 3.0 * r.gen::<f64>())
        };
        let steps = 1 + (r.gen::<f64>() * 1e4) as u64;
        let delta = 10f64.powf(-7.0 + 4.0 * r.gen::<f64>());
        let base = epsilon_of(s, q, steps, delta).unwrap();
        assert!(epsilon_of(s * 1.4, q, steps, delta).unwrap() <= base + 1e-12);
        assert!(epsilon_of(s, q, steps * 3, delta).unwrap() >= base - 1e-12);
        if q < 0.5 {
            assert!(epsilon_of(s, (2.0 * q).min(1.0), steps, delta).unwrap() >= base - 1e-12);
        }
    }
    pass(
        "08 [accountant sanity]",
        format!(
            "sigma {sigma:.2} within [0.5, 1.5] x classical {classical:.2}; 200 monotonicity trials"
        ),
        &watch,
    );
}

/// Criterion 9 — the tilted moment match against a 1e6-point deterministic
/// QMC oracle on 10 mixed instances, plus conjugate exactness at J = 1.
#[test]
fn criterion_09_moment_matching_oracle() {
    let watch = Stopwatch::start();
    let mut r = rng(909);
    let mut seed = 300u64;
    for case in 0..10 {
        let j = 1 + (case % 3);
        let d = 1 + ((case / 3) % 3);
        let model = MoGModel {
            j,
            d,
            noise_sd: 0.5,
            weights: vec![1.0 / j as f64; j],
            prior_mean: vec![0.0; d],
            prior_var: 1.0,
        };
        let cavity = random_cavity(j, d, seed);
        seed += 1;
        let anchor = cavity[(seed as usize) % j].to_moments().unwrap().mu;
        let x = DVector::from_fn(d, |k, _| anchor[k] + 0.8 * r.sample::<f64, _>(StandardNormal));
        let got = tilted_moments(&cavity, &x, &model).unwrap();
        let cav_moments: Vec<GaussianMoments> =
            cavity.iter().map(|c| c.to_moments().unwrap()).collect();
        let oracle = qmc_tilted_oracle(&cav_moments, &x, &model, 1_000_000);
        for b in 0..j {
            let got_mean = DMatrix::from_fn(d, 1, |i, _| got.matched[b].mu[i]);
            let want_mean = DMatrix::from_fn(d, 1, |i, _| oracle[b].0[i]);
            assert_entries_close(&got_mean, &want_mean, 1e-3, &format!("case {case} mean[{b}]"));
            assert_entries_close(
                &got.matched[b].sigma,
                &oracle[b].1,
                1e-3,
                &format!("case {case} cov[{b}]"),
            );
        }
    }

    // Conjugate exactness at J = 1.
    let model = MoGModel {
        j: 1,
        d: 3,
        noise_sd: 0.5,
        weights: vec![1.0],
        prior_mean: vec![0.0; 3],
        prior_var: 1.0,
    };
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let cavity = random_cavity(1, 3, r.gen());
        let x = DVector::from_fn(3, |_, _| r.sample::<f64, _>(StandardNormal));
        let got = tilted_moments(&cavity, &x, &model).unwrap();
        let s2 = 0.25;
        let cav = cavity[0].to_moments().unwrap();
        let cav_prec = Cholesky::new(cav.sigma.clone()).unwrap().inverse();
        let prec = &cav_prec + DMatrix::identity(3, 3) / s2;
        let cov = Cholesky::new(prec).unwrap().inverse();
        let mean = &cov * (&cav_prec * &cav.mu + &x / s2);
        let err = (&got.matched[0].mu - &mean)
            .norm()
            .max((&got.matched[0].sigma - &cov).norm());
        assert!(err <= 1e-8, "conjugate gap {err}");
        worst = worst.max(err);
    }
    pass(
        "09 [moment matching]",
        format!("10 QMC instances within 1e-3; conjugate gap {worst:.2e} <= 1e-8"),
        &watch,
    );
}

//! The training loops: EP with per-datapoint site factors, and the SEP family
//! (plain, clipped, differentially private) built on a single shared update
//! pipeline.
//!
//! Every SEP-family step forms the damped posterior candidate
//!
//! `theta_new = (gamma/N) theta_site + (N - gamma/N) theta_f + theta_0`
//!
//! optionally clips/privatizes/repairs it, and re-derives the global factor
//! as `theta_f = (theta_new - theta_0) / N`, which keeps the identity
//! `theta = N theta_f + theta_0` exact after every inclusion. Plain SEP and
//! clipped SEP are the same pipeline with the privacy stages disabled, so
//! DP-SEP with `sigma = 0` and an inactive clip norm reproduces SEP bitwise.
//! The released quantity is `theta_new`, whose neighbouring-dataset change is
//! bounded by `2 gamma C / N` once the site factor is clipped to `C`.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accountant::{epsilon_of, privatize, sensitivity, PrivacySpec};
use crate::error::{Error, Result};
use crate::gaussian::{combine, psd_project, ClipMode, ClipPolicy, GaussianNat};
use crate::mog::{tilted_moments, Dataset, MeansPosterior, MoGModel};
use crate::seeding::derive_seed;

/// Which training loop to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ep,
    Sep,
    ClippedSep,
    DpSep,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Ep => "ep",
            Method::Sep => "sep",
            Method::ClippedSep => "clipped-sep",
            Method::DpSep => "dp-sep",
        };
        f.write_str(s)
    }
}

fn default_rho() -> f64 {
    1e-6
}

fn default_init_jitter() -> f64 {
    0.1
}

/// Configuration of one engine run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub method: Method,
    /// Number of full passes T.
    pub iterations: usize,
    /// Damping gamma; the per-step rate is gamma / N.
    pub damping: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<ClipPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacySpec>,
    pub seed: u64,
    /// Store a posterior snapshot every this many steps; 0 disables tracing.
    #[serde(default)]
    pub trace_every: usize,
    /// Spectrum floor used when repairing noised precision blocks.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Standard deviation of the seeded perturbation applied to the initial
    /// posterior means. A posterior whose component blocks are exactly
    /// identical is a fixed point of the mixture updates (responsibilities
    /// stay uniform and the components never separate), so the tie must be
    /// broken at initialization. The perturbation is carried by the factors,
    /// keeping the factorization identities exact; 0 disables it.
    #[serde(default = "default_init_jitter")]
    pub init_jitter_sd: f64,
    /// EP refines sites by full replacement unless this damping is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ep_damping: Option<f64>,
}

impl EngineConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if !(self.damping > 0.0) {
            return Err(Error::Config("damping must be positive".into()));
        }
        if self.damping / n as f64 > 1.0 {
            return Err(Error::Config(format!(
                "damping {} exceeds the dataset size {n}",
                self.damping
            )));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Config("rho must be positive".into()));
        }
        if !(self.init_jitter_sd >= 0.0) {
            return Err(Error::Config("init_jitter_sd must be nonnegative".into()));
        }
        match self.method {
            Method::DpSep => {
                if self.clip.is_none() || self.privacy.is_none() {
                    return Err(Error::Config(
                        "dp-sep requires both clip and privacy".into(),
                    ));
                }
            }
            Method::ClippedSep => {
                if self.clip.is_none() {
                    return Err(Error::Config("clipped-sep requires clip".into()));
                }
                if self.privacy.is_some() {
                    return Err(Error::Config("clipped-sep forbids privacy".into()));
                }
            }
            Method::Ep | Method::Sep => {
                if self.privacy.is_some() {
                    return Err(Error::Config(format!("{} forbids privacy", self.method)));
                }
            }
        }
        if let Some(p) = &self.privacy {
            p.validate()?;
            let want_steps = self.iterations as u64 * n as u64;
            if p.steps != want_steps {
                return Err(Error::Config(format!(
                    "privacy steps {} must equal iterations * n = {want_steps}",
                    p.steps
                )));
            }
            if (p.sampling_rate * n as f64 - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "sampling_rate {} must equal 1/n",
                    p.sampling_rate
                )));
            }
        }
        Ok(())
    }
}

/// Posterior snapshot stored along the trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSnapshot {
    pub step: u64,
    pub posterior: MeansPosterior,
}

/// Everything a single engine run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub method: Method,
    pub seed: u64,
    pub posterior: MeansPosterior,
    /// Skipped updates (cavity or posterior would have lost properness).
    pub failures: u64,
    /// Gaussian-mechanism invocations consumed.
    pub noise_invocations: u64,
    /// Achieved `(epsilon, delta)` from the accountant, DP-SEP only.
    pub achieved_privacy: Option<(f64, f64)>,
    pub trace: Vec<TraceSnapshot>,
    pub wall_ms: u64,
    /// Final global factor (SEP family only), for diagnostics.
    pub final_factor: Option<Vec<GaussianNat>>,
    /// Final per-site factors (EP only), for diagnostics.
    pub final_sites: Option<Vec<Vec<GaussianNat>>>,
}

/// Runs the configured engine on the dataset.
pub fn run(data: &Dataset, model: &MoGModel, cfg: &EngineConfig) -> Result<RunOutcome> {
    model.validate()?;
    if data.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    if data.dim() != model.d {
        return Err(Error::DimensionMismatch {
            expected: model.d,
            got: data.dim(),
        });
    }
    cfg.validate(data.len())?;
    match cfg.method {
        Method::Ep => ep_run(data, model, cfg),
        Method::Sep | Method::ClippedSep | Method::DpSep => sep_family_run(data, model, cfg),
    }
}

/// Weighted linear combination applied block-wise across components.
fn blocks_lincomb(terms: &[(f64, &[GaussianNat])]) -> Result<Vec<GaussianNat>> {
    let j = terms[0].1.len();
    (0..j)
        .map(|b| {
            let row: Vec<(f64, &GaussianNat)> =
                terms.iter().map(|(w, blocks)| (*w, &blocks[b])).collect();
            combine(&row)
        })
        .collect()
}

fn blocks_sub(a: &[GaussianNat], b: &[GaussianNat]) -> Result<Vec<GaussianNat>> {
    blocks_lincomb(&[(1.0, a), (-1.0, b)])
}

fn blocks_proper(blocks: &[GaussianNat]) -> bool {
    blocks.iter().all(GaussianNat::is_proper)
}

/// Clips a J-block factor. Under the joint mode the concatenation of every
/// block's `(eta, lambda)` counts as one vector; per-block mode clips each
/// block's eta and lambda separately.
pub fn blocks_clip(blocks: &[GaussianNat], policy: &ClipPolicy) -> Vec<GaussianNat> {
    match policy.mode {
        ClipMode::Joint => {
            let norm_sq: f64 = blocks
                .iter()
                .map(|g| g.eta().norm_squared() + g.lambda().norm_squared())
                .sum();
            match crate::gaussian::clip_scale(norm_sq.sqrt(), policy.c) {
                None => blocks.to_vec(),
                Some(s) => blocks
                    .iter()
                    .map(|g| {
                        GaussianNat::new(g.eta() * s, g.lambda() * s).expect("same dims")
                    })
                    .collect(),
            }
        }
        ClipMode::PerBlock => blocks.iter().map(|g| g.clip(policy)).collect(),
    }
}

/// Initial factor blocks carrying a seeded mean perturbation: block b holds
/// `eta = prior_lambda zeta_b / n` with `zeta_b ~ N(0, jitter^2 I)`, so the
/// initial posterior is the prior with its component means shifted by
/// `zeta_b` while every factorization identity stays exact.
fn init_factor_blocks(
    prior: &[GaussianNat],
    n: usize,
    d: usize,
    jitter_sd: f64,
    seed: u64,
) -> Vec<GaussianNat> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init-jitter", 0));
    prior
        .iter()
        .map(|block| {
            let zeta = DVector::from_fn(d, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                jitter_sd * z
            });
            let eta = block.lambda() * zeta / n as f64;
            GaussianNat::new(eta, nalgebra::DMatrix::zeros(d, d)).expect("square")
        })
        .collect()
}

struct PassDriver {
    order: Vec<usize>,
    rng: ChaCha8Rng,
}

impl PassDriver {
    fn new(n: usize, seed: u64) -> Self {
        PassDriver {
            order: (0..n).collect(),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "visit-order", 0)),
        }
    }

    /// Uniform visiting permutation for one pass (sampling without
    /// replacement within the pass).
    fn next_pass(&mut self) -> &[usize] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

fn sep_family_run(data: &Dataset, model: &MoGModel, cfg: &EngineConfig) -> Result<RunOutcome> {
    let started = std::time::Instant::now();
    let n = data.len();
    let j = model.j;
    let dp = cfg.method == Method::DpSep;

    let privacy = match (&cfg.privacy, dp) {
        (Some(p), true) => {
            let p = p.clone();
            if p.sigma.is_none() {
                return Err(Error::CalibrationMissing);
            }
            Some(p)
        }
        _ => None,
    };
    let sigma = privacy.as_ref().map(|p| p.sigma.unwrap()).unwrap_or(0.0);
    let delta_sens = privacy
        .as_ref()
        .map(|p| sensitivity(cfg.damping, p.clip_c, n as u64))
        .unwrap_or(0.0);

    // The prior's natural parameters must respect the clip bound before any
    // DP-SEP release happens.
    let raw_prior: Vec<GaussianNat> = vec![model.prior_natural(); j];
    let prior = match (&cfg.clip, dp) {
        (Some(policy), true) => blocks_clip(&raw_prior, policy),
        _ => raw_prior,
    };

    let mut factor = init_factor_blocks(&prior, n, model.d, cfg.init_jitter_sd, cfg.seed);
    if let (Some(policy), true) = (&cfg.clip, dp) {
        factor = blocks_clip(&factor, policy);
    }
    let mut posterior = include_posterior(&factor, &prior, n)?;
    debug_assert!(blocks_proper(&posterior));

    let mut driver = PassDriver::new(n, cfg.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "noise", 0));

    let mut failures = 0u64;
    let mut noise_invocations = 0u64;
    let mut trace = Vec::new();
    let mut step = 0u64;

    for pass in 0..cfg.iterations {
        let mut failed_this_pass = 0usize;
        let order: Vec<usize> = driver.next_pass().to_vec();
        for &i in &order {
            step += 1;
            let x = data.point(i);
            match sep_step(
                &posterior, &factor, &prior, &x, model, cfg, n, sigma, delta_sens,
                &mut noise_rng, &mut noise_invocations,
            )? {
                Some((new_factor, new_posterior)) => {
                    factor = new_factor;
                    posterior = new_posterior;
                }
                None => {
                    failures += 1;
                    failed_this_pass += 1;
                }
            }
            if cfg.trace_every > 0 && step % cfg.trace_every as u64 == 0 {
                trace.push(TraceSnapshot {
                    step,
                    posterior: MeansPosterior {
                        components: posterior.clone(),
                    },
                });
            }
        }
        if failed_this_pass * 2 > n {
            return Err(Error::DegenerateRun {
                pass,
                failed: failed_this_pass,
                total: n,
            });
        }
    }

    // sigma = 0 is the no-noise diagnostic setting and carries no finite
    // epsilon, so nothing is reported for it.
    let achieved_privacy = match &privacy {
        Some(p) if sigma > 0.0 => {
            let eps = epsilon_of(sigma, p.sampling_rate, p.steps, p.delta)?;
            Some((eps, p.delta))
        }
        _ => None,
    };

    Ok(RunOutcome {
        method: cfg.method,
        seed: cfg.seed,
        posterior: MeansPosterior {
            components: posterior,
        },
        failures,
        noise_invocations,
        achieved_privacy,
        trace,
        wall_ms: started.elapsed().as_millis() as u64,
        final_factor: Some(factor),
        final_sites: None,
    })
}

/// The damped posterior candidate one site visit produces, before any noise:
///
/// `theta_new = (gamma/N) theta_site + (N - gamma/N) theta_f + theta_0`
///
/// with the site factor clipped under `clip` beforehand. This is exactly the
/// quantity the privacy mechanism releases, so its neighbouring-dataset
/// change is at most `2 gamma C / N` in the concatenated block norm.
/// `None` means the visit must be skipped (improper cavity or degenerate
/// moment match).
pub fn released_update(
    posterior: &[GaussianNat],
    factor: &[GaussianNat],
    prior: &[GaussianNat],
    x: &DVector<f64>,
    model: &MoGModel,
    clip: Option<&ClipPolicy>,
    damping: f64,
    n: usize,
) -> Result<Option<Vec<GaussianNat>>> {
    let gamma_n = damping / n as f64;
    let cavity = blocks_sub(posterior, factor)?;
    if !blocks_proper(&cavity) {
        return Ok(None);
    }
    let tilted = match tilted_moments(&cavity, x, model) {
        Ok(t) => t,
        Err(Error::NotPositiveDefinite(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut site = Vec::with_capacity(model.j);
    for (b, matched) in tilted.matched.iter().enumerate() {
        let nat = match matched.to_natural() {
            Ok(v) => v,
            Err(Error::NotPositiveDefinite(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        site.push(combine(&[(1.0, &nat), (-1.0, &cavity[b])])?);
    }
    if let Some(policy) = clip {
        site = blocks_clip(&site, policy);
    }
    let theta_new = blocks_lincomb(&[
        (gamma_n, site.as_slice()),
        (n as f64 - gamma_n, factor),
        (1.0, prior),
    ])?;
    Ok(Some(theta_new))
}

/// Flat L2 norm of the concatenated `(eta, lambda)` entries of all blocks.
pub fn blocks_joint_norm(blocks: &[GaussianNat]) -> f64 {
    blocks
        .iter()
        .map(|g| g.eta().norm_squared() + g.lambda().norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// One SEP-family site visit. Returns the committed `(factor, posterior)`
/// pair, or `None` when the update had to be skipped to preserve properness.
#[allow(clippy::too_many_arguments)]
fn sep_step(
    posterior: &[GaussianNat],
    factor: &[GaussianNat],
    prior: &[GaussianNat],
    x: &DVector<f64>,
    model: &MoGModel,
    cfg: &EngineConfig,
    n: usize,
    sigma: f64,
    delta_sens: f64,
    noise_rng: &mut ChaCha8Rng,
    noise_invocations: &mut u64,
) -> Result<Option<(Vec<GaussianNat>, Vec<GaussianNat>)>> {
    let mut theta_new = match released_update(
        posterior,
        factor,
        prior,
        x,
        model,
        cfg.clip.as_ref(),
        cfg.damping,
        n,
    )? {
        Some(t) => t,
        None => return Ok(None),
    };

    if sigma > 0.0 {
        *noise_invocations += 1;
        theta_new = theta_new
            .iter()
            .map(|block| privatize(block, delta_sens, sigma, noise_rng))
            .collect();
        theta_new = theta_new
            .into_iter()
            .map(|block| {
                let repaired = psd_project(block.lambda(), cfg.rho);
                GaussianNat::new(block.eta().clone(), repaired)
            })
            .collect::<Result<Vec<_>>>()?;
    }

    let mut factor_cand = blocks_lincomb(&[
        (1.0 / n as f64, theta_new.as_slice()),
        (-1.0 / n as f64, prior),
    ])?;
    if let Some(policy) = &cfg.clip {
        factor_cand = blocks_clip(&factor_cand, policy);
    }
    let posterior_cand = include_posterior(&factor_cand, prior, n)?;
    if !blocks_proper(&posterior_cand) {
        return Ok(None);
    }
    Ok(Some((factor_cand, posterior_cand)))
}

/// Inclusion: `theta = N theta_f + theta_0`, block-wise.
fn include_posterior(
    factor: &[GaussianNat],
    prior: &[GaussianNat],
    n: usize,
) -> Result<Vec<GaussianNat>> {
    blocks_lincomb(&[(n as f64, factor), (1.0, prior)])
}

fn ep_run(data: &Dataset, model: &MoGModel, cfg: &EngineConfig) -> Result<RunOutcome> {
    let started = std::time::Instant::now();
    let n = data.len();
    let j = model.j;
    let prior: Vec<GaussianNat> = vec![model.prior_natural(); j];
    // Every site carries an equal 1/n share of the tie-breaking perturbation
    // so the prior-plus-sites identity starts exact.
    let site_init = init_factor_blocks(&prior, n, model.d, cfg.init_jitter_sd, cfg.seed);
    let mut posterior = include_posterior(&site_init, &prior, n)?;
    let mut sites: Vec<Vec<GaussianNat>> = vec![site_init; n];

    let mut driver = PassDriver::new(n, cfg.seed);
    let mut failures = 0u64;
    let mut trace = Vec::new();
    let mut step = 0u64;

    for pass in 0..cfg.iterations {
        let mut failed_this_pass = 0usize;
        let order: Vec<usize> = driver.next_pass().to_vec();
        for &i in &order {
            step += 1;
            let x = data.point(i);
            let committed = (|| -> Result<Option<(Vec<GaussianNat>, Vec<GaussianNat>)>> {
                let cavity = blocks_sub(&posterior, &sites[i])?;
                if !blocks_proper(&cavity) {
                    return Ok(None);
                }
                let tilted = match tilted_moments(&cavity, &x, model) {
                    Ok(t) => t,
                    Err(Error::NotPositiveDefinite(_)) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let mut site_new = Vec::with_capacity(j);
                for (b, matched) in tilted.matched.iter().enumerate() {
                    let nat = match matched.to_natural() {
                        Ok(v) => v,
                        Err(Error::NotPositiveDefinite(_)) => return Ok(None),
                        Err(e) => return Err(e),
                    };
                    site_new.push(combine(&[(1.0, &nat), (-1.0, &cavity[b])])?);
                }
                if let Some(gamma) = cfg.ep_damping {
                    let rate = gamma / n as f64;
                    site_new = blocks_lincomb(&[
                        (1.0 - rate, sites[i].as_slice()),
                        (rate, site_new.as_slice()),
                    ])?;
                }
                let q_cand = blocks_lincomb(&[(1.0, cavity.as_slice()), (1.0, site_new.as_slice())])?;
                if !blocks_proper(&q_cand) {
                    return Ok(None);
                }
                Ok(Some((site_new, q_cand)))
            })()?;
            match committed {
                Some((site_new, q_cand)) => {
                    sites[i] = site_new;
                    posterior = q_cand;
                }
                None => {
                    failures += 1;
                    failed_this_pass += 1;
                }
            }
            if cfg.trace_every > 0 && step % cfg.trace_every as u64 == 0 {
                trace.push(TraceSnapshot {
                    step,
                    posterior: MeansPosterior {
                        components: posterior.clone(),
                    },
                });
            }
        }
        if failed_this_pass * 2 > n {
            return Err(Error::DegenerateRun {
                pass,
                failed: failed_this_pass,
                total: n,
            });
        }
    }

    Ok(RunOutcome {
        method: Method::Ep,
        seed: cfg.seed,
        posterior: MeansPosterior {
            components: posterior,
        },
        failures,
        noise_invocations: 0,
        achieved_privacy: None,
        trace,
        wall_ms: started.elapsed().as_millis() as u64,
        final_factor: None,
        final_sites: Some(sites),
    })
}

//! Privacy accounting: sensitivity of the released natural parameters, the
//! Gaussian mechanism on `(eta, lambda)`, and a subsampled-Gaussian Renyi-DP
//! accountant with noise calibration.
//!
//! The accountant returns *upper bounds* on the RDP of the Gaussian mechanism
//! applied to a without-replacement subsample. Integer orders use the
//! moment-style bound
//!
//! `eps(m) <= ln(1 + C(m,2) q^2 min{4(e^{1/s^2}-1), 2 e^{1/s^2}}
//!               + 2 sum_{j=3}^m C(m,j) q^j e^{j(j-1)/(2 s^2)}) / (m - 1)`
//!
//! and fractional orders interpolate the log-moment function on its lower
//! convex hull, which stays a valid upper bound because the true log-moment
//! curve is convex. Every value is additionally capped by the unsubsampled
//! Gaussian RDP `alpha / (2 sigma^2)`, valid by quasi-convexity of the Renyi
//! divergence; at `q = 1` the cap is exact and is returned as-is.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianNat;

/// Largest integer order the moment table is built for when `q < 1`.
const MAX_TABLE_ORDER: usize = 4096;

/// Sigma search window for calibration.
const SIGMA_LO: f64 = 1e-2;
const SIGMA_HI: f64 = 1e4;

/// Default order grid: 1.25, 1.5, 1.75, then 2.0..=64.0 in steps of 0.5,
/// then 128, 256, 512.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75];
    let mut a = 2.0;
    while a <= 64.0 {
        orders.push(a);
        a += 0.5;
    }
    orders.extend_from_slice(&[128.0, 256.0, 512.0]);
    orders
}

/// Everything a differentially private run needs: target budget, mechanism
/// noise, subsampling geometry and clipping. Exactly one of `epsilon` /
/// `sigma` may be absent; `calibrated` fills the missing one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Subsampling rate q = 1/N.
    pub sampling_rate: f64,
    /// Total mechanism invocations, T * N for an engine run.
    pub steps: u64,
    /// Clipping norm C.
    pub clip_c: f64,
    /// Damping gamma.
    pub damping: f64,
}

impl PrivacySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must be in (0,1), got {}", self.delta)));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::Config(format!(
                "sampling_rate must be in (0,1], got {}",
                self.sampling_rate
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if !(self.clip_c > 0.0) {
            return Err(Error::Config(format!("clip_c must be positive, got {}", self.clip_c)));
        }
        if !(self.damping > 0.0) {
            return Err(Error::Config(format!("damping must be positive, got {}", self.damping)));
        }
        match (self.epsilon, self.sigma) {
            (None, None) => Err(Error::Config(
                "one of epsilon or sigma must be given".into(),
            )),
            (Some(e), _) if !(e > 0.0) => {
                Err(Error::Config(format!("epsilon must be positive, got {e}")))
            }
            // sigma = 0 is allowed: it is the no-noise diagnostic setting.
            (_, Some(s)) if !(s >= 0.0) => {
                Err(Error::Config(format!("sigma must be nonnegative, got {s}")))
            }
            _ => Ok(()),
        }
    }

    /// Fills whichever of `epsilon` / `sigma` is absent. A spec with an
    /// explicit positive sigma gets its achieved epsilon recomputed; a zero
    /// sigma carries no finite epsilon.
    pub fn calibrated(&self) -> Result<PrivacySpec> {
        self.validate()?;
        let mut out = self.clone();
        match (self.epsilon, self.sigma) {
            (Some(eps), None) => {
                out.sigma = Some(calibrate_sigma(eps, self.delta, self.sampling_rate, self.steps)?);
            }
            (None, Some(sigma)) if sigma > 0.0 => {
                out.epsilon = Some(epsilon_of(sigma, self.sampling_rate, self.steps, self.delta)?);
            }
            _ => {}
        }
        Ok(out)
    }

    pub fn noise_multiplier(&self) -> Result<f64> {
        self.sigma.ok_or(Error::CalibrationMissing)
    }
}

/// Sensitivity of the released natural parameters: `2 gamma C / N`.
pub fn sensitivity(gamma: f64, c: f64, n: u64) -> f64 {
    2.0 * gamma * c / n as f64
}

/// Gaussian mechanism on natural parameters. Adds iid `N(0, (sigma * delta)^2)`
/// to `eta` and to the upper triangle of `lambda` (diagonal included); the
/// lower triangle mirrors the upper, so the output stays exactly symmetric.
/// `sigma = 0` returns the input unchanged without consuming randomness.
/// The output is not asserted proper; spectrum repair happens downstream.
pub fn privatize<R: Rng>(
    theta: &GaussianNat,
    delta_sens: f64,
    sigma: f64,
    rng: &mut R,
) -> GaussianNat {
    if sigma == 0.0 {
        return theta.clone();
    }
    let scale = sigma * delta_sens;
    let d = theta.dim();
    let mut eta = theta.eta().clone();
    for i in 0..d {
        let z: f64 = rng.sample(StandardNormal);
        eta[i] += scale * z;
    }
    let mut lambda = theta.lambda().clone();
    for i in 0..d {
        for j in i..d {
            let z: f64 = rng.sample(StandardNormal);
            let noise = scale * z;
            lambda[(i, j)] += noise;
            if j != i {
                lambda[(j, i)] = lambda[(i, j)];
            }
        }
    }
    GaussianNat::new(eta, lambda).expect("dimensions preserved")
}

/// RDP curve of a single mechanism invocation over an order grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub values: Vec<f64>,
}

impl RdpCurve {
    /// Evaluates the subsampled-Gaussian bound on every order in the grid.
    pub fn subsampled_gaussian(sigma: f64, q: f64, orders: &[f64]) -> Result<RdpCurve> {
        if orders.is_empty() {
            return Err(Error::Config("order grid is empty".into()));
        }
        if orders.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("orders must be strictly increasing".into()));
        }
        let acct = SubsampledGaussian::new(sigma, q, orders.iter().cloned().fold(0.0, f64::max))?;
        let values = orders
            .iter()
            .map(|&a| acct.rdp(a))
            .collect::<Result<Vec<f64>>>()?;
        Ok(RdpCurve {
            orders: orders.to_vec(),
            values,
        })
    }

    /// Converts `steps` compositions of this curve to `(epsilon, delta)`-DP
    /// via `eps = min_a [steps * eps(a) + ln(1/delta) / (a - 1)]`.
    pub fn to_epsilon(&self, steps: u64, delta: f64) -> f64 {
        let log_inv_delta = (1.0 / delta).ln();
        self.orders
            .iter()
            .zip(&self.values)
            .map(|(&a, &v)| steps as f64 * v + log_inv_delta / (a - 1.0))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Upper bound on the RDP `eps(alpha)` of the Gaussian mechanism with noise
/// multiplier `sigma` on a `q`-subsampled dataset. Exactly `alpha/(2 sigma^2)`
/// at `q = 1`; monotone nonincreasing in `sigma`, nondecreasing in `alpha`
/// and `q`.
pub fn rdp_subsampled_gaussian(sigma: f64, q: f64, alpha: f64) -> Result<f64> {
    SubsampledGaussian::new(sigma, q, alpha)?.rdp(alpha)
}

/// Composes `steps` subsampled-Gaussian invocations over the default order
/// grid and converts to epsilon at the given delta.
pub fn epsilon_of(sigma: f64, q: f64, steps: u64, delta: f64) -> Result<f64> {
    epsilon_of_with_orders(sigma, q, steps, delta, &default_orders())
}

pub fn epsilon_of_with_orders(
    sigma: f64,
    q: f64,
    steps: u64,
    delta: f64,
    orders: &[f64],
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must be in (0,1), got {delta}")));
    }
    Ok(RdpCurve::subsampled_gaussian(sigma, q, orders)?.to_epsilon(steps, delta))
}

/// Smallest noise multiplier on a relative-1e-3 binary-search grid such that
/// `epsilon_of(sigma, q, steps, delta) <= epsilon`. The returned sigma always
/// satisfies the target by construction.
pub fn calibrate_sigma(epsilon: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let eval = |sigma: f64| epsilon_of(sigma, q, steps, delta);
    if eval(SIGMA_HI)? > epsilon {
        return Err(Error::CalibrationOutOfRange {
            epsilon,
            lo: SIGMA_LO,
            hi: SIGMA_HI,
        });
    }
    if eval(SIGMA_LO)? <= epsilon {
        return Ok(SIGMA_LO);
    }
    // lo always fails, hi always satisfies.
    let mut lo = SIGMA_LO;
    let mut hi = SIGMA_HI;
    while hi / lo > 1.0 + 1e-3 {
        let mid = (lo * hi).sqrt();
        if eval(mid)? <= epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Bound evaluator for one `(sigma, q)` pair. Builds the integer log-moment
/// table lazily up to the largest order requested and interpolates on its
/// lower convex hull.
struct SubsampledGaussian {
    sigma: f64,
    q: f64,
    /// Lower convex hull of `(m, L(m))` with the exact anchor `(1, 0)`.
    /// Empty when `q == 1`.
    hull: Vec<(f64, f64)>,
}

impl SubsampledGaussian {
    fn new(sigma: f64, q: f64, max_alpha: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Config(format!("q must be in (0,1], got {q}")));
        }
        if !(max_alpha > 1.0) {
            return Err(Error::UnsupportedOrder(max_alpha));
        }
        if q == 1.0 {
            return Ok(SubsampledGaussian { sigma, q, hull: Vec::new() });
        }
        if max_alpha > MAX_TABLE_ORDER as f64 {
            return Err(Error::UnsupportedOrder(max_alpha));
        }
        let top = (max_alpha.ceil() as usize).max(2);
        let table = log_moment_table(sigma, q, top);
        Ok(SubsampledGaussian {
            sigma,
            q,
            hull: lower_convex_hull(&table),
        })
    }

    fn rdp(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 1.0) {
            return Err(Error::UnsupportedOrder(alpha));
        }
        let gaussian = alpha / (2.0 * self.sigma * self.sigma);
        if self.q == 1.0 {
            return Ok(gaussian);
        }
        let top = self.hull.last().expect("hull nonempty for q < 1").0;
        if alpha > top {
            return Err(Error::UnsupportedOrder(alpha));
        }
        let k = hull_eval(&self.hull, alpha);
        Ok((k / (alpha - 1.0)).min(gaussian))
    }
}

/// `L(m) = ln(1 + C(m,2) q^2 min{4(e^c - 1), 2 e^c} + 2 sum_{j>=3} C(m,j) q^j
/// e^{j(j-1) c / 2})` with `c = 1/sigma^2`, for m = 1..=top (L(1) = 0 exact).
/// All sums run in log space.
fn log_moment_table(sigma: f64, q: f64, top: usize) -> Vec<(f64, f64)> {
    let c = 1.0 / (sigma * sigma);
    let ln_q = q.ln();
    let ln_fact = ln_factorials(top);
    // ln min{4(e^c - 1), 2 e^c}, stable for both tiny and huge c.
    let ln_pair = {
        let a = 4.0f64.ln() + c + (-(-c).exp()).ln_1p();
        let b = 2.0f64.ln() + c;
        a.min(b)
    };

    let mut out = Vec::with_capacity(top);
    out.push((1.0, 0.0));
    let mut terms: Vec<f64> = Vec::with_capacity(top + 1);
    for m in 2..=top {
        terms.clear();
        terms.push(0.0); // the leading 1
        let ln_binom = |j: usize| ln_fact[m] - ln_fact[j] - ln_fact[m - j];
        terms.push(ln_binom(2) + 2.0 * ln_q + ln_pair);
        for j in 3..=m {
            terms.push(
                2.0f64.ln() + ln_binom(j) + j as f64 * ln_q + (j * (j - 1)) as f64 * c / 2.0,
            );
        }
        out.push((m as f64, log_sum_exp(&terms)));
    }
    out
}

fn ln_factorials(top: usize) -> Vec<f64> {
    let mut v = vec![0.0; top + 1];
    for k in 2..=top {
        v[k] = v[k - 1] + (k as f64).ln();
    }
    v
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Lower convex hull of points sorted by x (Andrew's monotone chain).
fn lower_convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Piecewise-linear evaluation on the hull.
fn hull_eval(hull: &[(f64, f64)], x: f64) -> f64 {
    debug_assert!(x >= hull[0].0 && x <= hull[hull.len() - 1].0);
    let idx = hull.partition_point(|p| p.0 < x);
    if idx == 0 {
        return hull[0].1;
    }
    if idx == hull.len() {
        return hull[hull.len() - 1].1;
    }
    let (x0, y0) = hull[idx - 1];
    let (x1, y1) = hull[idx];
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Brute-force lambda-max helper shared by sensitivity diagnostics.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

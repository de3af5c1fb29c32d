//! Exponential-family Gaussian algebra in natural-parameter form.
//!
//! Everything downstream (the inference engines, the privacy mechanism, the
//! KL bound evaluator) manipulates Gaussians through the natural parameters
//! `(eta, lambda) = (Sigma^-1 mu, Sigma^-1)`, under which factor products and
//! quotients are plain linear combinations. Values here are immutable after
//! construction and `lambda` is kept exactly symmetric.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative slack used when deciding whether a clip is a no-op. Absorbs the
/// rounding of the norm computation so that clipping is exactly idempotent.
const CLIP_SLACK: f64 = 1e-12;

/// A Gaussian in natural parameters. `lambda` is symmetric by construction;
/// it is *not* required to be positive definite, because site factors are
/// routinely improper. Properness is a queryable property, not an invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNat {
    eta: DVector<f64>,
    lambda: DMatrix<f64>,
}

/// A Gaussian in moment parameters, with `sigma` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// How natural parameters are clipped to norm `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClipMode {
    /// One scale for the concatenation of `eta` and the full vectorized
    /// `lambda` (L2 of the flat vector, i.e. sqrt(|eta|^2 + |lambda|_F^2)).
    Joint,
    /// `eta` clipped to L2 norm `c` and `lambda` to Frobenius norm `c`
    /// independently.
    PerBlock,
}

/// Clipping policy: positive norm bound plus the mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipPolicy {
    pub c: f64,
    pub mode: ClipMode,
}

impl ClipPolicy {
    pub fn joint(c: f64) -> Result<Self> {
        Self::new(c, ClipMode::Joint)
    }

    pub fn per_block(c: f64) -> Result<Self> {
        Self::new(c, ClipMode::PerBlock)
    }

    pub fn new(c: f64, mode: ClipMode) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::Config(format!("clip norm must be positive, got {c}")));
        }
        Ok(ClipPolicy { c, mode })
    }
}

impl GaussianNat {
    /// Builds a natural-parameter Gaussian. `lambda` is symmetrized as
    /// `(S + S^T) / 2` so that the stored matrix is bitwise symmetric.
    pub fn new(eta: DVector<f64>, lambda: DMatrix<f64>) -> Result<Self> {
        let d = eta.len();
        if lambda.nrows() != d || lambda.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: lambda.nrows(),
            });
        }
        let lambda = symmetrize(&lambda);
        Ok(GaussianNat { eta, lambda })
    }

    /// Zero natural parameters (the uniform factor).
    pub fn zeros(d: usize) -> Self {
        GaussianNat {
            eta: DVector::zeros(d),
            lambda: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    /// A Gaussian is proper when `lambda` is positive definite; the check is
    /// Cholesky success.
    pub fn is_proper(&self) -> bool {
        Cholesky::new(self.lambda.clone()).is_some()
    }

    /// Converts to moment parameters: `sigma = lambda^-1`, `mu = sigma eta`.
    pub fn to_moments(&self) -> Result<GaussianMoments> {
        let chol = Cholesky::new(self.lambda.clone())
            .ok_or(Error::NotPositiveDefinite("lambda"))?;
        let sigma = symmetrize(&chol.inverse());
        let mu = &sigma * &self.eta;
        Ok(GaussianMoments { mu, sigma })
    }

    /// Clips the natural parameters to the policy's norm bound. Direction is
    /// preserved (the output is a nonnegative scalar multiple per block) and
    /// inputs already within the bound are returned unchanged bitwise.
    pub fn clip(&self, policy: &ClipPolicy) -> Self {
        match policy.mode {
            ClipMode::Joint => {
                let norm2 = self.eta.norm_squared() + self.lambda.norm_squared();
                let scale = clip_scale(norm2.sqrt(), policy.c);
                match scale {
                    None => self.clone(),
                    Some(s) => GaussianNat {
                        eta: &self.eta * s,
                        lambda: &self.lambda * s,
                    },
                }
            }
            ClipMode::PerBlock => {
                let eta = match clip_scale(self.eta.norm(), policy.c) {
                    None => self.eta.clone(),
                    Some(s) => &self.eta * s,
                };
                let lambda = match clip_scale(self.lambda.norm(), policy.c) {
                    None => self.lambda.clone(),
                    Some(s) => &self.lambda * s,
                };
                GaussianNat { eta, lambda }
            }
        }
    }

    /// Flat L2 norm of the concatenated `(eta, vec(lambda))` vector.
    pub fn joint_norm(&self) -> f64 {
        (self.eta.norm_squared() + self.lambda.norm_squared()).sqrt()
    }
}

impl GaussianMoments {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigma.nrows(),
            });
        }
        let sigma = symmetrize(&sigma);
        if Cholesky::new(sigma.clone()).is_none() {
            return Err(Error::NotPositiveDefinite("sigma"));
        }
        Ok(GaussianMoments { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Converts to natural parameters: `lambda = sigma^-1`, `eta = lambda mu`.
    /// The result is proper by construction.
    pub fn to_natural(&self) -> Result<GaussianNat> {
        let chol = Cholesky::new(self.sigma.clone())
            .ok_or(Error::NotPositiveDefinite("sigma"))?;
        let lambda = symmetrize(&chol.inverse());
        let eta = &lambda * &self.mu;
        Ok(GaussianNat { eta, lambda })
    }
}

/// `(S + S^T) / 2`, bitwise symmetric.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        out[(i, i)] = m[(i, i)];
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Scale that brings `norm` within `c`, or `None` when no clip is needed.
/// The `CLIP_SLACK` window keeps clip(clip(x)) == clip(x) exact: a vector
/// whose norm is within rounding of `c` is treated as already clipped.
pub(crate) fn clip_scale(norm: f64, c: f64) -> Option<f64> {
    if norm <= c * (1.0 + CLIP_SLACK) {
        None
    } else {
        Some(c / norm)
    }
}

/// Weighted sum of natural parameters. This is the factor-product/quotient
/// workhorse: products of exponential-family factors add their natural
/// parameters, so cavities, inclusions and damped updates are all `combine`
/// calls. Properness of the result is not asserted.
pub fn combine(terms: &[(f64, &GaussianNat)]) -> Result<GaussianNat> {
    let first = terms.first().expect("combine needs at least one term");
    let d = first.1.dim();
    let mut eta = DVector::zeros(d);
    let mut lambda = DMatrix::zeros(d, d);
    for (w, g) in terms {
        if g.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: g.dim(),
            });
        }
        eta.axpy(*w, &g.eta, 1.0);
        lambda += &g.lambda * *w;
    }
    Ok(GaussianNat { eta, lambda })
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Spectrum shift that repairs an indefinite symmetric matrix: when the
/// minimum eigenvalue is below `rho` the whole spectrum is shifted by
/// `(-lambda_min + rho)` so the output's minimum eigenvalue equals `rho`;
/// matrices already satisfying `lambda_min >= rho` pass through bitwise.
/// Eigenvectors are unchanged either way.
pub fn psd_project(m: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    assert!(rho > 0.0, "rho must be positive");
    let lmin = min_eigenvalue(m);
    if lmin >= rho {
        return m.clone();
    }
    let mut out = m.clone();
    let shift = -lmin + rho;
    for i in 0..out.nrows() {
        out[(i, i)] += shift;
    }
    out
}

/// Closed-form KL divergence `KL(q || p)` between proper Gaussians in natural
/// parameters:
///
/// `1/2 [ tr(Lp Lq^-1) + (mu_p - mu_q)^T Lp (mu_p - mu_q) - d + ln(|Lq|/|Lp|) ]`
///
/// with `mu = L^-1 eta`. Nonnegative up to ~1e-10 of numerical slack.
pub fn kl_gaussian(q: &GaussianNat, p: &GaussianNat) -> Result<f64> {
    let d = q.dim();
    if p.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: p.dim(),
        });
    }
    let chol_q = Cholesky::new(q.lambda.clone())
        .ok_or(Error::NotPositiveDefinite("lambda_q"))?;
    let chol_p = Cholesky::new(p.lambda.clone())
        .ok_or(Error::NotPositiveDefinite("lambda_p"))?;

    // tr(Lp Lq^-1) via Lq X = Lp.
    let x = chol_q.solve(&p.lambda);
    let trace = x.trace();

    let mu_q = chol_q.solve(&q.eta);
    let mu_p = chol_p.solve(&p.eta);
    let diff = &mu_p - &mu_q;
    let quad = (p.lambda() * &diff).dot(&diff);

    let log_det_q = log_det_from_cholesky(&chol_q);
    let log_det_p = log_det_from_cholesky(&chol_p);

    Ok(0.5 * (trace + quad - d as f64 + log_det_q - log_det_p))
}

fn log_det_from_cholesky(chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

// JSON shape is {"eta": [...], "lambda": [[row], ...]} with row-major lambda;
// deserialization re-validates symmetry.
#[derive(Serialize, Deserialize)]
struct GaussianNatWire {
    eta: Vec<f64>,
    lambda: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct GaussianMomentsWire {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

impl Serialize for GaussianMoments {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        let wire = GaussianMomentsWire {
            mu: self.mu.iter().cloned().collect(),
            sigma: (0..d)
                .map(|i| (0..d).map(|j| self.sigma[(i, j)]).collect())
                .collect(),
        };
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GaussianMoments {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = GaussianMomentsWire::deserialize(deserializer)?;
        let d = wire.mu.len();
        if wire.sigma.len() != d || wire.sigma.iter().any(|row| row.len() != d) {
            return Err(D::Error::custom("sigma must be a d x d matrix"));
        }
        let sigma = DMatrix::from_fn(d, d, |i, j| wire.sigma[i][j]);
        GaussianMoments::new(DVector::from_vec(wire.mu), sigma)
            .map_err(|e| D::Error::custom(e.to_string()))
    }
}

impl Serialize for GaussianNat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        let wire = GaussianNatWire {
            eta: self.eta.iter().cloned().collect(),
            lambda: (0..d)
                .map(|i| (0..d).map(|j| self.lambda[(i, j)]).collect())
                .collect(),
        };
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GaussianNat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = GaussianNatWire::deserialize(deserializer)?;
        let d = wire.eta.len();
        if wire.lambda.len() != d || wire.lambda.iter().any(|row| row.len() != d) {
            return Err(D::Error::custom("lambda must be a d x d matrix"));
        }
        let lambda = DMatrix::from_fn(d, d, |i, j| wire.lambda[i][j]);
        for i in 0..d {
            for j in (i + 1)..d {
                if lambda[(i, j)] != lambda[(j, i)] {
                    return Err(D::Error::custom(format!(
                        "lambda must be symmetric: entries ({i},{j}) and ({j},{i}) differ"
                    )));
                }
            }
        }
        Ok(GaussianNat {
            eta: DVector::from_vec(wire.eta),
            lambda,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn nat(eta: &[f64], lambda: &[&[f64]]) -> GaussianNat {
        let d = eta.len();
        GaussianNat::new(
            DVector::from_row_slice(eta),
            DMatrix::from_fn(d, d, |i, j| lambda[i][j]),
        )
        .unwrap()
    }

    #[test]
    fn to_moments_identity_case() {
        let g = nat(&[0.0], &[&[1.0]]);
        let m = g.to_moments().unwrap();
        assert_eq!(m.mu[0], 0.0);
        assert_eq!(m.sigma[(0, 0)], 1.0);
    }

    #[test]
    fn to_moments_one_dim_algebra() {
        let g = nat(&[2.0], &[&[2.0]]);
        let m = g.to_moments().unwrap();
        assert_abs_diff_eq!(m.mu[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.sigma[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn to_moments_rejects_indefinite() {
        let g = nat(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(
            g.to_moments(),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn to_natural_identity_and_one_dim() {
        let m = GaussianMoments::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let g = m.to_natural().unwrap();
        assert_eq!(g.eta()[0], 0.0);
        assert_eq!(g.lambda()[(0, 0)], 1.0);
        assert_eq!(g.lambda()[(0, 1)], 0.0);

        let m = GaussianMoments::new(
            DVector::from_row_slice(&[1.0]),
            DMatrix::from_row_slice(1, 1, &[4.0]),
        )
        .unwrap();
        let g = m.to_natural().unwrap();
        assert_abs_diff_eq!(g.eta()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(g.lambda()[(0, 0)], 0.25, epsilon = 1e-15);
        assert!(g.is_proper());
    }

    #[test]
    fn clip_noop_within_bound_is_bitwise() {
        let g = nat(&[0.3, 0.4], &[&[0.0, 0.0], &[0.0, 0.0]]);
        // flat norm 0.5 <= 1
        let clipped = g.clip(&ClipPolicy::joint(1.0).unwrap());
        assert_eq!(g, clipped);
    }

    #[test]
    fn clip_scales_to_bound() {
        let g = nat(&[3.0, 4.0], &[&[0.0, 0.0], &[0.0, 0.0]]);
        let clipped = g.clip(&ClipPolicy::joint(1.0).unwrap());
        assert_abs_diff_eq!(clipped.eta()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(clipped.eta()[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn clip_per_block_scales_blocks_independently() {
        // eta norm 10, lambda Frobenius norm 2, C=4: eta scaled by 0.4, lambda kept.
        let g = nat(&[6.0, 8.0], &[&[2.0, 0.0], &[0.0, 0.0]]);
        let clipped = g.clip(&ClipPolicy::per_block(4.0).unwrap());
        assert_abs_diff_eq!(clipped.eta()[0], 2.4, epsilon = 1e-12);
        assert_abs_diff_eq!(clipped.eta()[1], 3.2, epsilon = 1e-12);
        assert_eq!(clipped.lambda()[(0, 0)], 2.0);
    }

    #[test]
    fn clip_rejects_nonpositive_c() {
        assert!(ClipPolicy::joint(0.0).is_err());
        assert!(ClipPolicy::per_block(-1.0).is_err());
    }

    #[test]
    fn combine_identity_and_cancellation() {
        let g = nat(&[1.0, -2.0], &[&[2.0, 0.5], &[0.5, 3.0]]);
        let same = combine(&[(1.0, &g)]).unwrap();
        assert_eq!(same, g);

        let zero = combine(&[(1.0, &g), (-1.0, &g)]).unwrap();
        assert_eq!(zero.eta().norm(), 0.0);
        assert_eq!(zero.lambda().norm(), 0.0);
    }

    #[test]
    fn combine_rejects_dimension_mismatch() {
        let a = nat(&[1.0], &[&[1.0]]);
        let b = nat(&[1.0, 2.0], &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            combine(&[(1.0, &a), (1.0, &b)]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn psd_project_keeps_pd_input_bitwise() {
        let m = DMatrix::identity(2, 2);
        for rho in [1e-9, 1e-6, 1e-2] {
            let out = psd_project(&m, rho);
            assert_eq!(out, m);
        }
    }

    #[test]
    fn psd_project_shifts_indefinite_diag() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let out = psd_project(&m, 1e-6);
        let eig = out.symmetric_eigen().eigenvalues;
        let mut v: Vec<f64> = eig.iter().cloned().collect();
        v.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(v[0], 1e-6, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 1.5 + 1e-6, epsilon = 1e-12);
    }

    #[test]
    fn psd_project_shifts_off_diagonal_case() {
        // eigenvalues +-1, rho = 0.01 -> shift by 1.01.
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let out = psd_project(&m, 0.01);
        let eig = out.clone().symmetric_eigen().eigenvalues;
        let mut v: Vec<f64> = eig.iter().cloned().collect();
        v.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(v[0], 0.01, epsilon = 1e-10);
        assert_abs_diff_eq!(v[1], 2.01, epsilon = 1e-10);
        assert_eq!(out[(0, 1)], 1.0);
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let g = nat(&[1.0, 0.5], &[&[2.0, 0.3], &[0.3, 1.5]]);
        assert!(kl_gaussian(&g, &g).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn kl_one_dim_mean_shift() {
        // q = N(0,1), p = N(1,1): KL = (mu_q - mu_p)^2 / 2 = 0.5
        let q = nat(&[0.0], &[&[1.0]]);
        let p = nat(&[1.0], &[&[1.0]]);
        assert_abs_diff_eq!(kl_gaussian(&q, &p).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn kl_one_dim_variance_change() {
        // q = N(0,1), p = N(0,2): KL = (ln 2 - 1/2) / 2
        let q = nat(&[0.0], &[&[1.0]]);
        let p = nat(&[0.0], &[&[0.5]]);
        let expect = 0.5 * (2.0f64.ln() - 0.5);
        assert_abs_diff_eq!(kl_gaussian(&q, &p).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn kl_rejects_improper() {
        let q = nat(&[0.0], &[&[1.0]]);
        let bad = nat(&[0.0], &[&[-1.0]]);
        assert!(kl_gaussian(&q, &bad).is_err());
        assert!(kl_gaussian(&bad, &q).is_err());
    }

    #[test]
    fn json_round_trip_and_symmetry_validation() {
        let g = nat(&[1.0, 2.0], &[&[2.0, 0.25], &[0.25, 3.0]]);
        let s = serde_json::to_string(&g).unwrap();
        let back: GaussianNat = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);

        let bad = r#"{"eta":[0.0,0.0],"lambda":[[1.0,0.5],[0.2,1.0]]}"#;
        assert!(serde_json::from_str::<GaussianNat>(bad).is_err());
    }

    #[test]
    fn construction_symmetrizes_lambda() {
        let g = GaussianNat::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.2, 1.0]),
        )
        .unwrap();
        assert_eq!(g.lambda()[(0, 1)], g.lambda()[(1, 0)]);
        assert_abs_diff_eq!(g.lambda()[(0, 1)], 0.3, epsilon = 1e-16);
    }
}

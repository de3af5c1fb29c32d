//! Shared oracle machinery for the integration and acceptance suites. All of
//! it is independent of the library's computation paths: quadrature, a
//! deterministic low-discrepancy sampler, closed forms and brute-force
//! enumerations used to freeze expected values.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dpsep::GaussianNat;

/// Random proper natural-parameter Gaussian: `lambda = A A^T + 0.1 I` with
/// standard-normal `A`, `eta` standard normal scaled by `eta_scale`.
pub fn random_proper(d: usize, eta_scale: f64, rng: &mut ChaCha8Rng) -> GaussianNat {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut lambda = &a * a.transpose();
    for i in 0..d {
        lambda[(i, i)] += 0.1;
    }
    let eta = DVector::from_fn(d, |_, _| eta_scale * rng.sample::<f64, _>(StandardNormal));
    GaussianNat::new(eta, lambda).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Closed-form KL between scalar Gaussians given as (mean, variance).
pub fn kl_1d(mu_q: f64, var_q: f64, mu_p: f64, var_p: f64) -> f64 {
    0.5 * ((var_q / var_p) + (mu_q - mu_p) * (mu_q - mu_p) / var_p - 1.0 + (var_p / var_q).ln())
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error ~1e-9; ample for quasi-Monte-Carlo oracles).
pub fn norm_inv_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Halton low-discrepancy sequence in `dims` dimensions (prime bases),
/// skipping the first 100 points.
pub struct Halton {
    bases: Vec<u64>,
    index: u64,
}

impl Halton {
    pub fn new(dims: usize) -> Self {
        const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
        assert!(dims <= PRIMES.len());
        Halton {
            bases: PRIMES[..dims].to_vec(),
            index: 100,
        }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        self.index += 1;
        self.bases
            .iter()
            .map(|&b| radical_inverse(self.index, b))
            .collect()
    }
}

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    while n > 0 {
        denom *= base as f64;
        inv += (n % base) as f64 / denom;
        n /= base;
    }
    inv
}

/// Gauss-Hermite nodes and weights for `E[f(Z)]`, `Z ~ N(0,1)`: computed via
/// the Golub-Welsch eigendecomposition of the Jacobi matrix, returned already
/// transformed so that `E[f(Z)] = sum_i w_i f(x_i)`.
pub fn gauss_hermite_standard_normal(n: usize) -> Vec<(f64, f64)> {
    let mut jacobi = DMatrix::zeros(n, n);
    for i in 1..n {
        let off = (i as f64 / 2.0).sqrt();
        jacobi[(i - 1, i)] = off;
        jacobi[(i, i - 1)] = off;
    }
    let eig = jacobi.symmetric_eigen();
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let x = eig.eigenvalues[k];
            let v0 = eig.eigenvectors[(0, k)];
            // physicists' weight v0^2 sqrt(pi), normalized by 1/sqrt(pi)
            (x * std::f64::consts::SQRT_2, v0 * v0)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Brute-force matrix variance statistic: explicitly builds the symmetric
/// basis (diagonal units and symmetrized off-diagonal units), sums
/// `sigma2^2 B_k B_k^T` and takes the spectral norm.
pub fn brute_force_matrix_variance(d: usize, sigma2: f64) -> f64 {
    let mut sum = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let mut b = DMatrix::<f64>::zeros(d, d);
        b[(i, i)] = 1.0;
        sum += sigma2 * sigma2 * &b * b.transpose();
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut b = DMatrix::<f64>::zeros(d, d);
            b[(i, j)] = 1.0;
            b[(j, i)] = 1.0;
            sum += sigma2 * sigma2 * &b * b.transpose();
        }
    }
    sum.symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

/// Timer helper for the acceptance lines.
pub struct Stopwatch(std::time::Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch(std::time::Instant::now())
    }
    pub fn secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

use dpsep::mog::MoGModel;
use dpsep::GaussianMoments;
use nalgebra::Cholesky;

/// Random proper cavity blocks in the regime the engines visit (means of a
/// few units, order-one covariances).
pub fn random_cavity(j: usize, d: usize, seed: u64) -> Vec<GaussianNat> {
    let mut r = rng(seed);
    (0..j)
        .map(|_| {
            let mu = DVector::from_fn(d, |_, _| 1.5 * r.sample::<f64, _>(StandardNormal));
            let a = DMatrix::from_fn(d, d, |_, _| 0.4 * r.sample::<f64, _>(StandardNormal));
            let mut sigma = &a * a.transpose();
            for k in 0..d {
                sigma[(k, k)] += 0.5;
            }
            GaussianMoments::new(mu, sigma).unwrap().to_natural().unwrap()
        })
        .collect()
}

/// Independent estimate of the tilted moments: importance sampling with the
/// cavity as proposal (weights are the marginalized mixture likelihood of
/// the datapoint), driven by a Halton sequence for deterministic sub-1e-3
/// accuracy at 1e6 points.
pub fn qmc_tilted_oracle(
    cavity: &[GaussianMoments],
    x: &DVector<f64>,
    model: &MoGModel,
    points: usize,
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let j = model.j;
    let d = model.d;
    let s2 = model.noise_sd * model.noise_sd;
    let chols: Vec<Cholesky<f64, nalgebra::Dyn>> = cavity
        .iter()
        .map(|m| Cholesky::new(m.sigma.clone()).unwrap())
        .collect();

    let mut halton = Halton::new(j * d);
    let mut weight_sum = 0.0;
    let mut mean_acc: Vec<DVector<f64>> = vec![DVector::zeros(d); j];
    let mut second_acc: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); j];

    let mut mus: Vec<DVector<f64>> = vec![DVector::zeros(d); j];
    for _ in 0..points {
        let u = halton.next_point();
        for b in 0..j {
            let z = DVector::from_fn(d, |k, _| norm_inv_cdf(u[b * d + k]));
            mus[b] = &cavity[b].mu + chols[b].l() * z;
        }
        let mut w = 0.0;
        for b in 0..j {
            let diff = x - &mus[b];
            let sq = diff.norm_squared();
            w += model.weights[b] * (-sq / (2.0 * s2)).exp()
                / (2.0 * std::f64::consts::PI * s2).powf(d as f64 / 2.0);
        }
        weight_sum += w;
        for b in 0..j {
            mean_acc[b] += &mus[b] * w;
            second_acc[b] += &mus[b] * mus[b].transpose() * w;
        }
    }

    (0..j)
        .map(|b| {
            let mean = &mean_acc[b] / weight_sum;
            let cov = &second_acc[b] / weight_sum - &mean * mean.transpose();
            (mean, cov)
        })
        .collect()
}

/// Per-entry comparison with tolerance relative to the oracle block's
/// dominant entry (strict per-entry relative error is meaningless for
/// entries that are exactly zero by symmetry).
pub fn assert_entries_close(got: &DMatrix<f64>, want: &DMatrix<f64>, tol: f64, what: &str) {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for i in 0..got.nrows() {
        for k in 0..got.ncols() {
            let a = got[(i, k)];
            let b = want[(i, k)];
            assert!(
                (a - b).abs() <= tol * b.abs().max(scale),
                "{what} entry ({i},{k}): {a} vs {b} (scale {scale})"
            );
        }
    }
}

//! Mixture-of-Gaussians clustering model with known mixing weights and
//! component noise: synthetic data generation, the tilted-distribution moment
//! match that drives every engine, cluster assignment, a seeded Gibbs sampler
//! used as ground truth, and the F-norm posterior-accuracy metric.
//!
//! The approximate posterior over the component means is block-factorized:
//! one d-dimensional Gaussian per component. The cluster-identity variables
//! are never represented explicitly; they are marginalized analytically
//! inside `tilted_moments`, which is what turns one datapoint's likelihood
//! into responsibility-weighted per-component updates.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{combine, symmetrize, GaussianMoments, GaussianNat};

/// Fixed model constants. Everything except the component means is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoGModel {
    /// Number of components J.
    pub j: usize,
    /// Input dimension d.
    pub d: usize,
    /// Component standard deviation (isotropic likelihood noise).
    pub noise_sd: f64,
    /// Mixing weights, a simplex vector of length J.
    pub weights: Vec<f64>,
    /// Prior mean m of each component mean.
    pub prior_mean: Vec<f64>,
    /// Prior variance of each component mean (isotropic).
    pub prior_var: f64,
}

impl Default for MoGModel {
    /// The bundled clustering experiment: J = 4 isotropic components in four
    /// dimensions, noise sd 0.5, uniform weights, standard-normal prior on
    /// the means.
    fn default() -> Self {
        MoGModel {
            j: 4,
            d: 4,
            noise_sd: 0.5,
            weights: vec![0.25; 4],
            prior_mean: vec![0.0; 4],
            prior_var: 1.0,
        }
    }
}

impl MoGModel {
    pub fn validate(&self) -> Result<()> {
        if self.j == 0 || self.d == 0 {
            return Err(Error::Config("j and d must be positive".into()));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::Config("noise_sd must be positive".into()));
        }
        if !(self.prior_var > 0.0) {
            return Err(Error::Config("prior_var must be positive".into()));
        }
        if self.weights.len() != self.j {
            return Err(Error::Config("weights length must equal j".into()));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("weights must be strictly positive".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights must sum to 1, got {sum}")));
        }
        if self.prior_mean.len() != self.d {
            return Err(Error::Config("prior_mean length must equal d".into()));
        }
        Ok(())
    }

    /// Natural parameters of the prior over one component mean.
    pub fn prior_natural(&self) -> GaussianNat {
        let lambda = DMatrix::identity(self.d, self.d) / self.prior_var;
        let eta = DVector::from_row_slice(&self.prior_mean) / self.prior_var;
        GaussianNat::new(eta, lambda).expect("square by construction")
    }

    fn noise_var(&self) -> f64 {
        self.noise_sd * self.noise_sd
    }
}

/// Block-factorized posterior over the component means: J independent
/// d-dimensional Gaussians in natural form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeansPosterior {
    pub components: Vec<GaussianNat>,
}

impl MeansPosterior {
    pub fn is_proper(&self) -> bool {
        self.components.iter().all(GaussianNat::is_proper)
    }

    pub fn to_moments(&self) -> Result<Vec<GaussianMoments>> {
        self.components.iter().map(GaussianNat::to_moments).collect()
    }
}

/// Observations plus the generation-time bookkeeping (labels and true means
/// are only present for synthetic data).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// N x d.
    pub points: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
    /// J x d.
    pub true_means: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }

    /// Writes the d feature columns (plus a `label` column when present) as
    /// CSV; true means go to a `<path>.means.json` sidecar.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        if self.labels.is_some() {
            header.push("label".to_string());
        }
        writeln!(f, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row: Vec<String> = (0..d).map(|k| fmt_float(self.points[(i, k)])).collect();
            if let Some(labels) = &self.labels {
                row.push(labels[i].to_string());
            }
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;
        if let Some(means) = &self.true_means {
            let rows: Vec<Vec<f64>> = (0..means.nrows())
                .map(|i| (0..means.ncols()).map(|j| means[(i, j)]).collect())
                .collect();
            std::fs::write(
                sidecar_path(path),
                serde_json::to_string_pretty(&rows)?,
            )?;
        }
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Dataset> {
        let path = path.as_ref();
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty dataset file".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        let has_label = cols.last() == Some(&"label");
        let d = if has_label { cols.len() - 1 } else { cols.len() };
        let mut data: Vec<f64> = Vec::new();
        let mut labels: Vec<usize> = Vec::new();
        let mut n = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Config(format!(
                    "row {n} has {} fields, expected {}",
                    fields.len(),
                    cols.len()
                )));
            }
            for k in 0..d {
                data.push(fields[k].parse::<f64>().map_err(|e| {
                    Error::Config(format!("row {n} col {k}: {e}"))
                })?);
            }
            if has_label {
                labels.push(fields[d].parse::<usize>().map_err(|e| {
                    Error::Config(format!("row {n} label: {e}"))
                })?);
            }
            n += 1;
        }
        let points = DMatrix::from_row_slice(n, d, &data);
        let true_means = match std::fs::read_to_string(sidecar_path(path)) {
            Ok(s) => {
                let rows: Vec<Vec<f64>> = serde_json::from_str(&s)?;
                let j = rows.len();
                Some(DMatrix::from_fn(j, d, |r, c| rows[r][c]))
            }
            Err(_) => None,
        };
        Ok(Dataset {
            points,
            labels: if has_label { Some(labels) } else { None },
            true_means,
        })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".means.json");
    std::path::PathBuf::from(s)
}

/// 17 significant digits, enough for exact f64 round trips.
pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Draws a synthetic clustering dataset: component means iid from the prior,
/// labels iid from the mixing weights, points from the labeled component.
/// Bitwise deterministic given the seed (means, then labels, then noise).
pub fn generate_synthetic(model: &MoGModel, n: usize, seed: u64) -> Result<Dataset> {
    model.validate()?;
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior_sd = model.prior_var.sqrt();
    let mut true_means = DMatrix::zeros(model.j, model.d);
    for jj in 0..model.j {
        for k in 0..model.d {
            let z: f64 = rng.sample(StandardNormal);
            true_means[(jj, k)] = model.prior_mean[k] + prior_sd * z;
        }
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(sample_categorical(&model.weights, &mut rng));
    }
    let mut points = DMatrix::zeros(n, model.d);
    for i in 0..n {
        for k in 0..model.d {
            let z: f64 = rng.sample(StandardNormal);
            points[(i, k)] = true_means[(labels[i], k)] + model.noise_sd * z;
        }
    }
    Ok(Dataset {
        points,
        labels: Some(labels),
        true_means: Some(true_means),
    })
}

fn sample_categorical<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (idx, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return idx;
        }
    }
    weights.len() - 1
}

/// Result of projecting one datapoint's tilted distribution back onto the
/// block-factorized Gaussian family.
#[derive(Debug, Clone)]
pub struct TiltedMoments {
    /// Log normalizer of the tilted distribution.
    pub log_z: f64,
    /// Posterior responsibility of each component for the datapoint.
    pub responsibilities: Vec<f64>,
    /// Matched per-component mean and covariance.
    pub matched: Vec<GaussianMoments>,
}

/// Moment-matches the tilted distribution `cavity(mu) * p(x | mu)` where the
/// likelihood marginalizes the cluster identity:
/// `p(x | mu) = sum_j w_j N(x; mu_j, noise_sd^2 I)`.
///
/// Component j's tilted marginal is the mixture of its conjugate update
/// (weight r_j) and its unchanged cavity (weight 1 - r_j), with
/// `r_j ~ w_j N(x; m_j, V_j + noise_sd^2 I)`; the matched moments are that
/// mixture's mean and covariance.
pub fn tilted_moments(
    cavity: &[GaussianNat],
    x: &DVector<f64>,
    model: &MoGModel,
) -> Result<TiltedMoments> {
    let s2 = model.noise_var();
    let j = model.j;
    debug_assert_eq!(cavity.len(), j);

    let mut cav_moments = Vec::with_capacity(j);
    let mut log_z = Vec::with_capacity(j);
    for (jj, block) in cavity.iter().enumerate() {
        let m = block.to_moments()?;
        let mut marg_cov = m.sigma.clone();
        for k in 0..model.d {
            marg_cov[(k, k)] += s2;
        }
        let lp = log_gaussian_pdf(x, &m.mu, &marg_cov)?;
        log_z.push(model.weights[jj].ln() + lp);
        cav_moments.push(m);
    }
    let log_norm = log_sum_exp(&log_z);
    let responsibilities: Vec<f64> = log_z.iter().map(|l| (l - log_norm).exp()).collect();

    let mut matched = Vec::with_capacity(j);
    for (jj, block) in cavity.iter().enumerate() {
        let r = responsibilities[jj];
        // Conjugate update of block jj by the datapoint at full weight.
        let mut post = block.clone();
        {
            let mut eta = post.eta().clone();
            let mut lambda = post.lambda().clone();
            eta += x / s2;
            for k in 0..model.d {
                lambda[(k, k)] += 1.0 / s2;
            }
            post = GaussianNat::new(eta, lambda)?;
        }
        let post_m = post.to_moments()?;
        let cav_m = &cav_moments[jj];

        let mean = &post_m.mu * r + &cav_m.mu * (1.0 - r);
        let diff = &post_m.mu - &cav_m.mu;
        let spread = &diff * diff.transpose() * (r * (1.0 - r));
        let cov = &post_m.sigma * r + &cav_m.sigma * (1.0 - r) + spread;
        matched.push(GaussianMoments::new(mean, symmetrize(&cov))?);
    }

    Ok(TiltedMoments {
        log_z: log_norm,
        responsibilities,
        matched,
    })
}

/// Site factor extraction: the matched block divided by the cavity block in
/// natural parameters. The result may be improper.
pub fn site_update(cavity_j: &GaussianNat, matched_j: &GaussianMoments) -> Result<GaussianNat> {
    let nat = matched_j.to_natural()?;
    combine(&[(1.0, &nat), (-1.0, cavity_j)])
}

/// Hard assignment of every datapoint to the component maximizing
/// `w_j N(x; m_j, V_j + noise_sd^2 I)` under the posterior's moments.
/// Ties break toward the smallest index.
pub fn assign_labels(
    posterior: &MeansPosterior,
    data: &Dataset,
    model: &MoGModel,
) -> Result<Vec<usize>> {
    let s2 = model.noise_var();
    let mut comps = Vec::with_capacity(model.j);
    for block in &posterior.components {
        let m = block.to_moments()?;
        let mut cov = m.sigma.clone();
        for k in 0..model.d {
            cov[(k, k)] += s2;
        }
        let chol = Cholesky::new(cov).ok_or(Error::NotPositiveDefinite("marginal cov"))?;
        comps.push((m.mu, chol));
    }
    let mut labels = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let x = data.point(i);
        let mut best = 0usize;
        let mut best_lp = f64::NEG_INFINITY;
        for (jj, (mu, chol)) in comps.iter().enumerate() {
            let lp = model.weights[jj].ln() + log_gaussian_pdf_chol(&x, mu, chol);
            if lp > best_lp {
                best_lp = lp;
                best = jj;
            }
        }
        labels.push(best);
    }
    Ok(labels)
}

/// Seeded Gibbs ground truth: alternates resampling the assignments given
/// the means and the means given the assignments (both conditionals are
/// exact), then reports the post-burn-in empirical mean and covariance of
/// each component's mean.
pub fn gibbs_ground_truth(
    data: &Dataset,
    model: &MoGModel,
    sweeps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<GaussianMoments>> {
    model.validate()?;
    if sweeps <= burn_in {
        return Err(Error::Config("sweeps must exceed burn_in".into()));
    }
    let n = data.len();
    let d = model.d;
    let s2 = model.noise_var();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Initialize means from the prior.
    let prior_sd = model.prior_var.sqrt();
    let mut means: Vec<DVector<f64>> = (0..model.j)
        .map(|_| {
            DVector::from_fn(d, |k, _| {
                let z: f64 = rng.sample(StandardNormal);
                model.prior_mean[k] + prior_sd * z
            })
        })
        .collect();

    let log_w: Vec<f64> = model.weights.iter().map(|w| w.ln()).collect();
    let kept = sweeps - burn_in;
    let mut samples: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(kept); model.j];
    let mut logp = vec![0.0f64; model.j];
    let mut assign = vec![0usize; n];

    for sweep in 0..sweeps {
        // Assignments given means (isotropic likelihood).
        for i in 0..n {
            for jj in 0..model.j {
                let mut sq = 0.0;
                for k in 0..d {
                    let diff = data.points[(i, k)] - means[jj][k];
                    sq += diff * diff;
                }
                logp[jj] = log_w[jj] - sq / (2.0 * s2);
            }
            let norm = log_sum_exp(&logp);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = model.j - 1;
            for jj in 0..model.j {
                acc += (logp[jj] - norm).exp();
                if u < acc {
                    pick = jj;
                    break;
                }
            }
            assign[i] = pick;
        }
        // Means given assignments (conjugate Gaussian, isotropic).
        for jj in 0..model.j {
            let mut count = 0usize;
            let mut sum: DVector<f64> = DVector::zeros(d);
            for i in 0..n {
                if assign[i] == jj {
                    count += 1;
                    for k in 0..d {
                        sum[k] += data.points[(i, k)];
                    }
                }
            }
            let prec = 1.0 / model.prior_var + count as f64 / s2;
            let var = 1.0 / prec;
            let sd = var.sqrt();
            for k in 0..d {
                let mean = var * (model.prior_mean[k] / model.prior_var + sum[k] / s2);
                let z: f64 = rng.sample(StandardNormal);
                means[jj][k] = mean + sd * z;
            }
            if sweep >= burn_in {
                samples[jj].push(means[jj].clone());
            }
        }
    }

    samples
        .into_iter()
        .map(|draws| empirical_moments(&draws))
        .collect()
}

fn empirical_moments(draws: &[DVector<f64>]) -> Result<GaussianMoments> {
    let k = draws.len();
    let d = draws[0].len();
    let mut mean = DVector::zeros(d);
    for s in draws {
        mean += s;
    }
    mean /= k as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in draws {
        let c = s - &mean;
        cov += &c * c.transpose();
    }
    cov /= (k - 1) as f64;
    GaussianMoments::new(mean, cov)
}

/// Posterior-accuracy F-norms between two component sets in moment form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FNorms {
    pub mean: f64,
    pub cov: f64,
    pub avg: f64,
}

/// L2 distance between the flattened posterior parameters after aligning
/// components by minimum-cost matching on mean distances. Exhaustive matching
/// for J <= 6, greedy above.
pub fn f_norm(estimate: &[GaussianMoments], truth: &[GaussianMoments]) -> Result<FNorms> {
    let j = truth.len();
    if estimate.len() != j {
        return Err(Error::DimensionMismatch {
            expected: j,
            got: estimate.len(),
        });
    }
    if j == 0 {
        return Err(Error::Config("f_norm needs at least one component".into()));
    }
    let d = truth[0].dim();
    if estimate.iter().chain(truth.iter()).any(|m| m.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: estimate.iter().chain(truth.iter()).map(|m| m.dim()).find(|&x| x != d).unwrap_or(d),
        });
    }

    let mut cost = vec![vec![0.0f64; j]; j];
    for (ei, e) in estimate.iter().enumerate() {
        for (ti, t) in truth.iter().enumerate() {
            cost[ei][ti] = (&e.mu - &t.mu).norm();
        }
    }
    let perm = if j <= 6 {
        best_permutation(&cost)
    } else {
        greedy_matching(&cost)
    };

    let mut mean_sq = 0.0;
    let mut cov_sq = 0.0;
    for (ti, &ei) in perm.iter().enumerate() {
        mean_sq += (&estimate[ei].mu - &truth[ti].mu).norm_squared();
        cov_sq += (&estimate[ei].sigma - &truth[ti].sigma).norm_squared();
    }
    let mean = mean_sq.sqrt();
    let cov = cov_sq.sqrt();
    Ok(FNorms {
        mean,
        cov,
        avg: 0.5 * (mean + cov),
    })
}

/// perm[t] = estimate index assigned to truth component t, minimizing the
/// summed mean distances over all permutations.
fn best_permutation(cost: &[Vec<f64>]) -> Vec<usize> {
    let j = cost.len();
    let mut best: Vec<usize> = (0..j).collect();
    let mut best_cost = f64::INFINITY;
    let mut current: Vec<usize> = Vec::with_capacity(j);
    let mut used = vec![false; j];
    fn rec(
        t: usize,
        j: usize,
        cost: &[Vec<f64>],
        current: &mut Vec<usize>,
        used: &mut [bool],
        acc: f64,
        best: &mut Vec<usize>,
        best_cost: &mut f64,
    ) {
        if t == j {
            if acc < *best_cost {
                *best_cost = acc;
                best.clone_from(current);
            }
            return;
        }
        for e in 0..j {
            if !used[e] {
                used[e] = true;
                current.push(e);
                rec(t + 1, j, cost, current, used, acc + cost[e][t], best, best_cost);
                current.pop();
                used[e] = false;
            }
        }
    }
    rec(0, j, cost, &mut current, &mut used, 0.0, &mut best, &mut best_cost);
    best
}

fn greedy_matching(cost: &[Vec<f64>]) -> Vec<usize> {
    let j = cost.len();
    let mut perm = vec![usize::MAX; j];
    let mut est_used = vec![false; j];
    let mut truth_used = vec![false; j];
    for _ in 0..j {
        let mut best = (0usize, 0usize, f64::INFINITY);
        for e in 0..j {
            if est_used[e] {
                continue;
            }
            for t in 0..j {
                if truth_used[t] {
                    continue;
                }
                if cost[e][t] < best.2 {
                    best = (e, t, cost[e][t]);
                }
            }
        }
        perm[best.1] = best.0;
        est_used[best.0] = true;
        truth_used[best.1] = true;
    }
    perm
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

pub(crate) fn log_gaussian_pdf(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<f64> {
    let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite("pdf cov"))?;
    Ok(log_gaussian_pdf_chol(x, mean, &chol))
}

fn log_gaussian_pdf_chol(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    chol: &Cholesky<f64, nalgebra::Dyn>,
) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let solved = chol.solve(&diff);
    let maha = diff.dot(&solved);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + maha)
}

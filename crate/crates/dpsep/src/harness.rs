//! Experiment orchestration: a JSON config drives method sweeps over shared
//! synthetic datasets, posteriors are scored against a Gibbs ground truth,
//! and results land as `results.csv` (one row per method x seed),
//! `summary.csv` (per-method means) and per-run JSON reports.
//!
//! Per-method seeds derive from `(master_seed, method_name, repeat)`, so
//! adding a method never perturbs existing results, and the produced CSV
//! bytes are a pure function of `(config, master seed)`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::accountant::PrivacySpec;
use crate::engines::{self, EngineConfig, Method, TraceSnapshot};
use crate::error::{Error, Result};
use crate::gaussian::{ClipPolicy, GaussianMoments};
use crate::mog::{
    assign_labels, f_norm, fmt_float, generate_synthetic, gibbs_ground_truth, Dataset, FNorms,
    MeansPosterior, MoGModel,
};
use crate::seeding::derive_seed;

fn default_iterations() -> usize {
    100
}
fn default_damping() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1e-5
}
fn default_rho() -> f64 {
    1e-6
}
fn default_repeats() -> usize {
    5
}
fn default_master_seed() -> u64 {
    7
}
fn default_gibbs_sweeps() -> usize {
    3000
}
fn default_gibbs_burn_in() -> usize {
    500
}
fn default_clip_c() -> f64 {
    1.0
}
fn default_init_jitter() -> f64 {
    0.1
}

/// One method entry of the sweep. Engine seeds are derived per repeat, so a
/// method spec carries everything except the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    /// Seed-derivation key; defaults to `name`. Methods sharing a group run
    /// with identical visit orders and noise draws per repeat, which turns
    /// sweeps over a single knob (such as the privacy budget) into coupled
    /// common-random-number comparisons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_group: Option<String>,
    pub method: Method,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<ClipPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_init_jitter")]
    pub init_jitter_sd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ep_damping: Option<f64>,
}

impl MethodSpec {
    /// Resolves the method entry into a runnable engine config for dataset
    /// size `n`. DP methods get the default clip norm when none is given and
    /// a privacy spec calibrated once here.
    fn resolve(&self, n: usize, seed: u64) -> Result<EngineConfig> {
        let clip = match (&self.clip, self.method) {
            (Some(c), _) => Some(*c),
            (None, Method::DpSep) => Some(ClipPolicy::joint(default_clip_c())?),
            _ => None,
        };
        let privacy = if self.method == Method::DpSep {
            let clip_c = clip.expect("set above").c;
            let spec = PrivacySpec {
                epsilon: self.epsilon,
                delta: self.delta,
                sigma: self.sigma,
                sampling_rate: 1.0 / n as f64,
                steps: self.iterations as u64 * n as u64,
                clip_c,
                damping: self.damping,
            };
            Some(spec.calibrated()?)
        } else {
            None
        };
        Ok(EngineConfig {
            method: self.method,
            iterations: self.iterations,
            damping: self.damping,
            clip,
            privacy,
            seed,
            trace_every: 0,
            rho: self.rho,
            init_jitter_sd: self.init_jitter_sd,
            ep_damping: self.ep_damping,
        })
    }
}

/// Full sweep configuration (single JSON document).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: MoGModel,
    pub n: usize,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_trace: bool,
    /// Snapshot cadence in engine steps when `emit_trace` is set; 0 means
    /// one snapshot per pass.
    #[serde(default)]
    pub trace_every: usize,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default = "default_gibbs_sweeps")]
    pub gibbs_sweeps: usize,
    #[serde(default = "default_gibbs_burn_in")]
    pub gibbs_burn_in: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods list is empty".into()));
        }
        for (i, a) in self.methods.iter().enumerate() {
            if a.name.is_empty() {
                return Err(Error::Config(format!("method {i} has an empty name")));
            }
            for b in &self.methods[i + 1..] {
                if a.name == b.name {
                    return Err(Error::Config(format!("duplicate method name '{}'", a.name)));
                }
            }
        }
        if self.gibbs_sweeps <= self.gibbs_burn_in {
            return Err(Error::Config("gibbs_sweeps must exceed gibbs_burn_in".into()));
        }
        Ok(())
    }

    pub fn from_json_file<P: AsRef<Path>>(path: P) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }
}

/// Scored result of one engine run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    /// Resolved engine config (defaults and calibrated privacy included).
    pub config: EngineConfig,
    /// Model constants the run was trained under.
    pub model: MoGModel,
    /// Posterior in moment form, one entry per component.
    pub posterior: Vec<GaussianMoments>,
    pub f_norms: FNorms,
    pub achieved_privacy: Option<(f64, f64)>,
    pub failures: u64,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceSnapshot>>,
}

/// A run that errored instead of producing a posterior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedRun {
    pub method: String,
    pub seed: u64,
    pub error: String,
}

/// Everything a sweep produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<RunReport>,
    pub failed: Vec<FailedRun>,
    pub results_csv: PathBuf,
    pub summary_csv: PathBuf,
}

/// Runs the sweep: one dataset and one Gibbs truth per repeat, every method
/// on the same dataset with derived seeds, F-norms against the truth, CSV
/// and JSON emission. Individual run failures are recorded, never fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::create_dir_all(cfg.output_dir.join("runs"))?;

    let mut datasets = Vec::with_capacity(cfg.repeats);
    let mut truths: Vec<Vec<GaussianMoments>> = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let data = generate_synthetic(&cfg.model, cfg.n, derive_seed(cfg.master_seed, "dataset", r as u64))?;
        let truth = gibbs_ground_truth(
            &data,
            &cfg.model,
            cfg.gibbs_sweeps,
            cfg.gibbs_burn_in,
            derive_seed(cfg.master_seed, "gibbs", r as u64),
        )?;
        datasets.push(data);
        truths.push(truth);
    }

    // Resolve every method once (privacy calibration is deterministic and
    // shared across repeats).
    let mut resolved: Vec<EngineConfig> = Vec::with_capacity(cfg.methods.len());
    for spec in &cfg.methods {
        resolved.push(spec.resolve(cfg.n, 0)?);
    }

    let trace_every = if cfg.emit_trace {
        if cfg.trace_every > 0 {
            cfg.trace_every
        } else {
            cfg.n
        }
    } else {
        0
    };

    let jobs: Vec<(usize, usize)> = (0..cfg.methods.len())
        .flat_map(|m| (0..cfg.repeats).map(move |r| (m, r)))
        .collect();
    let slots: Mutex<Vec<Option<std::result::Result<RunReport, FailedRun>>>> =
        Mutex::new(vec![None; jobs.len()]);
    let cursor = AtomicUsize::new(0);
    let workers = worker_count(jobs.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = cursor.fetch_add(1, Ordering::Relaxed);
                if k >= jobs.len() {
                    break;
                }
                let (m, r) = jobs[k];
                let spec = &cfg.methods[m];
                let group = spec.seed_group.as_deref().unwrap_or(&spec.name);
                let seed = derive_seed(cfg.master_seed, group, r as u64);
                let mut engine_cfg = resolved[m].clone();
                engine_cfg.seed = seed;
                engine_cfg.trace_every = trace_every;
                let result = execute_run(spec, engine_cfg, &datasets[r], &truths[r], &cfg.model);
                slots.lock().unwrap()[k] = Some(result);
            });
        }
    });

    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for slot in slots.into_inner().unwrap() {
        match slot.expect("every job filled") {
            Ok(report) => reports.push(report),
            Err(fail) => failed.push(fail),
        }
    }

    let results_csv = cfg.output_dir.join("results.csv");
    let summary_csv = cfg.output_dir.join("summary.csv");
    write_results_csv(&results_csv, cfg, &reports)?;
    write_summary_csv(&summary_csv, cfg, &reports)?;
    for report in &reports {
        let path = cfg
            .output_dir
            .join("runs")
            .join(format!("{}-seed{}.json", report.method, report.seed));
        std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    }
    if !failed.is_empty() {
        std::fs::write(
            cfg.output_dir.join("failed.json"),
            serde_json::to_string_pretty(&failed)?,
        )?;
    }

    Ok(ExperimentOutcome {
        reports,
        failed,
        results_csv,
        summary_csv,
    })
}

fn execute_run(
    spec: &MethodSpec,
    engine_cfg: EngineConfig,
    data: &Dataset,
    truth: &[GaussianMoments],
    model: &MoGModel,
) -> std::result::Result<RunReport, FailedRun> {
    let fail = |e: Error, seed: u64| FailedRun {
        method: spec.name.clone(),
        seed,
        error: e.to_string(),
    };
    let seed = engine_cfg.seed;
    let out = engines::run(data, model, &engine_cfg).map_err(|e| fail(e, seed))?;
    let posterior = out
        .posterior
        .to_moments()
        .map_err(|e| fail(e, seed))?;
    let f_norms = f_norm(&posterior, truth).map_err(|e| fail(e, seed))?;
    Ok(RunReport {
        method: spec.name.clone(),
        seed,
        config: engine_cfg,
        model: model.clone(),
        posterior,
        f_norms,
        achieved_privacy: out.achieved_privacy,
        failures: out.failures,
        wall_ms: out.wall_ms,
        trace: if out.trace.is_empty() {
            None
        } else {
            Some(out.trace)
        },
    })
}

fn worker_count(jobs: usize) -> usize {
    let configured = std::env::var("DPSEP_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0);
    let fallback = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1);
    configured.unwrap_or(fallback).min(jobs.max(1))
}

const CSV_SCHEMA: &str = "# dpsep csv schema v1";

fn write_results_csv(path: &Path, cfg: &ExperimentConfig, reports: &[RunReport]) -> Result<()> {
    let mut rows: Vec<&RunReport> = reports.iter().collect();
    rows.sort_by_key(|r| {
        (
            cfg.methods.iter().position(|m| m.name == r.method).unwrap_or(usize::MAX),
            r.seed,
        )
    });
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_SCHEMA}")?;
    writeln!(
        f,
        "method,seed,mean_f,cov_f,avg_f,achieved_epsilon,achieved_delta,failures"
    )?;
    for r in rows {
        let (eps, delta) = match r.achieved_privacy {
            Some((e, d)) => (fmt_float(e), fmt_float(d)),
            None => (String::new(), String::new()),
        };
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.seed,
            fmt_float(r.f_norms.mean),
            fmt_float(r.f_norms.cov),
            fmt_float(r.f_norms.avg),
            eps,
            delta,
            r.failures
        )?;
    }
    f.flush()?;
    Ok(())
}

fn write_summary_csv(path: &Path, cfg: &ExperimentConfig, reports: &[RunReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_SCHEMA}")?;
    writeln!(f, "method,runs,mean_f,cov_f,avg_f")?;
    for spec in &cfg.methods {
        let rows: Vec<&RunReport> = reports.iter().filter(|r| r.method == spec.name).collect();
        if rows.is_empty() {
            continue;
        }
        let k = rows.len() as f64;
        let mean = rows.iter().map(|r| r.f_norms.mean).sum::<f64>() / k;
        let cov = rows.iter().map(|r| r.f_norms.cov).sum::<f64>() / k;
        let avg = rows.iter().map(|r| r.f_norms.avg).sum::<f64>() / k;
        writeln!(
            f,
            "{},{},{},{},{}",
            spec.name,
            rows.len(),
            fmt_float(mean),
            fmt_float(cov),
            fmt_float(avg)
        )?;
    }
    f.flush()?;
    Ok(())
}

/// One confidence ellipse row of the figure output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipseRow {
    pub component: usize,
    pub mean_x: f64,
    pub mean_y: f64,
    pub cov_xx: f64,
    pub cov_xy: f64,
    pub cov_yy: f64,
    /// Semi-axes of the 98% confidence ellipse, major first.
    pub radius_major: f64,
    pub radius_minor: f64,
    /// Orientation of the major axis, radians in (-pi, pi].
    pub angle: f64,
}

/// Figure-style payload: per-component 2-D posterior means with 98%
/// confidence ellipses, plus the inferred hard labels of every datapoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FigureData {
    pub dims: (usize, usize),
    pub ellipses: Vec<EllipseRow>,
    pub labels: Vec<usize>,
}

/// Projects a report's posterior onto two input dimensions. The ellipse
/// radii are `sqrt(chi2_quantile * eigenvalue)` on the projected covariance
/// eigenvectors, with the two-dof 98% quantile `-2 ln 0.02`.
pub fn emit_figure_data(
    report: &RunReport,
    data: &Dataset,
    model: &MoGModel,
    dims: (usize, usize),
) -> Result<FigureData> {
    let d = model.d;
    if dims.0 >= d || dims.1 >= d || dims.0 == dims.1 {
        return Err(Error::DimensionOutOfRange(dims.0, dims.1, d));
    }
    if data.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: data.dim(),
        });
    }
    let chi2_q98 = -2.0 * (1.0 - 0.98f64).ln();
    let mut ellipses = Vec::with_capacity(report.posterior.len());
    for (idx, comp) in report.posterior.iter().enumerate() {
        let mean_x = comp.mu[dims.0];
        let mean_y = comp.mu[dims.1];
        let cov = DMatrix::from_row_slice(
            2,
            2,
            &[
                comp.sigma[(dims.0, dims.0)],
                comp.sigma[(dims.0, dims.1)],
                comp.sigma[(dims.1, dims.0)],
                comp.sigma[(dims.1, dims.1)],
            ],
        );
        let eig = cov.clone().symmetric_eigen();
        let (major, minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
            (0, 1)
        } else {
            (1, 0)
        };
        let angle = eig.eigenvectors[(1, major)].atan2(eig.eigenvectors[(0, major)]);
        ellipses.push(EllipseRow {
            component: idx,
            mean_x,
            mean_y,
            cov_xx: cov[(0, 0)],
            cov_xy: cov[(0, 1)],
            cov_yy: cov[(1, 1)],
            radius_major: (chi2_q98 * eig.eigenvalues[major]).sqrt(),
            radius_minor: (chi2_q98 * eig.eigenvalues[minor]).sqrt(),
            angle,
        });
    }
    let natural = MeansPosterior {
        components: report
            .posterior
            .iter()
            .map(GaussianMoments::to_natural)
            .collect::<Result<Vec<_>>>()?,
    };
    let labels = assign_labels(&natural, data, model)?;
    Ok(FigureData {
        dims,
        ellipses,
        labels,
    })
}

impl FigureData {
    pub fn write_csv<P: AsRef<Path>>(&self, dir: P) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let ellipse_path = dir.join("figure_ellipses.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&ellipse_path)?);
        writeln!(f, "{CSV_SCHEMA}")?;
        writeln!(
            f,
            "component,mean_x,mean_y,cov_xx,cov_xy,cov_yy,radius_major,radius_minor,angle"
        )?;
        for e in &self.ellipses {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                e.component,
                fmt_float(e.mean_x),
                fmt_float(e.mean_y),
                fmt_float(e.cov_xx),
                fmt_float(e.cov_xy),
                fmt_float(e.cov_yy),
                fmt_float(e.radius_major),
                fmt_float(e.radius_minor),
                fmt_float(e.angle)
            )?;
        }
        f.flush()?;
        let labels_path = dir.join("figure_labels.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&labels_path)?);
        writeln!(f, "{CSV_SCHEMA}")?;
        writeln!(f, "point,label")?;
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(f, "{i},{l}")?;
        }
        f.flush()?;
        Ok((ellipse_path, labels_path))
    }
}

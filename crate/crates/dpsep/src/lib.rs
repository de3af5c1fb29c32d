//! Differentially private stochastic expectation propagation for a
//! mixture-of-Gaussians clustering model.
//!
//! The crate provides:
//!
//! - [`gaussian`]: the natural-parameter Gaussian algebra (conversions,
//!   clipping, linear combination, spectrum repair, closed-form KL) that
//!   everything else is built on;
//! - [`accountant`]: sensitivity, the Gaussian mechanism on natural
//!   parameters, and a subsampled Renyi-DP accountant with noise
//!   calibration;
//! - [`mog`]: the clustering model itself — synthetic data, tilted-moment
//!   matching, cluster assignment, a seeded Gibbs ground-truth sampler and
//!   the F-norm posterior metric;
//! - [`engines`]: the EP, SEP, clipped-SEP and DP-SEP training loops;
//! - [`bound`]: the per-step privacy-accuracy KL bound, its Monte-Carlo
//!   oracle and the clipped-posterior KL closed form;
//! - [`harness`]: config-driven experiment sweeps with CSV/JSON outputs.
//!
//! The `examples/` directory walks through each capability; the thin `dpsep`
//! binary exposes the same entry points as `generate`, `run`, `calibrate`,
//! `bound` and `figure` subcommands.

pub mod accountant;
pub mod bound;
pub mod engines;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod mog;
pub mod seeding;

pub use accountant::{calibrate_sigma, epsilon_of, privatize, sensitivity, PrivacySpec, RdpCurve};
pub use bound::{clipped_sep_kl, expected_kl_bound, mc_expected_kl, BoundInputs, BoundOutcome};
pub use engines::{run, EngineConfig, Method, RunOutcome};
pub use error::{Error, Result};
pub use gaussian::{combine, kl_gaussian, psd_project, ClipMode, ClipPolicy, GaussianMoments, GaussianNat};
pub use harness::{run_experiment, ExperimentConfig, ExperimentOutcome, RunReport};
pub use mog::{
    assign_labels, f_norm, generate_synthetic, gibbs_ground_truth, site_update, tilted_moments,
    Dataset, FNorms, MeansPosterior, MoGModel,
};

//! Natural-parameter Gaussian algebra: conversions, factor arithmetic,
//! clipping, spectrum repair and closed-form KL.
//!
//! Run with `cargo run --example gaussian_algebra`.

use nalgebra::{DMatrix, DVector};

use dpsep::{combine, kl_gaussian, psd_project, ClipPolicy, GaussianMoments, GaussianNat};

fn main() -> dpsep::Result<()> {
    // Moments <-> natural parameters round trip.
    let moments = GaussianMoments::new(
        DVector::from_row_slice(&[1.0, -0.5]),
        DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.3, 1.2]),
    )?;
    let natural = moments.to_natural()?;
    let back = natural.to_moments()?;
    println!("mu round trip: {:?} -> {:?}", moments.mu.as_slice(), back.mu.as_slice());

    // Factor products are sums of natural parameters: a cavity is a
    // subtraction, an inclusion an addition.
    let prior = GaussianMoments::new(DVector::zeros(2), DMatrix::identity(2, 2))?.to_natural()?;
    let site = combine(&[(1.0, &natural), (-1.0, &prior)])?;
    let reconstructed = combine(&[(1.0, &prior), (1.0, &site)])?;
    println!(
        "cavity/inclusion reconstruction error: {:.2e}",
        (reconstructed.eta() - natural.eta()).norm()
    );

    // Norm clipping caps the joint (eta, lambda) vector without changing
    // its direction.
    let policy = ClipPolicy::joint(1.0)?;
    let clipped = natural.clip(&policy);
    println!(
        "joint norm before {:.3} / after {:.3}",
        natural.joint_norm(),
        clipped.joint_norm()
    );

    // Spectrum repair shifts an indefinite precision matrix up to a floor.
    let indefinite = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 1.0, 0.5]);
    let repaired = psd_project(&indefinite, 1e-6);
    println!(
        "smallest eigenvalue after repair: {:.2e}",
        repaired
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    );

    // Closed-form KL between two proper Gaussians.
    let widened = GaussianNat::new(natural.eta().clone(), natural.lambda() * 0.5)?;
    println!("KL(q || widened q) = {:.6}", kl_gaussian(&natural, &widened)?);
    Ok(())
}

//! Turning a rectangular forward map into a square invertible one.
//!
//! The latent-proposal sampler needs to pull a proposed field back to
//! parameter space, which requires the (reduced) forward operator to be
//! square and invertible. When the raw lifting maps parameters into a
//! higher-dimensional field space, the crate restricts the field to a
//! carefully chosen basis: the observation operator's row space extended
//! by the dominant directions of the surrogate image. The construction
//! keeps the observation model exactly equivalent, which this example
//! verifies on a random rectangular instance.
//!
//! Run with:
//!
//! ```text
//! cargo run --example reparameterize_rectangular
//! ```

use latent_imh::operators::{build_reparameterization, LinearMap};
use latent_imh::Result;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn main() -> Result<()> {
    // Field dimension 60, parameter dimension 24, observation dimension 8.
    let (d_u, d_x, d_y) = (60, 24, 8);
    let mut rng = ChaCha20Rng::seed_from_u64(29);
    let mut gaussian = |rows: usize, cols: usize| {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    };

    let observation = gaussian(d_y, d_u);
    let raw_exact = gaussian(d_u, d_x);
    // A surrogate that is a mild perturbation of the exact lifting image.
    let raw_approx = &raw_exact + 0.05 * gaussian(d_u, d_x);

    let reparam = build_reparameterization(
        &LinearMap::dense(observation.clone()),
        &LinearMap::dense(raw_approx.clone()),
    )?;
    let basis = &reparam.basis; // d_u x d_x, orthonormal columns
    let reduced_obs = &reparam.reduced_observation; // d_y x d_x

    println!("raw shapes: O {}x{}, image {}x{}", d_y, d_u, d_u, d_x);
    println!("reduced shapes: Z {}x{}, F {}x{}", d_y, d_x, d_x, d_x);

    // The basis is orthonormal and reproduces the observation operator.
    let gram_defect = reparam.orthonormality_defect();
    let obs_defect = reparam.reconstruction_defect(&observation);
    println!("basis orthonormality defect: {gram_defect:.3e}");
    println!("observation reconstruction defect: {obs_defect:.3e}");
    assert!(gram_defect < 1e-10 && obs_defect < 1e-10);

    // Observations of the reduced field equal observations of the raw one,
    // so the data model is unchanged by the reduction.
    let forward = basis.tr_mul(&raw_exact);
    let x = DVector::from_fn(d_x, |_, _| rng.sample::<f64, _>(StandardNormal));
    let raw_data = &observation * (&raw_exact * &x);
    let reduced_data = reduced_obs * (&forward * &x);
    let equivalence = (&raw_data - &reduced_data).norm() / raw_data.norm();
    println!("data-model equivalence defect: {equivalence:.3e}");
    assert!(equivalence < 1e-10);

    // The reduced exact operator is square and invertible, which is what
    // the latent-proposal sampler needs for its pull-back step.
    let det = forward.clone().lu().determinant();
    println!("reduced forward determinant: {det:.6e} (invertible: {})", det.abs() > 1e-12);
    assert!(det.abs() > 1e-12);

    println!("rectangular problem reduced to an equivalent square one");
    Ok(())
}

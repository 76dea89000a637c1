//! Gaussian algebra in one place: affine pushforward through a task frame,
//! precision-weighted product fusion, and seeded sampling.

use lfekmp::gaussian::{gaussian_affine, gaussian_product, gaussian_sample, GaussianState};
use lfekmp::manifold::TaskFrame;
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Two frames disagree about where the point should be, but with very
    // different confidence per axis.
    let a = GaussianState::new(
        DVector::from_vec(vec![0.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.01, 0.0, 0.0, 1.0]),
    )?;
    let b = GaussianState::new(
        DVector::from_vec(vec![1.0, 1.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.01]),
    )?;
    let fused = gaussian_product(&[a.clone(), b.clone()])?;
    println!("fused mean: {:?}", fused.mean.as_slice());
    println!("(x follows the x-confident frame, y the y-confident one)");

    // Pushing a Gaussian through a rotated frame rotates mean and covariance.
    let frame = TaskFrame::rigid_2d(
        std::f64::consts::FRAC_PI_2,
        DVector::from_vec(vec![0.5, -0.5]),
    );
    let moved = gaussian_affine(&frame, &b)?;
    println!("rotated mean: {:?}", moved.mean.as_slice());

    // Seeded sampling is reproducible.
    let s1 = gaussian_sample(&fused, 7, 3);
    let s2 = gaussian_sample(&fused, 7, 3);
    assert_eq!(s1, s2);
    for s in &s1 {
        println!("sample: {:?}", s.as_slice());
    }
    Ok(())
}

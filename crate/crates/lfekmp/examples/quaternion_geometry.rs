//! Unit-quaternion geometry tour: tangent-space log/exp maps, intrinsic
//! (Karcher) means, and parallel transport of covariance between tangent
//! spaces.

use lfekmp::lfekmp::karcher_mean;
use lfekmp::manifold::{parallel_transport, quat_exp, quat_log, UnitQuat};
use nalgebra::{Matrix3, Vector3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = UnitQuat::from_axis_angle(Vector3::x(), 0.4);
    let q = UnitQuat::from_axis_angle(Vector3::new(0.3, 1.0, -0.2), 1.1);

    let v = quat_log(&base, &q);
    println!("log_base(q) rotation vector: {:?}", v.as_slice());
    let back = quat_exp(&base, &v);
    println!("exp/log round-trip gap:      {:.2e} rad", back.angle_to(&q));

    // Intrinsic mean of a symmetric spread of tilts is the central tilt.
    let quats: Vec<UnitQuat> = [-0.3, -0.1, 0.1, 0.3]
        .iter()
        .map(|&d| UnitQuat::from_axis_angle(Vector3::y(), 1.0 + d))
        .collect();
    let mean = karcher_mean(&quats)?;
    let center = UnitQuat::from_axis_angle(Vector3::y(), 1.0);
    println!(
        "Karcher mean vs center tilt: {:.2e} rad",
        mean.angle_to(&center)
    );

    // Transporting a covariance between tangent spaces preserves its
    // spectrum.
    let cov = Matrix3::new(0.04, 0.01, 0.0, 0.01, 0.09, 0.0, 0.0, 0.0, 0.01);
    let to = UnitQuat::from_axis_angle(Vector3::z(), 1.3);
    let moved = parallel_transport(&base, &to, &cov);
    let e0 = cov.symmetric_eigen().eigenvalues;
    let e1 = moved.symmetric_eigen().eigenvalues;
    println!("eigenvalues before transport: {:?}", e0.as_slice());
    println!("eigenvalues after transport:  {:?}", e1.as_slice());
    Ok(())
}

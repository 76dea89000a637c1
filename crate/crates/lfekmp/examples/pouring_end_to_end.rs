//! Full 3D pipeline: scenario file -> terminal pose estimate -> task frames
//! -> generalized pouring trajectory with orientation, reporting how closely
//! the executed endpoint matches the estimated target.

use lfekmp::bridge::{endpose_estimate, Scenario};
use lfekmp::config::RunConfig;
use lfekmp::data::pouring_demos;
use lfekmp::lfekmp::{lfekmp_generalize, lfekmp_learn, TaskParameters};
use lfekmp::manifold::{TaskFrame, UnitQuat};
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::default();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/pouring_scenario.json");
    let scenario = Scenario::from_json(&std::fs::read_to_string(path)?, path)?;

    let stats = scenario.resolve_stats()?;
    let master = scenario.master.resolve(scenario.camera.as_ref())?;
    let start = scenario.start_pose();
    let target = endpose_estimate(
        &master,
        &stats,
        &start,
        cfg.seed,
        cfg.n_pos_samples,
        cfg.angle_step,
        cfg.w_rot,
    )?;

    let demos = pouring_demos(4, 9);
    let model = lfekmp_learn(&demos, &cfg)?;

    // The demonstrated end orientation in the end frame is a 100-degree tilt
    // about y; the end frame carries the rotation mapping that tilt onto the
    // estimated terminal orientation.
    let tilt = UnitQuat::from_axis_angle(Vector3::y(), 100.0_f64.to_radians());
    let end_rot = target.pose.orientation.compose(&tilt.inverse());
    let params = TaskParameters::new(vec![
        TaskFrame::rigid_3d(
            &UnitQuat::identity(),
            Vector3::new(start.position[0], start.position[1], start.position[2]),
        ),
        TaskFrame::rigid_3d(
            &end_rot,
            Vector3::new(
                target.pose.position[0],
                target.pose.position[1],
                target.pose.position[2],
            ),
        ),
    ]);
    let out = lfekmp_generalize(&model, &params, &cfg)?;

    let end = out.traj.end();
    let pos_err = (&end.position - &target.pose.position).norm();
    let ang_err = end.orientation.angle_to(&target.pose.orientation);
    println!("trajectory points:          {}", out.traj.len());
    println!("terminal position error:    {:.2} mm", pos_err * 1000.0);
    println!("terminal orientation error: {:.3} deg", ang_err.to_degrees());
    Ok(())
}

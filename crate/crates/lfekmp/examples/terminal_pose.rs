//! Estimates a skill termination pose from the bundled pouring scenario:
//! keypoints are backprojected through the camera, interaction statistics are
//! learned from the recorded final frames, and the pose nearest the start
//! pose is selected from the candidate cone.

use lfekmp::bridge::{endpose_estimate, Scenario};
use lfekmp::config::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::default();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/pouring_scenario.json");
    let scenario = Scenario::from_json(&std::fs::read_to_string(path)?, path)?;

    let stats = scenario.resolve_stats()?;
    println!("learned relative position mean: {:?}", stats.pos_mean.as_slice());
    println!(
        "learned approach angle: {:.1} deg (var {:.2e})",
        stats.angle_mean.to_degrees(),
        stats.angle_var
    );

    let master = scenario.master.resolve(scenario.camera.as_ref())?;
    let start = scenario.start_pose();
    let terminal = endpose_estimate(
        &master,
        &stats,
        &start,
        cfg.seed,
        cfg.n_pos_samples,
        cfg.angle_step,
        cfg.w_rot,
    )?;
    println!(
        "terminal position:    [{:.3}, {:.3}, {:.3}]",
        terminal.pose.position[0], terminal.pose.position[1], terminal.pose.position[2]
    );
    let q = &terminal.pose.orientation;
    println!(
        "terminal orientation: [{:.4}, {:.4}, {:.4}, {:.4}] (w, x, y, z)",
        q.w(),
        q.x(),
        q.y(),
        q.z()
    );
    Ok(())
}

//! Converts a recorded stream of semantic keypoints into a 6-DoF pose
//! trajectory for one object: position from the lower positional keypoint,
//! orientation from the object axis plus a boundary-derived reference
//! direction.

use lfekmp::bridge::{KeypointSet, ObjectRole};
use lfekmp::data::{extract_demo_trajectory, KeypointFrame, KeypointFrameSequence};
use nalgebra::Vector3;

fn bottle_at(t: f64) -> KeypointSet {
    // The bottle arcs up and over while tipping forward.
    let base = Vector3::new(0.4 * t, 0.0, 0.1 + 0.2 * (std::f64::consts::PI * t).sin());
    let tilt = 1.5 * t;
    let axis = Vector3::new(tilt.sin(), 0.0, tilt.cos());
    KeypointSet {
        object_id: "bottle".into(),
        role: ObjectRole::Slave,
        interaction: base + axis * 0.2,
        positional_1: base + axis * 0.18,
        positional_2: base,
        boundary: vec![base + Vector3::new(0.0, 0.03, 0.0)],
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 30;
    let seq = KeypointFrameSequence {
        format_version: 1,
        frames: (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                KeypointFrame {
                    time: t,
                    objects: vec![bottle_at(t)],
                }
            })
            .collect(),
    };

    let traj = extract_demo_trajectory(&seq, "bottle")?;
    println!("extracted {} poses for \"bottle\"", traj.len());
    for idx in [0, n / 2, n - 1] {
        let p = &traj.poses[idx];
        println!(
            "t={:.2}  pos=[{:.3}, {:.3}, {:.3}]  quat=[{:.3}, {:.3}, {:.3}, {:.3}]",
            traj.times[idx],
            p.position[0],
            p.position[1],
            p.position[2],
            p.orientation.w(),
            p.orientation.x(),
            p.orientation.y(),
            p.orientation.z()
        );
    }
    Ok(())
}

//! Dataset ingestion: handwriting CSV demos, demo bundles, keypoint frame
//! sequences recorded by a perception stack, and seeded task perturbations
//! for benchmarking.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::bridge::KeypointSet;
use crate::error::{Error, Result};
use crate::lfekmp::{Demonstration, TaskParameters, MODEL_FORMAT_VERSION};
use crate::manifold::{Pose, PoseTrajectory, TaskFrame, UnitQuat};

/// Parses handwriting demos from CSV text with columns
/// `demo_id,t,x,y`. Demos keep their order of first appearance; rows within
/// a demo must have strictly increasing timestamps.
pub fn parse_handwriting(content: &str, path: &str) -> Result<Vec<PoseTrajectory>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, (Vec<f64>, Vec<Pose>)> =
        std::collections::HashMap::new();

    for (lineno, line) in content.lines().enumerate() {
        let human_line = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 {
            let header: Vec<&str> = line.split(',').map(str::trim).collect();
            if header != ["demo_id", "t", "x", "y"] {
                return Err(Error::parse(
                    path,
                    format!("line 1: expected header demo_id,t,x,y, got {line:?}"),
                ));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                format!("line {human_line}: expected 4 fields, got {}", fields.len()),
            ));
        }
        let parse_num = |idx: usize, name: &str| -> Result<f64> {
            let v: f64 = fields[idx].parse().map_err(|_| {
                Error::parse(
                    path,
                    format!(
                        "line {human_line}: field {name} is not a number: {:?}",
                        fields[idx]
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    format!("line {human_line}: field {name} is not finite"),
                ));
            }
            Ok(v)
        };
        let t = parse_num(1, "t")?;
        let x = parse_num(2, "x")?;
        let y = parse_num(3, "y")?;
        let id = fields[0].to_string();
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        let entry = groups.entry(id).or_default();
        entry.0.push(t);
        entry
            .1
            .push(Pose::from_position(DVector::from_vec(vec![x, y])));
    }

    if order.is_empty() {
        return Err(Error::parse(path, "no data rows"));
    }
    order
        .into_iter()
        .map(|id| {
            let (times, poses) = groups.remove(&id).expect("present by construction");
            PoseTrajectory::new(times, poses).map_err(|e| {
                Error::parse(path, format!("demo {id}: {e}"))
            })
        })
        .collect()
}

/// Loads handwriting demos from a CSV file.
pub fn load_handwriting(path: &Path) -> Result<Vec<PoseTrajectory>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_handwriting(&content, &path.display().to_string())
}

/// Serializes demos back into the handwriting CSV format.
pub fn handwriting_csv(demos: &[PoseTrajectory]) -> String {
    let mut out = String::from("demo_id,t,x,y\n");
    for (i, demo) in demos.iter().enumerate() {
        for (t, pose) in demo.times.iter().zip(&demo.poses) {
            out.push_str(&format!(
                "{i},{t},{},{}\n",
                pose.position[0], pose.position[1]
            ));
        }
    }
    out
}

/// A demonstration set with its task frames, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoBundle {
    pub format_version: u32,
    pub demos: Vec<Demonstration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl DemoBundle {
    pub fn new(demos: Vec<Demonstration>, provenance: Option<String>) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            demos,
            provenance,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(s: &str, path: &str) -> Result<Self> {
        let bundle: DemoBundle =
            serde_json::from_str(s).map_err(|e| Error::parse(path, e.to_string()))?;
        if bundle.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::parse(
                path,
                format!("unsupported format version {}", bundle.format_version),
            ));
        }
        Ok(bundle)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&content, &path.display().to_string())
    }
}

/// Wraps bare position trajectories into demonstrations with endpoint
/// frames.
pub fn with_endpoint_frames(demos: &[PoseTrajectory]) -> Result<Vec<Demonstration>> {
    demos
        .iter()
        .map(|traj| {
            Ok(Demonstration {
                frames: TaskParameters::endpoint_frames(traj)?,
                traj: traj.clone(),
            })
        })
        .collect()
}

/// Synthesizes G-letter demos: a circular arc from 60 to 345 degrees
/// followed by a straight stroke pulled inward, with smooth per-demo
/// variation in scale, rotation and endpoint placement.
pub fn gshape_demos(n_demos: usize, n_points: usize, seed: u64) -> Vec<PoseTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_demos)
        .map(|_| {
            let scale = 1.0 + 0.06 * rng.random_range(-1.0..1.0);
            let rot: f64 = 0.05 * rng.random_range(-1.0..1.0);
            let wobble = 0.015 * rng.random_range(-1.0..1.0);
            let start_off = [
                0.03 * rng.random_range(-1.0..1.0),
                0.03 * rng.random_range(-1.0..1.0),
            ];
            let end_off = [
                0.03 * rng.random_range(-1.0..1.0),
                0.03 * rng.random_range(-1.0..1.0),
            ];

            let arc_start = 60.0_f64.to_radians();
            let arc_end = 345.0_f64.to_radians();
            let arc_len = arc_end - arc_start;
            let bar_end = [0.3, -0.259];
            let bar_start = [arc_end.cos(), arc_end.sin()];
            let bar_len = ((bar_end[0] - bar_start[0]).powi(2)
                + (bar_end[1] - bar_start[1]).powi(2))
            .sqrt();
            let total = arc_len + bar_len;
            let split = arc_len / total;

            let times: Vec<f64> = (0..n_points)
                .map(|i| i as f64 / (n_points - 1) as f64)
                .collect();
            let poses: Vec<Pose> = times
                .iter()
                .map(|&u| {
                    let (mut x, mut y) = if u <= split {
                        let phi = arc_start + arc_len * (u / split);
                        (phi.cos(), phi.sin())
                    } else {
                        let s = (u - split) / (1.0 - split);
                        (
                            bar_start[0] + (bar_end[0] - bar_start[0]) * s,
                            bar_start[1] + (bar_end[1] - bar_start[1]) * s,
                        )
                    };
                    // Smooth per-demo deformation.
                    let r = wobble * (3.0 * std::f64::consts::PI * u).sin();
                    x += r * x;
                    y += r * y;
                    let (s, c) = rot.sin_cos();
                    let (xr, yr) = (c * x - s * y, s * x + c * y);
                    Pose::from_position(DVector::from_vec(vec![
                        scale * xr + (1.0 - u) * start_off[0] + u * end_off[0],
                        scale * yr + (1.0 - u) * start_off[1] + u * end_off[1],
                    ]))
                })
                .collect();
            PoseTrajectory::new(times, poses).expect("strictly increasing by construction")
        })
        .collect()
}

/// Synthesizes 3D pouring demos with orientation: the tool moves toward the
/// target along a lifted arc while tilting about the y axis up to roughly
/// 100 degrees. Per-demo tilt deltas are symmetric so the demo-mean end tilt
/// is exactly 100 degrees, and per-demo endpoint offsets give the cross-demo
/// variance that task-parameterized learning needs.
pub fn pouring_demos(n_demos: usize, seed: u64) -> Vec<Demonstration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deltas: [f64; 4] = [-6.0, -2.0, 2.0, 6.0];
    (0..n_demos)
        .map(|i| {
            let jitter = 0.02 * rng.random_range(-1.0..1.0);
            let tilt_max = (100.0 + deltas[i % deltas.len()]).to_radians();
            let end_off = [
                0.05 * rng.random_range(-1.0..1.0),
                0.05 * rng.random_range(-1.0..1.0),
                0.02 * rng.random_range(-1.0..1.0),
            ];
            let n = 60;
            let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let poses: Vec<Pose> = times
                .iter()
                .map(|&t| {
                    let pos = DVector::from_vec(vec![
                        0.4 * t + t * end_off[0],
                        jitter * (std::f64::consts::PI * t).sin() + t * end_off[1],
                        0.1 + 0.15 * (std::f64::consts::PI * t).sin() + t * end_off[2],
                    ]);
                    Pose::new(pos, UnitQuat::from_axis_angle(Vector3::y(), tilt_max * t))
                })
                .collect();
            let traj = PoseTrajectory::new(times, poses).expect("strictly increasing");
            let frames = TaskParameters::endpoint_frames(&traj).expect(">= 2 points");
            Demonstration { traj, frames }
        })
        .collect()
}

/// One time-stamped perception frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame {
    pub time: f64,
    pub objects: Vec<KeypointSet>,
}

/// A recorded stream of keypoint frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrameSequence {
    pub format_version: u32,
    pub frames: Vec<KeypointFrame>,
}

impl KeypointFrameSequence {
    pub fn from_json(s: &str, path: &str) -> Result<Self> {
        let seq: KeypointFrameSequence =
            serde_json::from_str(s).map_err(|e| Error::parse(path, e.to_string()))?;
        if seq.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::parse(
                path,
                format!("unsupported format version {}", seq.format_version),
            ));
        }
        Ok(seq)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&content, &path.display().to_string())
    }
}

/// Pose of one object instance from its keypoints: position at K_p2, z axis
/// along K_p2 to K_p1, x axis from the first boundary keypoint projected
/// orthogonally to z (deterministic fallback when none projects), y = z × x.
pub fn keypoints_to_pose(set: &KeypointSet) -> Result<Pose> {
    set.validate()?;
    let z = set.axis()?;
    let x = set
        .boundary
        .iter()
        .find_map(|b| {
            let v = b - set.positional_2;
            let proj = v - z * v.dot(&z);
            (proj.norm() > 1e-9).then(|| proj.normalize())
        })
        .unwrap_or_else(|| {
            // No usable boundary keypoint: pick the coordinate axis least
            // aligned with z.
            let pick = if z.x.abs() <= z.y.abs() && z.x.abs() <= z.z.abs() {
                Vector3::x()
            } else if z.y.abs() <= z.z.abs() {
                Vector3::y()
            } else {
                Vector3::z()
            };
            (pick - z * pick.dot(&z)).normalize()
        });
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    Ok(Pose::new(
        DVector::from_column_slice(set.positional_2.as_slice()),
        UnitQuat::from_rotation_matrix(&m),
    ))
}

/// Builds a pose trajectory for `object_id` across a keypoint stream.
pub fn extract_demo_trajectory(
    seq: &KeypointFrameSequence,
    object_id: &str,
) -> Result<PoseTrajectory> {
    let mut times = Vec::new();
    let mut poses = Vec::new();
    for (i, frame) in seq.frames.iter().enumerate() {
        let set = frame
            .objects
            .iter()
            .find(|o| o.object_id == object_id)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "frame {i}: object {object_id:?} not present"
                ))
            })?;
        times.push(frame.time);
        poses.push(keypoints_to_pose(set)?);
    }
    PoseTrajectory::new(times, poses)
}

/// Seeded rigid perturbation of task frames for benchmarking: every frame is
/// translated by up to `translation_scale` times the anchor span and rotated
/// by up to `rotation_scale` radians, deterministically per seed.
pub fn perturb_task(params: &TaskParameters, seed: u64, cfg: &crate::config::RunConfig) -> Result<TaskParameters> {
    if params.is_empty() {
        return Err(Error::InvalidArgument("task parameters are empty".into()));
    }
    let dim = params.dim();
    let span = (params.frames.last().unwrap().anchor() - params.frames[0].anchor())
        .norm()
        .max(1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = params
        .frames
        .iter()
        .map(|f| {
            let shift = DVector::from_fn(dim, |_, _| {
                rng.random_range(-1.0..1.0) * cfg.translation_scale * span
            });
            let b = f.anchor() + shift;
            let a = match dim {
                2 => {
                    let angle = rng.random_range(-1.0..1.0) * cfg.rotation_scale;
                    let (s, c) = angle.sin_cos();
                    DMatrix::from_row_slice(2, 2, &[c, -s, s, c]) * &f.a
                }
                3 => {
                    let axis = Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let angle = rng.random_range(-1.0..1.0) * cfg.rotation_scale;
                    let q = UnitQuat::from_axis_angle(axis, angle);
                    let r = q.rotation_matrix();
                    DMatrix::from_fn(3, 3, |i, j| r[(i, j)]) * &f.a
                }
                _ => f.a.clone(),
            };
            TaskFrame::new(a, b)
        })
        .collect();
    Ok(TaskParameters::new(frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::ObjectRole;
    use approx::assert_abs_diff_eq;
    

    #[test]
    fn csv_round_trip() {
        let demos = gshape_demos(3, 40, 1);
        let csv = handwriting_csv(&demos);
        let back = parse_handwriting(&csv, "<mem>").unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in demos.iter().zip(&back) {
            assert_eq!(a.len(), b.len());
            for (pa, pb) in a.poses.iter().zip(&b.poses) {
                assert!((&pa.position - &pb.position).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_errors_name_line_and_field() {
        let bad_header = "a,b,c,d\n0,0,1,1\n";
        let err = parse_handwriting(bad_header, "f.csv").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");

        let bad_count = "demo_id,t,x,y\n0,0.0,1.0\n";
        let err = parse_handwriting(bad_count, "f.csv").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("4 fields"), "{err}");

        let bad_num = "demo_id,t,x,y\n0,0.0,oops,1.0\n";
        let err = parse_handwriting(bad_num, "f.csv").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains('x'), "{err}");

        let nan = "demo_id,t,x,y\n0,0.0,NaN,1.0\n";
        let err = parse_handwriting(nan, "f.csv").unwrap_err().to_string();
        assert!(err.contains("not finite"), "{err}");
    }

    #[test]
    fn csv_demo_order_is_first_appearance() {
        let csv = "demo_id,t,x,y\nb,0,0,0\nb,1,1,1\na,0,5,5\na,1,6,6\n";
        let demos = parse_handwriting(csv, "<mem>").unwrap();
        assert_eq!(demos.len(), 2);
        assert_eq!(demos[0].start().position[0], 0.0);
        assert_eq!(demos[1].start().position[0], 5.0);
    }

    #[test]
    fn csv_rejects_non_monotone_times() {
        let csv = "demo_id,t,x,y\n0,0.5,0,0\n0,0.5,1,1\n";
        assert!(parse_handwriting(csv, "<mem>").is_err());
    }

    #[test]
    fn gshape_is_deterministic_and_sized() {
        let a = gshape_demos(6, 200, 7);
        let b = gshape_demos(6, 200, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|d| d.len() == 200));
        let c = gshape_demos(6, 200, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn gshape_traces_the_letter() {
        let demos = gshape_demos(1, 400, 0);
        let demo = &demos[0];
        // Starts near the 60-degree point of the unit circle.
        let start = &demo.start().position;
        assert!((start[0] - 0.5).abs() < 0.1 && (start[1] - 0.866).abs() < 0.1);
        // Ends on the inward stroke, strictly inside the circle.
        let end = &demo.end().position;
        assert!(end.norm() < 0.75, "end {end:?}");
        // The arc stays close to radius 1 for the first two thirds.
        for pose in &demo.poses[..260] {
            let r = pose.position.norm();
            assert!((r - 1.0).abs() < 0.15, "radius {r}");
        }
    }

    #[test]
    fn bundle_round_trip_and_version_check() {
        let demos = with_endpoint_frames(&gshape_demos(2, 30, 3)).unwrap();
        let bundle = DemoBundle::new(demos, Some("unit test".into()));
        let back = DemoBundle::from_json(&bundle.to_json(), "<mem>").unwrap();
        assert_eq!(bundle, back);

        let mut broken = bundle.clone();
        broken.format_version = 99;
        assert!(DemoBundle::from_json(&broken.to_json(), "<mem>").is_err());
    }

    fn cup(pos: Vector3<f64>, tilt: f64) -> KeypointSet {
        let axis = Vector3::new(tilt.sin(), 0.0, tilt.cos());
        KeypointSet {
            object_id: "cup".into(),
            role: ObjectRole::Slave,
            positional_2: pos,
            positional_1: pos + axis * 0.1,
            interaction: pos + Vector3::new(0.04, 0.0, 0.1),
            boundary: vec![pos + Vector3::new(0.06, 0.0, 0.0)],
        }
    }

    #[test]
    fn keypoint_pose_has_orthonormal_axes() {
        let pose = keypoints_to_pose(&cup(Vector3::new(0.2, 0.1, 0.0), 0.4)).unwrap();
        let r = pose.orientation.rotation_matrix();
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        // z column along the object axis.
        let z = r.column(2);
        let expected = Vector3::new(0.4_f64.sin(), 0.0, 0.4_f64.cos());
        assert!((Vector3::new(z[0], z[1], z[2]) - expected).norm() < 1e-12);
        assert_abs_diff_eq!(pose.position[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn coincident_positional_keypoints_rejected() {
        let mut bad = cup(Vector3::zeros(), 0.0);
        bad.positional_1 = bad.positional_2;
        assert!(keypoints_to_pose(&bad).is_err());
    }

    #[test]
    fn extraction_follows_the_object() {
        let frames: Vec<KeypointFrame> = (0..5)
            .map(|i| KeypointFrame {
                time: i as f64,
                objects: vec![cup(Vector3::new(0.1 * i as f64, 0.0, 0.0), 0.1 * i as f64)],
            })
            .collect();
        let seq = KeypointFrameSequence {
            format_version: MODEL_FORMAT_VERSION,
            frames,
        };
        let traj = extract_demo_trajectory(&seq, "cup").unwrap();
        assert_eq!(traj.len(), 5);
        assert_abs_diff_eq!(traj.end().position[0], 0.4, epsilon = 1e-15);
        assert!(extract_demo_trajectory(&seq, "bowl").is_err());
    }

    #[test]
    fn perturbation_is_seeded_and_bounded() {
        let cfg = crate::config::RunConfig::default();
        let demos = gshape_demos(1, 50, 0);
        let params = TaskParameters::endpoint_frames(&demos[0]).unwrap();
        let a = perturb_task(&params, 5, &cfg).unwrap();
        let b = perturb_task(&params, 5, &cfg).unwrap();
        assert_eq!(a, b);
        let c = perturb_task(&params, 6, &cfg).unwrap();
        assert_ne!(a, c);

        let span = (params.frames[1].anchor() - params.frames[0].anchor()).norm();
        for seed in 0..50 {
            let p = perturb_task(&params, seed, &cfg).unwrap();
            for (orig, new) in params.frames.iter().zip(&p.frames) {
                let shift = (new.anchor() - orig.anchor()).norm();
                // Component-wise uniform draws: at most √dim · scale · span.
                assert!(shift <= cfg.translation_scale * span * 2.0_f64.sqrt() + 1e-12);
                assert!(new.is_rigid());
            }
        }
    }
}

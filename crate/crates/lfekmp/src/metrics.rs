//! Shape-preservation metrics: topological similarity, smoothness and
//! endpoint error.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfekmp::TaskParameters;
use crate::manifold::PoseTrajectory;

/// Metric summary for one generated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Topological similarity in [-100, 100] percent.
    pub c_s: f64,
    /// Mean discrete-acceleration magnitude; smaller is smoother.
    pub kappa_s: f64,
    /// Max start/end deviation from the task-frame anchors.
    pub endpoint_error: f64,
    pub n_points: usize,
}

/// Resamples positions to `n` points equally spaced in cumulative arc
/// length, with linear interpolation between input points.
pub fn arc_length_resample(traj: &PoseTrajectory, n: usize) -> Vec<DVector<f64>> {
    let pts = traj.positions();
    assert!(pts.len() >= 2 && n >= 2);
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        let d = (&w[1] - &w[0]).norm();
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    if total == 0.0 {
        return vec![pts[0].clone(); n];
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let target = total * i as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let alpha = if span == 0.0 {
            0.0
        } else {
            ((target - cum[seg]) / span).clamp(0.0, 1.0)
        };
        out.push(&pts[seg] * (1.0 - alpha) + &pts[seg + 1] * alpha);
    }
    out
}

/// Mean cosine between corresponding segment vectors of the generated and
/// reference trajectories, in percent. Both trajectories are arc-length
/// resampled to the reference length first.
pub fn topological_similarity(gen: &PoseTrajectory, reference: &PoseTrajectory) -> Result<f64> {
    if gen.len() < 2 || reference.len() < 2 {
        return Err(Error::InvalidArgument(
            "topological_similarity needs >= 2 points per trajectory".into(),
        ));
    }
    if gen.dim() != reference.dim() {
        return Err(Error::DimensionMismatch(
            "topological_similarity trajectory dimensions differ".into(),
        ));
    }
    let n = reference.len();
    let g = arc_length_resample(gen, n);
    let r = arc_length_resample(reference, n);
    let mut acc = 0.0;
    for t in 0..n - 1 {
        let dg = &g[t + 1] - &g[t];
        let dr = &r[t + 1] - &r[t];
        let ng = dg.norm();
        let nr = dr.norm();
        acc += if ng == 0.0 && nr == 0.0 {
            1.0
        } else if ng == 0.0 || nr == 0.0 {
            0.0
        } else {
            dg.dot(&dr) / (ng * nr)
        };
    }
    Ok(acc / (n - 1) as f64 * 100.0)
}

/// Mean discrete-acceleration magnitude
/// `(1/(N−2)) Σ ‖ξ_{t+1} − 2ξ_t + ξ_{t−1}‖ / Δt²` over a uniformly sampled
/// trajectory.
pub fn smoothness(traj: &PoseTrajectory) -> Result<f64> {
    let n = traj.len();
    if n < 3 {
        return Err(Error::InvalidArgument(
            "smoothness needs >= 3 points".into(),
        ));
    }
    let dt = (traj.times[n - 1] - traj.times[0]) / (n - 1) as f64;
    let pts = traj.positions();
    let mut acc = 0.0;
    for t in 1..n - 1 {
        let second = &pts[t + 1] - &pts[t] * 2.0 + &pts[t - 1];
        acc += second.norm() / (dt * dt);
    }
    Ok(acc / (n - 2) as f64)
}

/// Max of start/end position deviations from the first/last frame anchors.
pub fn endpoint_error(gen: &PoseTrajectory, anchors: &TaskParameters) -> Result<f64> {
    if anchors.frames.len() != 2 {
        return Err(Error::InvalidArgument(
            "endpoint_error expects exactly 2 task frames".into(),
        ));
    }
    if gen.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let start = (&gen.start().position - anchors.frames[0].anchor()).norm();
    let end = (&gen.end().position - anchors.frames[1].anchor()).norm();
    Ok(start.max(end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{Pose, TaskFrame};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj_from(points: Vec<Vec<f64>>) -> PoseTrajectory {
        let n = points.len();
        PoseTrajectory::new(
            (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
            points
                .into_iter()
                .map(|p| Pose::from_position(DVector::from_vec(p)))
                .collect(),
        )
        .unwrap()
    }

    fn reversed(t: &PoseTrajectory) -> PoseTrajectory {
        let mut poses = t.poses.clone();
        poses.reverse();
        PoseTrajectory::new(t.times.clone(), poses).unwrap()
    }

    #[test]
    fn identical_trajectories_score_100() {
        let t = traj_from(vec![
            vec![0.0, 0.0],
            vec![1.0, 0.5],
            vec![2.0, 0.0],
            vec![3.0, 1.0],
        ]);
        assert_abs_diff_eq!(topological_similarity(&t, &t).unwrap(), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn reversed_trajectory_scores_minus_100() {
        // Collinear points: every reversed segment is exactly anti-parallel.
        let t = traj_from(vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![3.0, 1.5]]);
        assert_abs_diff_eq!(
            topological_similarity(&reversed(&t), &t).unwrap(),
            -100.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn orthogonal_rotation_scores_zero() {
        let t = traj_from(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]);
        let rotated = traj_from(vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![0.0, 2.0]]);
        assert_abs_diff_eq!(
            topological_similarity(&rotated, &t).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn similarity_invariant_under_translation_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 / 19.0;
                vec![
                    t + 0.1 * rng.random_range(-1.0..1.0),
                    (4.0 * t).sin() + 0.1 * rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let gen = traj_from(pts.clone());
        let reference = traj_from(
            (0..20)
                .map(|i| {
                    let t = i as f64 / 19.0;
                    vec![t, (4.0 * t).cos()]
                })
                .collect(),
        );
        let base = topological_similarity(&gen, &reference).unwrap();
        let moved = traj_from(pts.iter().map(|p| vec![3.0 * p[0] + 7.0, 3.0 * p[1] - 2.0]).collect());
        let score = topological_similarity(&moved, &reference).unwrap();
        assert_abs_diff_eq!(base, score, epsilon = 1e-9);
        assert!((-100.0..=100.0).contains(&score));
    }

    #[test]
    fn straight_line_has_zero_smoothness() {
        let t = traj_from((0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect());
        assert_abs_diff_eq!(smoothness(&t).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_on_unit_grid_has_smoothness_two() {
        let poses: Vec<Pose> = (0..8)
            .map(|i| Pose::from_position(DVector::from_vec(vec![(i * i) as f64])))
            .collect();
        let t = PoseTrajectory::new((0..8).map(|i| i as f64).collect(), poses).unwrap();
        assert_abs_diff_eq!(smoothness(&t).unwrap(), 2.0);
    }

    #[test]
    fn smoothness_matches_finite_difference_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let n = rng.random_range(5..30);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                .collect();
            let t = traj_from(pts.clone());
            let dt = 1.0 / (n - 1) as f64;
            let mut oracle = 0.0;
            for i in 1..n - 1 {
                let ax = pts[i + 1][0] - 2.0 * pts[i][0] + pts[i - 1][0];
                let ay = pts[i + 1][1] - 2.0 * pts[i][1] + pts[i - 1][1];
                oracle += (ax * ax + ay * ay).sqrt() / (dt * dt);
            }
            oracle /= (n - 2) as f64;
            assert_abs_diff_eq!(smoothness(&t).unwrap(), oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn smoothness_needs_three_points() {
        let t = traj_from(vec![vec![0.0], vec![1.0]]);
        assert!(smoothness(&t).is_err());
    }

    #[test]
    fn endpoint_error_cases() {
        let t = traj_from(vec![vec![0.3, 0.4], vec![0.5, 0.5], vec![1.0, 1.0]]);
        let exact = TaskParameters {
            frames: vec![
                TaskFrame::new(
                    nalgebra::DMatrix::identity(2, 2),
                    DVector::from_vec(vec![0.3, 0.4]),
                ),
                TaskFrame::new(
                    nalgebra::DMatrix::identity(2, 2),
                    DVector::from_vec(vec![1.0, 1.0]),
                ),
            ],
        };
        assert_abs_diff_eq!(endpoint_error(&t, &exact).unwrap(), 0.0);

        let offset = TaskParameters {
            frames: vec![
                TaskFrame::new(nalgebra::DMatrix::identity(2, 2), DVector::zeros(2)),
                TaskFrame::new(
                    nalgebra::DMatrix::identity(2, 2),
                    DVector::from_vec(vec![1.0, 1.0]),
                ),
            ],
        };
        // Start offset (0.3, 0.4) → 0.5, end exact; max over the two terms.
        let got = endpoint_error(&t, &offset).unwrap();
        let brute = f64::max(
            (0.3f64 * 0.3 + 0.4 * 0.4).sqrt(),
            0.0,
        );
        assert_abs_diff_eq!(got, brute, epsilon = 1e-15);
        assert_abs_diff_eq!(got, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn metrics_are_order_sensitive() {
        let t = traj_from(vec![
            vec![0.0, 0.0],
            vec![1.0, 0.9],
            vec![2.0, 0.0],
            vec![3.0, 1.4],
        ]);
        let r = reversed(&t);
        assert!(topological_similarity(&t, &t).unwrap() > topological_similarity(&r, &t).unwrap());
    }
}

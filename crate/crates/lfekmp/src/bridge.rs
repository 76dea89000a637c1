//! Semantic-keypoint bridge: camera back-projection, topological
//! normalization of interaction keypoints, interaction-state statistics and
//! terminal pose estimation.
//!
//! Keypoint corrections act in the x-y projection about the master object's
//! first positional keypoint; the z offset is carried through unchanged.

use nalgebra::{DVector, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{pose_distance, Pose, UnitQuat};

/// Role of an object in an interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectRole {
    /// Target object (e.g. the cup being poured into).
    Master,
    /// Manipulated object.
    Slave,
}

/// Labeled semantic keypoints of one object instance: one interaction
/// keypoint, two positional keypoints defining the object axis, and any
/// number of boundary keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub object_id: String,
    pub role: ObjectRole,
    /// K_i — contact-relevant point.
    pub interaction: Vector3<f64>,
    /// K_p1 — axis top (e.g. cup mouth center).
    pub positional_1: Vector3<f64>,
    /// K_p2 — axis bottom (e.g. cup base center).
    pub positional_2: Vector3<f64>,
    /// K_b — extent-defining points.
    #[serde(default)]
    pub boundary: Vec<Vector3<f64>>,
}

impl KeypointSet {
    pub fn validate(&self) -> Result<()> {
        let all = self.all_points();
        if all.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Degenerate(format!(
                "keypoint set {}: non-finite coordinate",
                self.object_id
            )));
        }
        if (self.positional_1 - self.positional_2).norm() == 0.0 {
            return Err(Error::Degenerate(format!(
                "keypoint set {}: positional keypoints coincide",
                self.object_id
            )));
        }
        Ok(())
    }

    fn all_points(&self) -> Vec<Vector3<f64>> {
        let mut v = vec![self.interaction, self.positional_1, self.positional_2];
        v.extend(self.boundary.iter().copied());
        v
    }

    /// Object axis Z: unit vector from K_p2 to K_p1.
    pub fn axis(&self) -> Result<Vector3<f64>> {
        let d = self.positional_1 - self.positional_2;
        let n = d.norm();
        if n == 0.0 {
            return Err(Error::Degenerate("positional keypoints coincide".into()));
        }
        Ok(d / n)
    }

    /// Reference keypoints used for normalization: everything except K_p1.
    fn correction_points(&self) -> Vec<Vector3<f64>> {
        let mut v = vec![self.positional_2];
        v.extend(self.boundary.iter().copied());
        v
    }

    /// Deterministic total order used to pick a canonical instance
    /// independently of input ordering.
    fn sort_key(&self) -> (String, Vec<u64>) {
        let bits: Vec<u64> = self
            .all_points()
            .iter()
            .flat_map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect();
        (self.object_id.clone(), bits)
    }
}

/// Pinhole camera with extrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidArgument(
                "camera intrinsics must be upper triangular".into(),
            ));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(Error::InvalidArgument(
                "camera focal lengths must be positive".into(),
            ));
        }
        let gram = self.rotation.transpose() * self.rotation;
        if (gram - Matrix3::identity()).amax() > 1e-9 {
            return Err(Error::InvalidArgument(
                "camera rotation must be orthonormal".into(),
            ));
        }
        Ok(())
    }

    /// Standard pinhole back-projection: `P = R·(z · K⁻¹ · [u, v, 1]ᵀ) + t`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Result<Vector3<f64>> {
        if z <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "backproject needs depth > 0, got {z}"
            )));
        }
        let k_inv = self
            .intrinsics
            .try_inverse()
            .ok_or_else(|| Error::Singular("camera intrinsics not invertible".into()))?;
        let ray = k_inv * Vector3::new(u, v, 1.0);
        Ok(self.rotation * (ray * z) + self.translation)
    }

    /// Forward projection, the inverse of [`CameraModel::backproject`].
    pub fn project(&self, p: &Vector3<f64>) -> Result<(f64, f64, f64)> {
        let cam = self.rotation.transpose() * (p - self.translation);
        if cam.z <= 0.0 {
            return Err(Error::InvalidArgument(
                "point projects behind the camera".into(),
            ));
        }
        let pix = self.intrinsics * cam;
        Ok((pix.x / pix.z, pix.y / pix.z, cam.z))
    }
}

/// Interaction-state statistics over the final frames of the demonstrations.
///
/// Positions are stored relative to the canonical master instance's K_p1
/// (x-y corrected, z carried through).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionStats {
    pub pos_mean: Vector3<f64>,
    pub pos_var: Vector3<f64>,
    /// Angle between the master and slave object axes (radians).
    pub angle_mean: f64,
    pub angle_var: f64,
    /// The master instance the positions are normalized against.
    pub canonical_master: KeypointSet,
}

/// Terminal pose of a skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalPose {
    pub pose: Pose,
}

fn xy(p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

/// Transfers the topological relation of `(O→A, O→B)` onto `O→C`: rotates
/// `OC` (in the x-y projection about O) by the signed angle from `OA` to
/// `OB` and scales it by `‖OB‖/‖OA‖`. The returned point keeps C's z.
pub fn normalize_interaction_keypoint(
    o: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let oa = xy(a) - xy(o);
    let ob = xy(b) - xy(o);
    let oc = xy(c) - xy(o);
    if oa.norm() == 0.0 || oc.norm() == 0.0 {
        return Err(Error::Degenerate(
            "normalize_interaction_keypoint: degenerate x-y projection".into(),
        ));
    }
    let theta = (oa.x * ob.y - oa.y * ob.x).atan2(oa.dot(&ob));
    let ratio = ob.norm() / oa.norm();
    let (s, co) = theta.sin_cos();
    let rotated = Vector2::new(co * oc.x - s * oc.y, s * oc.x + co * oc.y);
    let d = xy(o) + rotated * ratio;
    Ok(Vector3::new(d.x, d.y, c.z))
}

/// Corrects a point expressed relative to `from`'s K_p1 onto the geometry of
/// `to`, averaging over the shared correction keypoints. Returns the
/// corrected offset relative to `to`'s K_p1.
fn correct_relative(
    rel: &Vector3<f64>,
    from: &KeypointSet,
    to: &KeypointSet,
) -> Result<Vector3<f64>> {
    let o = to.positional_1;
    let c = o + rel;
    let from_pts = from.correction_points();
    let to_pts = to.correction_points();
    let mut acc = Vector3::zeros();
    let mut count = 0usize;
    for (fp, tp) in from_pts.iter().zip(&to_pts) {
        let a = o + (fp - from.positional_1);
        let b = o + (tp - to.positional_1);
        if (xy(&a) - xy(&o)).norm() == 0.0 {
            continue;
        }
        match normalize_interaction_keypoint(&o, &a, &b, &c) {
            Ok(d) => {
                acc += d - o;
                count += 1;
            }
            Err(_) => continue,
        }
    }
    if count == 0 {
        return Err(Error::Degenerate(
            "no usable correction keypoints (all degenerate in the x-y projection)".into(),
        ));
    }
    Ok(acc / count as f64)
}

/// Learns interaction-state statistics from the final frames of >= 2
/// demonstrations. Each slave interaction keypoint is corrected against a
/// canonical master instance before the moments are taken, so instances of
/// different scale contribute consistently.
pub fn learn_interaction_stats(
    final_frames: &[(KeypointSet, KeypointSet)],
) -> Result<InteractionStats> {
    if final_frames.len() < 2 {
        return Err(Error::InvalidArgument(
            "learn_interaction_stats needs >= 2 final frames".into(),
        ));
    }
    for (m, s) in final_frames {
        m.validate()?;
        s.validate()?;
    }
    // Canonical instance chosen by a content-based order, so the result does
    // not depend on the input permutation.
    let canonical = final_frames
        .iter()
        .map(|(m, _)| m)
        .min_by(|a, b| a.sort_key().cmp(&b.sort_key()))
        .expect("non-empty")
        .clone();

    let mut positions = Vec::with_capacity(final_frames.len());
    let mut angles = Vec::with_capacity(final_frames.len());
    for (master, slave) in final_frames {
        let rel = slave.interaction - master.positional_1;
        let corrected = correct_relative(&rel, master, &canonical)?;
        positions.push(corrected);
        let cos = master.axis()?.dot(&slave.axis()?).clamp(-1.0, 1.0);
        angles.push(cos.acos());
    }

    let n = positions.len() as f64;
    let pos_mean = positions.iter().sum::<Vector3<f64>>() / n;
    let pos_var = positions
        .iter()
        .map(|p| (p - pos_mean).component_mul(&(p - pos_mean)))
        .sum::<Vector3<f64>>()
        / (n - 1.0);
    let angle_mean = angles.iter().sum::<f64>() / n;
    let angle_var = angles.iter().map(|a| (a - angle_mean).powi(2)).sum::<f64>() / (n - 1.0);

    Ok(InteractionStats {
        pos_mean,
        pos_var,
        angle_mean,
        angle_var,
        canonical_master: canonical,
    })
}

/// Unit vector orthogonal to `z`, chosen deterministically.
fn orthogonal_unit(z: &Vector3<f64>) -> Vector3<f64> {
    let pick = if z.x.abs() <= z.y.abs() && z.x.abs() <= z.z.abs() {
        Vector3::x()
    } else if z.y.abs() <= z.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    z.cross(&pick).normalize()
}

/// Shortest-arc rotation taking the world z axis to `dir`.
fn quat_from_z_to(dir: &Vector3<f64>) -> UnitQuat {
    let z = Vector3::z();
    let d = dir.normalize();
    let dot = z.dot(&d).clamp(-1.0, 1.0);
    if dot > 1.0 - 1e-12 {
        return UnitQuat::identity();
    }
    if dot < -1.0 + 1e-12 {
        return UnitQuat::from_axis_angle(Vector3::x(), std::f64::consts::PI);
    }
    let axis = z.cross(&d);
    UnitQuat::from_axis_angle(axis, dot.acos())
}

/// Enumerates the orientation candidates considered by
/// [`endpose_estimate`]: slave axes on the cone at `alpha` about the master
/// axis, azimuth stepped at `angle_step`. Exposed so a brute-force check can
/// re-enumerate the identical grid.
pub fn endpose_candidates(
    z_master: &Vector3<f64>,
    alpha: f64,
    angle_step: f64,
) -> Vec<Vector3<f64>> {
    if alpha.abs() < 1e-12 {
        return vec![*z_master];
    }
    let e1 = orthogonal_unit(z_master);
    let e2 = z_master.cross(&e1);
    let steps = (std::f64::consts::TAU / angle_step).ceil() as usize;
    (0..steps)
        .map(|i| {
            let phi = i as f64 * angle_step;
            z_master * alpha.cos() + (e1 * phi.cos() + e2 * phi.sin()) * alpha.sin()
        })
        .collect()
}

/// Estimates the skill termination pose for a master instance:
///
/// 1. draws `n_pos_samples` target positions from the learned distribution,
///    corrects each onto this master's geometry and keeps the draw closest
///    to the corrected mean;
/// 2. enumerates slave-axis candidates on the cone at the learned angle
///    about the master axis, at `angle_step` increments;
/// 3. returns the candidate minimizing the pose distance to `p_start`.
pub fn endpose_estimate(
    master: &KeypointSet,
    stats: &InteractionStats,
    p_start: &Pose,
    seed: u64,
    n_pos_samples: usize,
    angle_step: f64,
    w_rot: f64,
) -> Result<TerminalPose> {
    if angle_step <= 0.0 {
        return Err(Error::InvalidArgument("angle_step must be > 0".into()));
    }
    if n_pos_samples == 0 {
        return Err(Error::InvalidArgument("n_pos_samples must be >= 1".into()));
    }
    master.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = stats.pos_var.map(|v| v.max(0.0).sqrt());
    let corrected_mean = correct_relative(&stats.pos_mean, &stats.canonical_master, master)?;
    let mut best_pos: Option<(f64, Vector3<f64>)> = None;
    for _ in 0..n_pos_samples {
        let noise = Vector3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        let draw = stats.pos_mean + sd.component_mul(&noise);
        let corrected = correct_relative(&draw, &stats.canonical_master, master)?;
        let d = (corrected - corrected_mean).norm();
        if best_pos.as_ref().map(|(bd, _)| d < *bd).unwrap_or(true) {
            best_pos = Some((d, corrected));
        }
    }
    let u_target = master.positional_1 + best_pos.expect("n_pos_samples >= 1").1;

    let z_master = master.axis()?;
    let position = DVector::from_column_slice(u_target.as_slice());
    let mut best: Option<(f64, Pose)> = None;
    for z_cand in endpose_candidates(&z_master, stats.angle_mean, angle_step) {
        let cand = Pose::new(position.clone(), quat_from_z_to(&z_cand));
        let d = pose_distance(&cand, p_start, w_rot)?;
        if best.as_ref().map(|(bd, _)| d < *bd).unwrap_or(true) {
            best = Some((d, cand));
        }
    }
    Ok(TerminalPose {
        pose: best.expect("candidate set non-empty by construction").1,
    })
}

/// One point of a scenario file: either world coordinates or pixel + depth
/// resolved through the scenario camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioPoint {
    Xyz([f64; 3]),
    Uvz([f64; 3]),
}

impl ScenarioPoint {
    pub fn resolve(&self, camera: Option<&CameraModel>) -> Result<Vector3<f64>> {
        match self {
            ScenarioPoint::Xyz(p) => Ok(Vector3::new(p[0], p[1], p[2])),
            ScenarioPoint::Uvz(p) => {
                let cam = camera.ok_or_else(|| {
                    Error::InvalidArgument("uvz keypoint given but scenario has no camera".into())
                })?;
                cam.backproject(p[0], p[1], p[2])
            }
        }
    }
}

/// Keypoint set as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioObject {
    pub object_id: String,
    pub role: ObjectRole,
    pub interaction: ScenarioPoint,
    pub positional_1: ScenarioPoint,
    pub positional_2: ScenarioPoint,
    #[serde(default)]
    pub boundary: Vec<ScenarioPoint>,
}

impl ScenarioObject {
    pub fn resolve(&self, camera: Option<&CameraModel>) -> Result<KeypointSet> {
        let set = KeypointSet {
            object_id: self.object_id.clone(),
            role: self.role,
            interaction: self.interaction.resolve(camera)?,
            positional_1: self.positional_1.resolve(camera)?,
            positional_2: self.positional_2.resolve(camera)?,
            boundary: self
                .boundary
                .iter()
                .map(|p| p.resolve(camera))
                .collect::<Result<Vec<_>>>()?,
        };
        set.validate()?;
        Ok(set)
    }
}

/// Scenario file: the decision stub feeding terminal pose estimation.
/// Carries either precomputed stats or the raw final frames to learn them
/// from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
    pub master: ScenarioObject,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<InteractionStats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub final_frames: Vec<(ScenarioObject, ScenarioObject)>,
    pub start_position: [f64; 3],
    pub start_orientation: [f64; 4],
}

impl Scenario {
    pub fn from_json(s: &str, path: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s).map_err(|e| Error::parse(path, e.to_string()))?;
        if let Some(cam) = &sc.camera {
            cam.validate()?;
        }
        Ok(sc)
    }

    pub fn start_pose(&self) -> Pose {
        let q = self.start_orientation;
        Pose::new(
            DVector::from_column_slice(&self.start_position),
            UnitQuat::new(q[0], q[1], q[2], q[3]),
        )
    }

    /// Resolves statistics: uses the embedded stats or learns them from the
    /// raw final frames.
    pub fn resolve_stats(&self) -> Result<InteractionStats> {
        if let Some(stats) = &self.stats {
            return Ok(stats.clone());
        }
        let frames: Vec<(KeypointSet, KeypointSet)> = self
            .final_frames
            .iter()
            .map(|(m, s)| {
                Ok((
                    m.resolve(self.camera.as_ref())?,
                    s.resolve(self.camera.as_ref())?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        learn_interaction_stats(&frames)
    }
}

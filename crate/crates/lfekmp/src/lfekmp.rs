//! Locally-enhanced kernelized movement primitives over task frames.
//!
//! Learning encodes each demonstration in every task frame, compresses the
//! per-frame data with GMM/GMR into a probabilistic reference, injects
//! near-deterministic desired points around the start/end anchors (the local
//! feature enhancement) and fits one KMP per frame. Generalization predicts
//! every frame's trajectory under new frame placements and fuses them with a
//! precision-weighted Gaussian product; orientations are fused in tangent
//! space with parallel transport.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gaussian::{gaussian_affine, gaussian_product, spectral_floor, GaussianState};
use crate::gmm::{gmm_fit, gmr_regress, ReferenceTrajectory};
use crate::kmp::{kmp_fit, kmp_tune, KernelParams, KmpModel};
use crate::manifold::{
    parallel_transport, quat_exp, quat_log, Pose, PoseTrajectory, TaskFrame, UnitQuat,
};

/// Format tag for serialized models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The set of task frames describing one situation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParameters {
    pub frames: Vec<TaskFrame>,
}

impl TaskParameters {
    pub fn new(frames: Vec<TaskFrame>) -> Self {
        Self { frames }
    }

    /// Start/end frames with identity rotation, anchored at the trajectory
    /// endpoints.
    pub fn endpoint_frames(traj: &PoseTrajectory) -> Result<Self> {
        if traj.len() < 2 {
            return Err(Error::InvalidArgument(
                "endpoint_frames needs >= 2 trajectory points".into(),
            ));
        }
        let d = traj.dim();
        Ok(Self {
            frames: vec![
                TaskFrame::new(DMatrix::identity(d, d), traj.start().position.clone()),
                TaskFrame::new(DMatrix::identity(d, d), traj.end().position.clone()),
            ],
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map(|f| f.dim()).unwrap_or(0)
    }

    pub fn validate(&self, expect_dim: usize) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidArgument("task parameters are empty".into()));
        }
        if self.frames.iter().any(|f| f.dim() != expect_dim) {
            return Err(Error::DimensionMismatch(format!(
                "task frame dim != data dim {expect_dim}"
            )));
        }
        Ok(())
    }
}

/// One demonstration: a trajectory plus the frame placements it was recorded
/// under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub traj: PoseTrajectory,
    pub frames: TaskParameters,
}

/// Orientation channel of one frame submodel: a KMP over rotation vectors in
/// the tangent space at `base`, expressed in frame-local orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientSubmodel {
    pub base: UnitQuat,
    pub kmp: KmpModel,
}

/// Per-frame model: a position KMP in frame-local coordinates, optionally an
/// orientation channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSubmodel {
    pub position: KmpModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<OrientSubmodel>,
}

/// Fitted multi-frame model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfeKmpModel {
    pub format_version: u32,
    pub kind: String,
    pub dim: usize,
    pub submodels: Vec<FrameSubmodel>,
}

/// Generalized output: the fused trajectory plus per-time uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedTrajectory {
    pub traj: PoseTrajectory,
    pub position_covs: Vec<DMatrix<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation_covs: Option<Vec<Matrix3<f64>>>,
}

/// Relative spectral floor applied to covariances entering the fusion, so a
/// dimension nobody demonstrated variation in cannot veto the frames that
/// carry real information there.
const FUSION_REL_FLOOR: f64 = 1e-4;

const LFE_KIND: &str = "lfe-kmp";
const BASELINE_KIND: &str = "kmp-baseline";

impl LfeKmpModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: LfeKmpModel =
            serde_json::from_str(s).map_err(|e| Error::parse("<model json>", e.to_string()))?;
        if model.kind != LFE_KIND {
            return Err(Error::InvalidArgument(format!(
                "expected a {LFE_KIND} model, found kind {:?}",
                model.kind
            )));
        }
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }

    pub fn frame_count(&self) -> usize {
        self.submodels.len()
    }
}

fn uniform_times(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Linear interpolation of reference means at an arbitrary time.
fn interp_mean(reference: &ReferenceTrajectory, t: f64) -> DVector<f64> {
    let times = &reference.times;
    if t <= times[0] {
        return reference.states[0].mean.clone();
    }
    if t >= *times.last().unwrap() {
        return reference.states.last().unwrap().mean.clone();
    }
    let mut i = 0;
    while times[i + 1] < t {
        i += 1;
    }
    let span = times[i + 1] - times[i];
    let alpha = if span == 0.0 { 0.0 } else { (t - times[i]) / span };
    &reference.states[i].mean * (1.0 - alpha) + &reference.states[i + 1].mean * alpha
}

fn merge_desired(
    points: &mut Vec<(f64, GaussianState)>,
    t: f64,
    state: GaussianState,
) {
    const TIME_EPS: f64 = 1e-9;
    if let Some(existing) = points.iter_mut().find(|(ti, _)| (ti - t).abs() < TIME_EPS) {
        // Collision: keep the more confident (smaller-trace) point.
        if state.cov.trace() < existing.1.cov.trace() {
            existing.1 = state;
        }
    } else {
        points.push((t, state));
    }
}

/// Inserts near-deterministic desired points around the trajectory
/// endpoints: `resample_count` points per given anchor, blended from the
/// anchor into the reference over a window of normalized time, each with an
/// isotropic `epsilon` covariance. Colliding timestamps keep the more
/// confident point.
pub fn enhance_local_features(
    reference: &ReferenceTrajectory,
    start_anchor: Option<&DVector<f64>>,
    end_anchor: Option<&DVector<f64>>,
    resample_count: usize,
    window: f64,
    epsilon: f64,
) -> Result<ReferenceTrajectory> {
    if resample_count == 0 {
        return Err(Error::InvalidArgument("resample_count must be >= 1".into()));
    }
    if !(window > 0.0) || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(
            "enhancement window and epsilon must be > 0".into(),
        ));
    }
    let d = reference.state_dim();
    for anchor in [start_anchor, end_anchor].into_iter().flatten() {
        if anchor.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "anchor dim {} vs reference dim {d}",
                anchor.len()
            )));
        }
    }
    let t0 = reference.times[0];
    let t1 = *reference.times.last().unwrap();
    let mut points: Vec<(f64, GaussianState)> = reference
        .times
        .iter()
        .copied()
        .zip(reference.states.iter().cloned())
        .collect();

    // With a single resampled point it sits exactly on the endpoint.
    let frac = |j: usize, toward_end: bool| {
        if resample_count == 1 {
            if toward_end {
                1.0
            } else {
                0.0
            }
        } else {
            j as f64 / (resample_count - 1) as f64
        }
    };
    if let Some(a) = start_anchor {
        for j in 0..resample_count {
            let t = t0 + window * frac(j, false);
            let alpha = if window == 0.0 { 1.0 } else { (t - t0) / window };
            let mean = a * (1.0 - alpha) + interp_mean(reference, t) * alpha;
            merge_desired(&mut points, t, GaussianState::isotropic(mean, epsilon));
        }
    }
    if let Some(e) = end_anchor {
        for j in 0..resample_count {
            let t = t1 - window * (1.0 - frac(j, true));
            let alpha = if window == 0.0 { 1.0 } else { (t1 - t) / window };
            let mean = e * (1.0 - alpha) + interp_mean(reference, t) * alpha;
            merge_desired(&mut points, t, GaussianState::isotropic(mean, epsilon));
        }
    }
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    ReferenceTrajectory::new(
        points.iter().map(|(t, _)| *t).collect(),
        points.into_iter().map(|(_, s)| s).collect(),
    )
}

fn validate_demos(demos: &[Demonstration]) -> Result<(usize, usize)> {
    let first = demos
        .first()
        .ok_or_else(|| Error::InvalidArgument("no demonstrations given".into()))?;
    let dim = first.traj.dim();
    let frame_count = first.frames.len();
    if frame_count == 0 {
        return Err(Error::InvalidArgument("demonstrations carry no frames".into()));
    }
    for demo in demos {
        if demo.traj.len() < 2 {
            return Err(Error::InvalidArgument(
                "every demonstration needs >= 2 points".into(),
            ));
        }
        if demo.traj.dim() != dim {
            return Err(Error::DimensionMismatch(
                "demonstrations differ in dimension".into(),
            ));
        }
        if demo.frames.len() != frame_count {
            return Err(Error::InvalidArgument(
                "demonstrations differ in frame count".into(),
            ));
        }
        demo.frames.validate(dim)?;
    }
    Ok((dim, frame_count))
}

fn grid(cfg: &RunConfig) -> Vec<KernelParams> {
    cfg.lengthscale_grid
        .iter()
        .map(|&l| KernelParams {
            lengthscale: l,
            variance: cfg.kernel_variance,
        })
        .collect()
}

fn matrix3_to_d(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, j| m[(i, j)])
}

fn d_to_matrix3(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(i, j)])
}

/// Intrinsic (Karcher) mean of unit quaternions by fixed-point iteration.
pub fn karcher_mean(quats: &[UnitQuat]) -> Result<UnitQuat> {
    let mut base = *quats
        .first()
        .ok_or_else(|| Error::InvalidArgument("karcher_mean needs >= 1 quaternion".into()))?;
    for _ in 0..50 {
        let mut acc = nalgebra::Vector3::zeros();
        for q in quats {
            acc += quat_log(&base, q);
        }
        acc /= quats.len() as f64;
        base = quat_exp(&base, &acc);
        if acc.norm() < 1e-14 {
            break;
        }
    }
    Ok(base)
}

fn frame_rotation(frame: &TaskFrame) -> UnitQuat {
    frame.rotation_quat().unwrap_or_else(UnitQuat::identity)
}

struct LocalChannel {
    /// (time, value) samples pooled over all demonstrations.
    data: Vec<(f64, DVector<f64>)>,
    /// Demo-mean value at the first / last timestamp.
    start_mean: DVector<f64>,
    end_mean: DVector<f64>,
}

fn fit_channel(
    channel: &LocalChannel,
    cfg: &RunConfig,
    seed: u64,
    anchor_start: bool,
    anchor_end: bool,
) -> Result<KmpModel> {
    let model = gmm_fit(&channel.data, cfg.k, seed, cfg.em_max_iter, cfg.em_tol)?;
    let reference = gmr_regress(&model, &uniform_times(cfg.n_ref))?;
    let kernel = kmp_tune(&reference, &grid(cfg), cfg.lambda_mean, cfg.lambda_cov)?;
    let enhanced = enhance_local_features(
        &reference,
        anchor_start.then_some(&channel.start_mean),
        anchor_end.then_some(&channel.end_mean),
        cfg.resample_count,
        cfg.window,
        cfg.epsilon,
    )?;
    kmp_fit(&enhanced, kernel, cfg.lambda_mean, cfg.lambda_cov)
}

fn position_channel(demos: &[Demonstration], frame_idx: usize) -> Result<LocalChannel> {
    let mut data = Vec::new();
    let dim = demos[0].traj.dim();
    let mut start_mean = DVector::zeros(dim);
    let mut end_mean = DVector::zeros(dim);
    for demo in demos {
        let inv = demo.frames.frames[frame_idx].invert()?;
        let tn = demo.traj.time_normalized();
        for (t, pose) in tn.times.iter().zip(&tn.poses) {
            data.push((*t, inv.apply_point(&pose.position)));
        }
        start_mean += inv.apply_point(&tn.start().position);
        end_mean += inv.apply_point(&tn.end().position);
    }
    let n = demos.len() as f64;
    Ok(LocalChannel {
        data,
        start_mean: start_mean / n,
        end_mean: end_mean / n,
    })
}

fn orientation_channel(
    demos: &[Demonstration],
    frame_idx: usize,
) -> Result<(UnitQuat, LocalChannel)> {
    // Frame-local orientations over all demos.
    let mut locals: Vec<Vec<UnitQuat>> = Vec::with_capacity(demos.len());
    for demo in demos {
        let rot_inv = frame_rotation(&demo.frames.frames[frame_idx]).inverse();
        locals.push(
            demo.traj
                .poses
                .iter()
                .map(|p| rot_inv.compose(&p.orientation))
                .collect(),
        );
    }
    let flat: Vec<UnitQuat> = locals.iter().flatten().copied().collect();
    let base = karcher_mean(&flat)?;

    let mut data = Vec::new();
    let mut start_mean = DVector::zeros(3);
    let mut end_mean = DVector::zeros(3);
    for (demo, local) in demos.iter().zip(&locals) {
        let tn = demo.traj.time_normalized();
        for (t, q) in tn.times.iter().zip(local) {
            let v = quat_log(&base, q);
            data.push((*t, DVector::from_column_slice(v.as_slice())));
        }
        let vs = quat_log(&base, &local[0]);
        let ve = quat_log(&base, local.last().unwrap());
        start_mean += DVector::from_column_slice(vs.as_slice());
        end_mean += DVector::from_column_slice(ve.as_slice());
    }
    let n = demos.len() as f64;
    Ok((
        base,
        LocalChannel {
            data,
            start_mean: start_mean / n,
            end_mean: end_mean / n,
        },
    ))
}

fn demos_have_orientation(demos: &[Demonstration]) -> bool {
    demos.iter().any(|d| {
        d.traj
            .poses
            .iter()
            .any(|p| p.orientation.angle_to(&UnitQuat::identity()) > 1e-12)
    })
}

/// Learns the multi-frame model from demonstrations.
///
/// Each frame's reference is anchored at the demo-mean local start (first
/// frame) and local end (last frame); with a single frame both anchors land
/// in it. `anchors_in_all_frames` anchors every frame at both ends instead.
pub fn lfekmp_learn(demos: &[Demonstration], cfg: &RunConfig) -> Result<LfeKmpModel> {
    cfg.validate()?;
    let (dim, frame_count) = validate_demos(demos)?;
    let with_orientation = dim == 3 && demos_have_orientation(demos);

    let mut submodels = Vec::with_capacity(frame_count);
    for p in 0..frame_count {
        let anchor_start = cfg.anchors_in_all_frames || p == 0 || frame_count == 1;
        let anchor_end = cfg.anchors_in_all_frames || p == frame_count - 1 || frame_count == 1;

        let pos = position_channel(demos, p)?;
        let position = fit_channel(
            &pos,
            cfg,
            cfg.seed.wrapping_add(p as u64),
            anchor_start,
            anchor_end,
        )?;

        let orientation = if with_orientation {
            let (base, channel) = orientation_channel(demos, p)?;
            let kmp = fit_channel(
                &channel,
                cfg,
                cfg.seed.wrapping_add(1000 + p as u64),
                anchor_start,
                anchor_end,
            )?;
            Some(OrientSubmodel { base, kmp })
        } else {
            None
        };

        submodels.push(FrameSubmodel {
            position,
            orientation,
        });
    }

    Ok(LfeKmpModel {
        format_version: MODEL_FORMAT_VERSION,
        kind: LFE_KIND.into(),
        dim,
        submodels,
    })
}

/// Tangent-space fusion of per-frame orientation predictions: linearize at
/// the running estimate, parallel-transport each frame's covariance there,
/// fuse with a Gaussian product and re-exponentiate.
fn fuse_orientations(
    predictions: &[(UnitQuat, Matrix3<f64>)],
    iters: usize,
) -> Result<(UnitQuat, Matrix3<f64>)> {
    let mut estimate = predictions[0].0;
    let mut fused_cov = predictions[0].1;
    for _ in 0..iters.max(1) {
        let mut gaussians = Vec::with_capacity(predictions.len());
        for (q, cov) in predictions {
            let transported = parallel_transport(q, &estimate, cov);
            let v = quat_log(&estimate, q);
            gaussians.push(GaussianState::new(
                DVector::from_column_slice(v.as_slice()),
                matrix3_to_d(&transported),
            )?);
        }
        let fused = gaussian_product(&gaussians)?;
        let v = nalgebra::Vector3::new(fused.mean[0], fused.mean[1], fused.mean[2]);
        estimate = quat_exp(&estimate, &v);
        fused_cov = d_to_matrix3(&fused.cov);
    }
    Ok((estimate, fused_cov))
}

/// Generalizes the model to new frame placements.
pub fn lfekmp_generalize(
    model: &LfeKmpModel,
    new_params: &TaskParameters,
    cfg: &RunConfig,
) -> Result<GeneralizedTrajectory> {
    cfg.validate()?;
    if new_params.len() != model.frame_count() {
        return Err(Error::InvalidArgument(format!(
            "model has {} frames, task parameters have {}",
            model.frame_count(),
            new_params.len()
        )));
    }
    new_params.validate(model.dim)?;

    let times = uniform_times(cfg.n_out);
    let with_orientation = model.submodels.iter().all(|s| s.orientation.is_some())
        && model.dim == 3;

    let mut poses = Vec::with_capacity(times.len());
    let mut position_covs = Vec::with_capacity(times.len());
    let mut orientation_covs = with_orientation.then(Vec::new);

    for &t in &times {
        // Positions: per-frame local prediction pushed through the new frame.
        let mut globals = Vec::with_capacity(model.frame_count());
        for (sub, frame) in model.submodels.iter().zip(&new_params.frames) {
            let local = sub.position.predict_at(t);
            let mut global = gaussian_affine(frame, &local)?;
            global.cov = spectral_floor(&global.cov, FUSION_REL_FLOOR);
            globals.push(global);
        }
        let fused = gaussian_product(&globals)?;

        // Orientations: frame-local tangent prediction re-based under the new
        // frame rotation, then fused in tangent space.
        let orientation = if with_orientation {
            let mut predictions = Vec::with_capacity(model.frame_count());
            for (sub, frame) in model.submodels.iter().zip(&new_params.frames) {
                let orient = sub.orientation.as_ref().expect("checked above");
                let pred = orient.kmp.predict_at(t);
                let base_global = frame_rotation(frame).compose(&orient.base);
                let v = nalgebra::Vector3::new(pred.mean[0], pred.mean[1], pred.mean[2]);
                let q = quat_exp(&base_global, &v);
                let floored = spectral_floor(&pred.cov, FUSION_REL_FLOOR);
                let cov = parallel_transport(&base_global, &q, &d_to_matrix3(&floored));
                predictions.push((q, cov));
            }
            let (q, cov) = fuse_orientations(&predictions, cfg.orientation_fusion_iters)?;
            if let Some(list) = orientation_covs.as_mut() {
                list.push(cov);
            }
            q
        } else {
            UnitQuat::identity()
        };

        poses.push(Pose::new(fused.mean, orientation));
        position_covs.push(fused.cov);
    }

    Ok(GeneralizedTrajectory {
        traj: PoseTrajectory::new(times, poses)?,
        position_covs,
        orientation_covs,
    })
}

/// Plain single-model KMP baseline: one global GMM/GMR reference over all
/// demonstrations, no frame-local encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmpBaselineModel {
    pub format_version: u32,
    pub kind: String,
    pub dim: usize,
    pub kmp: KmpModel,
}

impl KmpBaselineModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: KmpBaselineModel =
            serde_json::from_str(s).map_err(|e| Error::parse("<model json>", e.to_string()))?;
        if model.kind != BASELINE_KIND {
            return Err(Error::InvalidArgument(format!(
                "expected a {BASELINE_KIND} model, found kind {:?}",
                model.kind
            )));
        }
        Ok(model)
    }
}

/// Fits the baseline in global coordinates.
pub fn kmp_baseline_learn(demos: &[Demonstration], cfg: &RunConfig) -> Result<KmpBaselineModel> {
    cfg.validate()?;
    let (dim, _) = validate_demos(demos)?;
    let mut data = Vec::new();
    for demo in demos {
        let tn = demo.traj.time_normalized();
        for (t, pose) in tn.times.iter().zip(&tn.poses) {
            data.push((*t, pose.position.clone()));
        }
    }
    let model = gmm_fit(&data, cfg.k, cfg.seed, cfg.em_max_iter, cfg.em_tol)?;
    let reference = gmr_regress(&model, &uniform_times(cfg.n_ref))?;
    let kernel = kmp_tune(&reference, &grid(cfg), cfg.lambda_mean, cfg.lambda_cov)?;
    let kmp = kmp_fit(&reference, kernel, cfg.lambda_mean, cfg.lambda_cov)?;
    Ok(KmpBaselineModel {
        format_version: MODEL_FORMAT_VERSION,
        kind: BASELINE_KIND.into(),
        dim,
        kmp,
    })
}

/// Adapts the baseline to new frame placements by forcing near-deterministic
/// via-points onto the new start/end anchors and refitting, then predicting
/// in global coordinates.
pub fn kmp_baseline_generalize(
    model: &KmpBaselineModel,
    new_params: &TaskParameters,
    cfg: &RunConfig,
) -> Result<GeneralizedTrajectory> {
    cfg.validate()?;
    new_params.validate(model.dim)?;
    if new_params.len() < 2 {
        return Err(Error::InvalidArgument(
            "baseline generalization needs start and end frames".into(),
        ));
    }
    let start = new_params.frames.first().unwrap().anchor().clone();
    let end = new_params.frames.last().unwrap().anchor().clone();
    let enhanced = enhance_local_features(
        &model.kmp.ref_traj,
        Some(&start),
        Some(&end),
        1,
        cfg.window,
        cfg.epsilon,
    )?;
    let refit = kmp_fit(&enhanced, model.kmp.kernel, cfg.lambda_mean, cfg.lambda_cov)?;
    let times = uniform_times(cfg.n_out);
    let mut poses = Vec::with_capacity(times.len());
    let mut position_covs = Vec::with_capacity(times.len());
    for &t in &times {
        let pred = refit.predict_at(t);
        poses.push(Pose::from_position(pred.mean));
        position_covs.push(pred.cov);
    }
    Ok(GeneralizedTrajectory {
        traj: PoseTrajectory::new(times, poses)?,
        position_covs,
        orientation_covs: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fast_cfg() -> RunConfig {
        RunConfig {
            k: 4,
            n_ref: 60,
            n_out: 80,
            lengthscale_grid: vec![0.05, 0.1],
            em_max_iter: 100,
            ..RunConfig::default()
        }
    }

    /// Arc-shaped 2D demos with smooth per-demo variation, each paired with
    /// its own endpoint frames.
    fn arc_demos(n_demos: usize, seed: u64) -> Vec<Demonstration> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_demos)
            .map(|_| {
                let amp = 0.5 + 0.05 * rng.random_range(-1.0..1.0);
                let shift = 0.02 * rng.random_range(-1.0..1.0);
                // Per-demo endpoint placement, as in real task-parameterized
                // recordings where every demo faces its own start/target.
                let start_off = [
                    0.05 * rng.random_range(-1.0..1.0),
                    0.05 * rng.random_range(-1.0..1.0),
                ];
                let end_off = [
                    0.05 * rng.random_range(-1.0..1.0),
                    0.05 * rng.random_range(-1.0..1.0),
                ];
                let n = 80;
                let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
                let poses: Vec<Pose> = times
                    .iter()
                    .map(|&t| {
                        Pose::from_position(DVector::from_vec(vec![
                            t + shift * (std::f64::consts::PI * t).sin()
                                + (1.0 - t) * start_off[0]
                                + t * end_off[0],
                            amp * (std::f64::consts::PI * t).sin()
                                + (1.0 - t) * start_off[1]
                                + t * end_off[1],
                        ]))
                    })
                    .collect();
                let traj = PoseTrajectory::new(times, poses).unwrap();
                let frames = TaskParameters::endpoint_frames(&traj).unwrap();
                Demonstration { traj, frames }
            })
            .collect()
    }

    fn rotated_params(angle0: f64, anchor0: [f64; 2], angle1: f64, anchor1: [f64; 2]) -> TaskParameters {
        TaskParameters::new(vec![
            TaskFrame::rigid_2d(angle0, DVector::from_vec(anchor0.to_vec())),
            TaskFrame::rigid_2d(angle1, DVector::from_vec(anchor1.to_vec())),
        ])
    }

    #[test]
    fn endpoints_converge_to_new_anchors() {
        let demos = arc_demos(5, 1);
        let cfg = fast_cfg();
        let model = lfekmp_learn(&demos, &cfg).unwrap();
        let params = rotated_params(0.3, [0.5, -0.2], -0.2, [1.8, 0.6]);
        let out = lfekmp_generalize(&model, &params, &cfg).unwrap();
        let start_err = (&out.traj.start().position - params.frames[0].anchor()).norm();
        let end_err = (&out.traj.end().position - params.frames[1].anchor()).norm();
        assert!(start_err < 5e-3, "start error {start_err}");
        assert!(end_err < 5e-3, "end error {end_err}");
    }

    #[test]
    fn reproduction_preserves_demo_shape() {
        let demos = arc_demos(5, 2);
        let cfg = fast_cfg();
        let model = lfekmp_learn(&demos, &cfg).unwrap();
        let out = lfekmp_generalize(&model, &demos[0].frames, &cfg).unwrap();
        let score = crate::metrics::topological_similarity(&out.traj, &demos[0].traj).unwrap();
        assert!(score > 95.0, "similarity {score}");
    }

    #[test]
    fn generalization_is_rigidly_equivariant() {
        // Moving both frames by one shared rigid map must move the output by
        // the same map: the per-frame predictions are frame-local and the
        // Gaussian product commutes with rigid transforms.
        let demos = arc_demos(4, 3);
        let cfg = fast_cfg();
        let model = lfekmp_learn(&demos, &cfg).unwrap();
        let params = rotated_params(0.2, [0.1, 0.0], 0.1, [1.2, 0.4]);
        let rigid = TaskFrame::rigid_2d(0.7, DVector::from_vec(vec![-0.5, 1.5]));
        let moved = TaskParameters::new(
            params
                .frames
                .iter()
                .map(|f| TaskFrame::new(&rigid.a * &f.a, rigid.apply_point(&f.b)))
                .collect(),
        );
        let base = lfekmp_generalize(&model, &params, &cfg).unwrap();
        let out = lfekmp_generalize(&model, &moved, &cfg).unwrap();
        for (p, q) in base.traj.poses.iter().zip(&out.traj.poses) {
            let mapped = rigid.apply_point(&p.position);
            assert!((&q.position - mapped).norm() < 1e-6);
        }
    }

    #[test]
    fn learning_and_generalization_are_deterministic() {
        let demos = arc_demos(4, 4);
        let cfg = fast_cfg();
        let params = rotated_params(0.1, [0.2, 0.1], -0.3, [1.5, 0.2]);
        let a_model = lfekmp_learn(&demos, &cfg).unwrap();
        let b_model = lfekmp_learn(&demos, &cfg).unwrap();
        assert_eq!(a_model.to_json(), b_model.to_json());
        let a = lfekmp_generalize(&a_model, &params, &cfg).unwrap();
        let b = lfekmp_generalize(&b_model, &params, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn model_json_round_trip() {
        let demos = arc_demos(3, 5);
        let cfg = fast_cfg();
        let model = lfekmp_learn(&demos, &cfg).unwrap();
        let back = LfeKmpModel::from_json(&model.to_json()).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn wrong_kind_rejected() {
        let demos = arc_demos(3, 6);
        let cfg = fast_cfg();
        let mut model = lfekmp_learn(&demos, &cfg).unwrap();
        model.kind = "something-else".into();
        assert!(LfeKmpModel::from_json(&model.to_json()).is_err());
    }

    #[test]
    fn single_frame_anchors_both_ends() {
        let demos: Vec<Demonstration> = arc_demos(4, 7)
            .into_iter()
            .map(|d| {
                let frames = TaskParameters::new(vec![d.frames.frames[0].clone()]);
                Demonstration {
                    traj: d.traj,
                    frames,
                }
            })
            .collect();
        let cfg = fast_cfg();
        let model = lfekmp_learn(&demos, &cfg).unwrap();
        let params = TaskParameters::new(vec![TaskFrame::rigid_2d(
            0.4,
            DVector::from_vec(vec![0.3, 0.3]),
        )]);
        let out = lfekmp_generalize(&model, &params, &cfg).unwrap();
        // Start anchored at the new frame origin; end at the frame-local
        // demo-mean end pushed through the new frame.
        let start_err = (&out.traj.start().position - params.frames[0].anchor()).norm();
        assert!(start_err < 1e-3, "start error {start_err}");
    }

    #[test]
    fn enhancement_replaces_colliding_points_with_confident_ones() {
        let times: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let states: Vec<GaussianState> = times
            .iter()
            .map(|&t| GaussianState::isotropic(DVector::from_vec(vec![t, 1.0 - t]), 0.5))
            .collect();
        let reference = ReferenceTrajectory::new(times, states).unwrap();
        let anchor = DVector::from_vec(vec![5.0, 5.0]);
        let out =
            enhance_local_features(&reference, Some(&anchor), None, 3, 0.2, 1e-8).unwrap();
        // t=0.0, 0.1, 0.2 collide with reference timestamps: replaced, not
        // appended.
        assert_eq!(out.len(), 11);
        assert_abs_diff_eq!(out.states[0].cov[(0, 0)], 1e-8);
        assert!((&out.states[0].mean - &anchor).norm() < 1e-12);
        // At the window edge the desired mean matches the reference again.
        assert!((&out.states[2].mean - DVector::from_vec(vec![0.2, 0.8])).norm() < 1e-12);
        // Times stay strictly increasing.
        assert!(out.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn baseline_converges_to_new_anchors() {
        let demos = arc_demos(5, 8);
        let cfg = fast_cfg();
        let model = kmp_baseline_learn(&demos, &cfg).unwrap();
        let params = rotated_params(0.0, [0.4, -0.3], 0.0, [1.6, 0.5]);
        let out = kmp_baseline_generalize(&model, &params, &cfg).unwrap();
        let start_err = (&out.traj.start().position - params.frames[0].anchor()).norm();
        let end_err = (&out.traj.end().position - params.frames[1].anchor()).norm();
        assert!(start_err < 5e-3, "start error {start_err}");
        assert!(end_err < 5e-3, "end error {end_err}");
    }

    #[test]
    fn orientation_follows_the_rotated_end_frame() {
        let demos = crate::data::pouring_demos(4, 9);
        let cfg = fast_cfg();
        let model = lfekmp_learn(&demos, &cfg).unwrap();

        let yaw = 40.0_f64.to_radians();
        let turn = UnitQuat::from_axis_angle(Vector3::z(), yaw);
        let params = TaskParameters::new(vec![
            TaskFrame::rigid_3d(&UnitQuat::identity(), Vector3::new(0.0, 0.0, 0.1)),
            TaskFrame::rigid_3d(&turn, Vector3::new(0.5, 0.2, 0.1)),
        ]);
        let out = lfekmp_generalize(&model, &params, &cfg).unwrap();

        // Demo end orientation is ~100 degrees about y in the end frame; the
        // generalized end orientation must follow the new end frame rotation.
        let expected = turn.compose(&UnitQuat::from_axis_angle(
            Vector3::y(),
            100.0_f64.to_radians(),
        ));
        let err = out.traj.end().orientation.angle_to(&expected);
        assert!(err < 2.0_f64.to_radians(), "orientation error {err} rad");
        assert!(out.orientation_covs.is_some());

        let end_err = (&out.traj.end().position
            - DVector::from_column_slice(&[0.5, 0.2, 0.1]))
        .norm();
        assert!(end_err < 1e-2, "end position error {end_err}");
    }

    #[test]
    fn mismatched_frame_count_rejected() {
        let demos = arc_demos(3, 10);
        let cfg = fast_cfg();
        let model = lfekmp_learn(&demos, &cfg).unwrap();
        let params = TaskParameters::new(vec![TaskFrame::identity(2)]);
        assert!(lfekmp_generalize(&model, &params, &cfg).is_err());
    }

    #[test]
    fn anchors_in_all_frames_ablation_runs() {
        let demos = arc_demos(4, 11);
        let cfg = RunConfig {
            anchors_in_all_frames: true,
            ..fast_cfg()
        };
        let model = lfekmp_learn(&demos, &cfg).unwrap();
        let params = rotated_params(0.1, [0.0, 0.0], 0.0, [1.3, 0.5]);
        let out = lfekmp_generalize(&model, &params, &cfg).unwrap();
        assert_eq!(out.traj.len(), cfg.n_out);
    }
}

//! Task-parameterized GMM baseline: one mixture whose components live in
//! every task frame simultaneously, trained with shared responsibilities,
//! reproduced by transforming the per-frame components into the new frame
//! placements, intersecting them with a Gaussian product and regressing over
//! time.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gaussian::{gaussian_product, GaussianState};
use crate::gmm::{gmr_regress, GmmModel};
use crate::lfekmp::{Demonstration, GeneralizedTrajectory, TaskParameters, MODEL_FORMAT_VERSION};
use crate::manifold::{Pose, PoseTrajectory, TaskFrame};

const TPGMM_KIND: &str = "tp-gmm";

/// Task-parameterized mixture: component `j` of frame `p` is
/// `components[p][j]`, a Gaussian over frame-local (time, position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpGmmModel {
    pub format_version: u32,
    pub kind: String,
    /// Position dimensionality (components are `1 + dim`).
    pub dim: usize,
    pub k: usize,
    pub priors: Vec<f64>,
    pub components: Vec<Vec<GaussianState>>,
    pub seed: u64,
    pub loglik_history: Vec<f64>,
}

impl TpGmmModel {
    pub fn frame_count(&self) -> usize {
        self.components.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: TpGmmModel =
            serde_json::from_str(s).map_err(|e| Error::parse("<model json>", e.to_string()))?;
        if model.kind != TPGMM_KIND {
            return Err(Error::InvalidArgument(format!(
                "expected a {TPGMM_KIND} model, found kind {:?}",
                model.kind
            )));
        }
        Ok(model)
    }
}

struct CovFactor {
    inv: DMatrix<f64>,
    log_det: f64,
}

fn factor(cov: &DMatrix<f64>) -> Result<CovFactor> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("component covariance not positive definite".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(CovFactor {
        inv: chol.inverse(),
        log_det,
    })
}

fn log_gauss(x: &DVector<f64>, mean: &DVector<f64>, f: &CovFactor) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let maha = (&f.inv * &diff).dot(&diff);
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + f.log_det + maha)
}

fn kmeanspp_centers(points: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    let n = points.len();
    let mut centers = vec![rng.random_range(0..n)];
    let mut dist2: Vec<f64> = points
        .iter()
        .map(|p| (p - &points[centers[0]]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        };
        for (i, p) in points.iter().enumerate() {
            dist2[i] = dist2[i].min((p - &points[next]).norm_squared());
        }
        centers.push(next);
    }
    centers
}

fn apply_floor(cov: &mut DMatrix<f64>, floor: f64) {
    let min_eig = cov
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < floor {
        let d = cov.nrows();
        *cov += DMatrix::identity(d, d) * (floor - min_eig);
    }
}

/// Fits the task-parameterized mixture: per-frame projections of every
/// sample share one responsibility matrix, so all frames agree on the
/// segmentation while keeping their own component shapes.
pub fn tpgmm_learn(demos: &[Demonstration], cfg: &RunConfig) -> Result<TpGmmModel> {
    cfg.validate()?;
    let first = demos
        .first()
        .ok_or_else(|| Error::InvalidArgument("no demonstrations given".into()))?;
    let dim = first.traj.dim();
    let frame_count = first.frames.len();
    let k = cfg.k;
    let joint = dim + 1;

    // Frame-local joint samples: projections[p][i] = (t_i, local position).
    let mut projections: Vec<Vec<DVector<f64>>> = vec![Vec::new(); frame_count];
    for demo in demos {
        if demo.traj.dim() != dim || demo.frames.len() != frame_count {
            return Err(Error::DimensionMismatch(
                "demonstrations differ in dimension or frame count".into(),
            ));
        }
        demo.frames.validate(dim)?;
        let tn = demo.traj.time_normalized();
        for (p, frame) in demo.frames.frames.iter().enumerate() {
            let inv = frame.invert()?;
            for (t, pose) in tn.times.iter().zip(&tn.poses) {
                let local = inv.apply_point(&pose.position);
                let mut x = DVector::zeros(joint);
                x[0] = *t;
                x.rows_mut(1, dim).copy_from(&local);
                projections[p].push(x);
            }
        }
    }
    let n = projections[0].len();
    if n < k * (joint + 1) {
        return Err(Error::InvalidArgument(format!(
            "tpgmm_learn needs at least K·(dim+2) = {} points, got {n}",
            k * (joint + 1)
        )));
    }

    // Per-frame global moments for degeneracy checks and covariance floors.
    let mut global_means = Vec::with_capacity(frame_count);
    let mut floors = Vec::with_capacity(frame_count);
    let mut global_vars = Vec::with_capacity(frame_count);
    for proj in &projections {
        let mean = proj.iter().fold(DVector::zeros(joint), |a, p| a + p) / n as f64;
        let var = proj
            .iter()
            .map(|p| (p - &mean).norm_squared())
            .sum::<f64>()
            / (n as f64 * joint as f64);
        if var == 0.0 {
            return Err(Error::Degenerate(
                "tpgmm_learn: all data points are identical".into(),
            ));
        }
        global_means.push(mean);
        floors.push(1e-8 * var);
        global_vars.push(var);
    }

    // Seeded kmeans++ on the first frame's projection, hard assignment.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let center_idx = kmeanspp_centers(&projections[0], k, &mut rng);
    let mut resp = DMatrix::zeros(n, k);
    for i in 0..n {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, &c) in center_idx.iter().enumerate() {
            let d = (&projections[0][i] - &projections[0][c]).norm_squared();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        resp[(i, best)] = 1.0;
    }

    let mut priors = vec![0.0; k];
    let mut means = vec![vec![DVector::zeros(joint); k]; frame_count];
    let mut covs = vec![vec![DMatrix::zeros(joint, joint); k]; frame_count];

    let m_step = |resp: &DMatrix<f64>,
                  priors: &mut Vec<f64>,
                  means: &mut Vec<Vec<DVector<f64>>>,
                  covs: &mut Vec<Vec<DMatrix<f64>>>| {
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[(i, j)]).sum();
            if nk <= 1e-12 {
                priors[j] = 1e-12;
                for p in 0..frame_count {
                    means[p][j] = global_means[p].clone();
                    covs[p][j] = DMatrix::identity(joint, joint) * global_vars[p];
                }
                continue;
            }
            priors[j] = nk / n as f64;
            for p in 0..frame_count {
                let mut mu = DVector::zeros(joint);
                for i in 0..n {
                    mu += &projections[p][i] * resp[(i, j)];
                }
                mu /= nk;
                let mut cov = DMatrix::zeros(joint, joint);
                for i in 0..n {
                    let d = &projections[p][i] - &mu;
                    cov += &d * d.transpose() * resp[(i, j)];
                }
                cov /= nk;
                apply_floor(&mut cov, floors[p]);
                means[p][j] = mu;
                covs[p][j] = cov;
            }
        }
        let total: f64 = priors.iter().sum();
        for pr in priors.iter_mut() {
            *pr /= total;
        }
    };

    m_step(&resp, &mut priors, &mut means, &mut covs);

    let mut loglik_history = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..cfg.em_max_iter {
        let mut factors = Vec::with_capacity(frame_count);
        for p in 0..frame_count {
            let fs: Vec<CovFactor> = covs[p].iter().map(factor).collect::<Result<Vec<_>>>()?;
            factors.push(fs);
        }
        let mut ll = 0.0;
        for i in 0..n {
            let logp: Vec<f64> = (0..k)
                .map(|j| {
                    let mut v = priors[j].ln();
                    for p in 0..frame_count {
                        v += log_gauss(&projections[p][i], &means[p][j], &factors[p][j]);
                    }
                    v
                })
                .collect();
            let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logp.iter().map(|v| (v - max).exp()).sum();
            let log_norm = max + sum.ln();
            ll += log_norm;
            for j in 0..k {
                resp[(i, j)] = (logp[j] - log_norm).exp();
            }
        }
        loglik_history.push(ll);
        m_step(&resp, &mut priors, &mut means, &mut covs);
        if (ll - prev_ll).abs() < cfg.em_tol {
            break;
        }
        prev_ll = ll;
    }

    let components = (0..frame_count)
        .map(|p| {
            (0..k)
                .map(|j| GaussianState {
                    mean: means[p][j].clone(),
                    cov: covs[p][j].clone(),
                })
                .collect()
        })
        .collect();

    Ok(TpGmmModel {
        format_version: MODEL_FORMAT_VERSION,
        kind: TPGMM_KIND.into(),
        dim,
        k,
        priors,
        components,
        seed: cfg.seed,
        loglik_history,
    })
}

/// Lifts a position frame to the joint (time, position) space: time passes
/// through unchanged.
fn lift_frame(frame: &TaskFrame) -> TaskFrame {
    let d = frame.dim();
    let mut a = DMatrix::zeros(d + 1, d + 1);
    a[(0, 0)] = 1.0;
    a.view_mut((1, 1), (d, d)).copy_from(&frame.a);
    let mut b = DVector::zeros(d + 1);
    b.rows_mut(1, d).copy_from(&frame.b);
    TaskFrame::new(a, b)
}

/// Collapses the per-frame components into one global mixture for the given
/// frame placements: each component is pushed through its frame and the
/// frame copies are intersected with a Gaussian product.
pub fn tpgmm_collapse(model: &TpGmmModel, params: &TaskParameters) -> Result<GmmModel> {
    if params.len() != model.frame_count() {
        return Err(Error::InvalidArgument(format!(
            "model has {} frames, task parameters have {}",
            model.frame_count(),
            params.len()
        )));
    }
    params.validate(model.dim)?;
    let lifted: Vec<TaskFrame> = params.frames.iter().map(lift_frame).collect();
    let mut means = Vec::with_capacity(model.k);
    let mut covs = Vec::with_capacity(model.k);
    for j in 0..model.k {
        let per_frame: Vec<GaussianState> = model
            .components
            .iter()
            .zip(&lifted)
            .map(|(comps, frame)| crate::gaussian::gaussian_affine(frame, &comps[j]))
            .collect::<Result<Vec<_>>>()?;
        let fused = gaussian_product(&per_frame)?;
        means.push(fused.mean);
        covs.push(fused.cov);
    }
    Ok(GmmModel {
        k: model.k,
        dim: model.dim + 1,
        priors: model.priors.clone(),
        means,
        covs,
        seed: model.seed,
        loglik_history: model.loglik_history.clone(),
        floored: false,
    })
}

/// Reproduces a trajectory under new frame placements.
pub fn tpgmm_generalize(
    model: &TpGmmModel,
    params: &TaskParameters,
    cfg: &RunConfig,
) -> Result<GeneralizedTrajectory> {
    cfg.validate()?;
    let collapsed = tpgmm_collapse(model, params)?;
    let times: Vec<f64> = (0..cfg.n_out)
        .map(|i| i as f64 / (cfg.n_out - 1) as f64)
        .collect();
    let reference = gmr_regress(&collapsed, &times)?;
    let poses = reference
        .states
        .iter()
        .map(|s| Pose::from_position(s.mean.clone()))
        .collect();
    Ok(GeneralizedTrajectory {
        traj: PoseTrajectory::new(times, poses)?,
        position_covs: reference.states.iter().map(|s| s.cov.clone()).collect(),
        orientation_covs: None,
    })
}

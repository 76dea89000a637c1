//! Time-indexed Gaussian mixture modeling (EM) and Gaussian mixture
//! regression.
//!
//! Mixtures are fitted over the joint (time ⊕ output) space. Initialization
//! is a seeded kmeans++ center choice followed by a nearest-center hard
//! assignment, so a fixed seed and input order give bitwise-identical models.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{clamp_psd, GaussianState};

/// Gaussian mixture over the joint (time, output) space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    pub priors: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub seed: u64,
    /// Per-iteration training log-likelihood.
    pub loglik_history: Vec<f64>,
    /// Set when a component collapsed and the covariance floor kicked in.
    pub floored: bool,
}

/// Per-time Gaussian distribution along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<GaussianState>,
    /// True where the query time fell outside the training time support.
    #[serde(default)]
    pub extrapolated: Vec<bool>,
}

impl ReferenceTrajectory {
    pub fn new(times: Vec<f64>, states: Vec<GaussianState>) -> Result<Self> {
        if times.len() != states.len() || times.len() < 2 {
            return Err(Error::InvalidArgument(
                "reference trajectory needs matching times/states with >= 2 entries".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "reference trajectory times must be strictly increasing".into(),
            ));
        }
        let n = times.len();
        Ok(Self {
            times,
            states,
            extrapolated: vec![false; n],
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Output dimensionality of the per-time states.
    pub fn state_dim(&self) -> usize {
        self.states.first().map(|s| s.dim()).unwrap_or(0)
    }

    pub fn means(&self) -> Vec<DVector<f64>> {
        self.states.iter().map(|s| s.mean.clone()).collect()
    }
}

fn log_gauss(x: &DVector<f64>, mean: &DVector<f64>, cov_inv: &DMatrix<f64>, log_det: f64) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let maha = (cov_inv * &diff).dot(&diff);
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + maha)
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

/// kmeans++ center selection, deterministic for a given seed.
fn kmeanspp_centers(points: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut dist2: Vec<f64> = points
        .iter()
        .map(|p| (p - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining distances zero: reuse a uniform pick.
            points[rng.random_range(0..n)].clone()
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
            points[idx].clone()
        };
        for (i, p) in points.iter().enumerate() {
            dist2[i] = dist2[i].min((p - &next).norm_squared());
        }
        centers.push(next);
    }
    centers
}

fn apply_floor(cov: &mut DMatrix<f64>, floor: f64) -> bool {
    let min_eig = cov
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < floor {
        let d = cov.nrows();
        *cov += DMatrix::identity(d, d) * (floor - min_eig);
        true
    } else {
        false
    }
}

/// Fits a K-component GMM to (time, output) samples with EM.
///
/// The log-likelihood is non-decreasing per iteration (within numerical
/// slack) and the whole fit is deterministic for a fixed seed and input
/// order.
pub fn gmm_fit(
    data: &[(f64, DVector<f64>)],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<GmmModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("gmm_fit needs K >= 1".into()));
    }
    let out_dim = data
        .first()
        .ok_or_else(|| Error::InvalidArgument("gmm_fit needs data".into()))?
        .1
        .len();
    let dim = out_dim + 1;
    let n = data.len();
    if n < k * (dim + 1) {
        return Err(Error::InvalidArgument(format!(
            "gmm_fit needs at least K·(dim+1) = {} points, got {}",
            k * (dim + 1),
            n
        )));
    }
    let points: Vec<DVector<f64>> = data
        .iter()
        .map(|(t, v)| {
            let mut x = DVector::zeros(dim);
            x[0] = *t;
            x.rows_mut(1, out_dim).copy_from(v);
            x
        })
        .collect();

    // Global moments: degeneracy check + covariance floor scale.
    let global_mean = points.iter().fold(DVector::zeros(dim), |a, p| a + p) / n as f64;
    let mut global_var = 0.0;
    for p in &points {
        global_var += (p - &global_mean).norm_squared();
    }
    global_var /= (n as f64) * dim as f64;
    if global_var == 0.0 {
        return Err(Error::Degenerate(
            "gmm_fit: all data points are identical".into(),
        ));
    }
    let floor = 1e-8 * global_var;

    // Seeded kmeans++ initialization with hard assignment.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeanspp_centers(&points, k, &mut rng);
    let mut resp = DMatrix::zeros(n, k);
    for (i, p) in points.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centers.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        resp[(i, best)] = 1.0;
    }

    let mut priors = vec![0.0; k];
    let mut means = vec![DVector::zeros(dim); k];
    let mut covs = vec![DMatrix::zeros(dim, dim); k];
    let mut floored = false;
    let mut loglik_history = Vec::new();

    let m_step = |resp: &DMatrix<f64>,
                  priors: &mut Vec<f64>,
                  means: &mut Vec<DVector<f64>>,
                  covs: &mut Vec<DMatrix<f64>>,
                  floored: &mut bool| {
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[(i, j)]).sum();
            if nk <= 1e-12 {
                // Collapsed component: re-center on the global moments.
                priors[j] = 1e-12;
                means[j] = global_mean.clone();
                covs[j] = DMatrix::identity(dim, dim) * global_var;
                *floored = true;
                continue;
            }
            priors[j] = nk / n as f64;
            let mut mu = DVector::zeros(dim);
            for i in 0..n {
                mu += &points[i] * resp[(i, j)];
            }
            mu /= nk;
            let mut cov = DMatrix::zeros(dim, dim);
            for i in 0..n {
                let d = &points[i] - &mu;
                cov += &d * d.transpose() * resp[(i, j)];
            }
            cov /= nk;
            if apply_floor(&mut cov, floor) {
                *floored = true;
            }
            means[j] = mu;
            covs[j] = cov;
        }
        let total: f64 = priors.iter().sum();
        for p in priors.iter_mut() {
            *p /= total;
        }
    };

    m_step(&resp, &mut priors, &mut means, &mut covs, &mut floored);

    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..max_iter {
        // E-step with log-sum-exp.
        let factors: Vec<CovFactor> = covs
            .iter()
            .map(factor)
            .collect::<Result<Vec<_>>>()?;
        let mut ll = 0.0;
        for i in 0..n {
            let logp: Vec<f64> = (0..k)
                .map(|j| {
                    priors[j].ln() + log_gauss(&points[i], &means[j], &factors[j].inv, factors[j].log_det)
                })
                .collect();
            let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logp.iter().map(|v| (v - max).exp()).sum();
            let log_norm = max + sum.ln();
            ll += log_norm;
            for j in 0..k {
                resp[(i, j)] = (logp[j] - log_norm).exp();
            }
            debug_assert!(((0..k).map(|j| resp[(i, j)]).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        loglik_history.push(ll);
        m_step(&resp, &mut priors, &mut means, &mut covs, &mut floored);
        if (ll - prev_ll).abs() < tol {
            break;
        }
        prev_ll = ll;
    }

    Ok(GmmModel {
        k,
        dim,
        priors,
        means,
        covs,
        seed,
        loglik_history,
        floored,
    })
}

/// Conditional mean/covariance of the output given time under the mixture.
///
/// Queries outside the training time support are conditioned at the nearest
/// supported time and flagged in [`ReferenceTrajectory::extrapolated`].
pub fn gmr_regress(model: &GmmModel, query_times: &[f64]) -> Result<ReferenceTrajectory> {
    let out_dim = model.dim - 1;
    if query_times.len() < 2 {
        return Err(Error::InvalidArgument(
            "gmr_regress needs >= 2 query times".into(),
        ));
    }
    // Time support: ±2σ around every component.
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for j in 0..model.k {
        let mu = model.means[j][0];
        let sd = model.covs[j][(0, 0)].max(0.0).sqrt();
        t_min = t_min.min(mu - 2.0 * sd);
        t_max = t_max.max(mu + 2.0 * sd);
    }

    let mut states = Vec::with_capacity(query_times.len());
    let mut extrapolated = Vec::with_capacity(query_times.len());
    for &t_query in query_times {
        let outside = t_query < t_min || t_query > t_max;
        let t = t_query.clamp(t_min, t_max);
        extrapolated.push(outside);

        let mut log_h = Vec::with_capacity(model.k);
        for j in 0..model.k {
            let var_t = model.covs[j][(0, 0)].max(1e-300);
            let diff = t - model.means[j][0];
            log_h.push(
                model.priors[j].ln()
                    - 0.5 * ((2.0 * std::f64::consts::PI * var_t).ln() + diff * diff / var_t),
            );
        }
        let max = log_h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = log_h.iter().map(|v| (v - max).exp()).sum();
        let h: Vec<f64> = log_h.iter().map(|v| (v - max).exp() / norm).collect();

        let mut cond_means = Vec::with_capacity(model.k);
        let mut cond_covs = Vec::with_capacity(model.k);
        for j in 0..model.k {
            let var_t = model.covs[j][(0, 0)].max(1e-300);
            let cross = model.covs[j].view((1, 0), (out_dim, 1)).into_owned();
            let out_cov = model.covs[j].view((1, 1), (out_dim, out_dim)).into_owned();
            let mu = model.means[j].rows(1, out_dim).into_owned()
                + &cross * ((t - model.means[j][0]) / var_t);
            let cov = out_cov - &cross * cross.transpose() / var_t;
            cond_means.push(mu);
            cond_covs.push(cov);
        }
        let mut mean = DVector::zeros(out_dim);
        for j in 0..model.k {
            mean += &cond_means[j] * h[j];
        }
        let mut cov = DMatrix::zeros(out_dim, out_dim);
        for j in 0..model.k {
            let d = &cond_means[j] - &mean;
            cov += (&cond_covs[j] + &d * d.transpose()) * h[j];
        }
        states.push(GaussianState {
            mean,
            cov: clamp_psd(&cov),
        });
    }
    let mut traj = ReferenceTrajectory::new(query_times.to_vec(), states)?;
    traj.extrapolated = extrapolated;
    Ok(traj)
}

impl GmmModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gmm model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::parse("<gmm json>", e.to_string()))
    }
}

//! Kernelized movement primitive: kernel regression over a probabilistic
//! reference trajectory, predicting a Gaussian per query time.
//!
//! Predictions use the closed form
//!
//! ```text
//! μ*(t) = k*(t) (K + λ_mean Σ_blk)⁻¹ μ_stack
//! Σ*(t) = (N/λ_cov) [ k(t,t) I − k*(t) (K + λ_cov Σ_blk)⁻¹ k*(t)ᵀ ]
//! ```
//!
//! with a scalar RBF kernel shared across output dimensions (block kernel
//! `k(ti,tj)·I`). Reference points with a near-zero covariance act as hard
//! anchors: the predicted mean is pulled onto them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{clamp_psd, GaussianState};
use crate::gmm::ReferenceTrajectory;

/// RBF kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscale: f64,
    pub variance: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            lengthscale: 0.05,
            variance: 1.0,
        }
    }
}

impl KernelParams {
    pub fn eval(&self, t1: f64, t2: f64) -> f64 {
        let d = t1 - t2;
        self.variance * (-d * d / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Cache {
    /// (K + λ_mean Σ_blk)⁻¹ μ_stack, grouped in O-sized blocks.
    mean_weights: DVector<f64>,
    /// (K + λ_cov Σ_blk)⁻¹, full NO×NO inverse.
    cov_inverse: DMatrix<f64>,
}

/// Fitted KMP model. Serializes without its cached factorization, which is
/// rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KmpModelData", into = "KmpModelData")]
pub struct KmpModel {
    pub ref_traj: ReferenceTrajectory,
    pub kernel: KernelParams,
    pub lambda_mean: f64,
    pub lambda_cov: f64,
    cache: Cache,
}

#[derive(Serialize, Deserialize)]
struct KmpModelData {
    ref_traj: ReferenceTrajectory,
    kernel: KernelParams,
    lambda_mean: f64,
    lambda_cov: f64,
}

impl From<KmpModel> for KmpModelData {
    fn from(m: KmpModel) -> Self {
        KmpModelData {
            ref_traj: m.ref_traj,
            kernel: m.kernel,
            lambda_mean: m.lambda_mean,
            lambda_cov: m.lambda_cov,
        }
    }
}

impl TryFrom<KmpModelData> for KmpModel {
    type Error = Error;
    fn try_from(d: KmpModelData) -> Result<Self> {
        kmp_fit(&d.ref_traj, d.kernel, d.lambda_mean, d.lambda_cov)
    }
}

fn solve_spd(a: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol);
    }
    // One jitter retry before giving up.
    let n = a.nrows();
    let jitter = 1e-10 * a.trace().abs().max(1e-12) / n as f64;
    (a + DMatrix::identity(n, n) * jitter)
        .cholesky()
        .ok_or_else(|| Error::Singular("KMP system not positive definite".into()))
}

/// Fits the KMP closed form over a reference trajectory.
pub fn kmp_fit(
    ref_traj: &ReferenceTrajectory,
    kernel: KernelParams,
    lambda_mean: f64,
    lambda_cov: f64,
) -> Result<KmpModel> {
    if ref_traj.len() < 2 {
        return Err(Error::InvalidArgument(
            "kmp_fit needs a reference with >= 2 points".into(),
        ));
    }
    if lambda_mean <= 0.0 || lambda_cov <= 0.0 {
        return Err(Error::InvalidArgument(
            "kmp_fit regularizers must be > 0".into(),
        ));
    }
    let n = ref_traj.len();
    let o = ref_traj.state_dim();
    let size = n * o;

    let mut gram_mean = DMatrix::zeros(size, size);
    for i in 0..n {
        for j in 0..n {
            let kv = kernel.eval(ref_traj.times[i], ref_traj.times[j]);
            for d in 0..o {
                gram_mean[(i * o + d, j * o + d)] = kv;
            }
        }
    }
    let mut gram_cov = gram_mean.clone();
    for i in 0..n {
        let cov = &ref_traj.states[i].cov;
        for r in 0..o {
            for c in 0..o {
                gram_mean[(i * o + r, i * o + c)] += lambda_mean * cov[(r, c)];
                gram_cov[(i * o + r, i * o + c)] += lambda_cov * cov[(r, c)];
            }
        }
    }

    let mut mu_stack = DVector::zeros(size);
    for i in 0..n {
        mu_stack
            .rows_mut(i * o, o)
            .copy_from(&ref_traj.states[i].mean);
    }

    let mean_weights = solve_spd(&gram_mean)?.solve(&mu_stack);
    let cov_inverse = solve_spd(&gram_cov)?.inverse();

    Ok(KmpModel {
        ref_traj: ref_traj.clone(),
        kernel,
        lambda_mean,
        lambda_cov,
        cache: Cache {
            mean_weights,
            cov_inverse,
        },
    })
}

impl KmpModel {
    /// Predicted Gaussian at a single time.
    pub fn predict_at(&self, t: f64) -> GaussianState {
        let n = self.ref_traj.len();
        let o = self.ref_traj.state_dim();
        let k_star: Vec<f64> = self
            .ref_traj
            .times
            .iter()
            .map(|&ti| self.kernel.eval(t, ti))
            .collect();

        let mut mean = DVector::zeros(o);
        for i in 0..n {
            for d in 0..o {
                mean[d] += k_star[i] * self.cache.mean_weights[i * o + d];
            }
        }

        let mut quad = DMatrix::zeros(o, o);
        for i in 0..n {
            if k_star[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let w = k_star[i] * k_star[j];
                if w == 0.0 {
                    continue;
                }
                for r in 0..o {
                    for c in 0..o {
                        quad[(r, c)] += w * self.cache.cov_inverse[(i * o + r, j * o + c)];
                    }
                }
            }
        }
        let scale = n as f64 / self.lambda_cov;
        let cov = (DMatrix::identity(o, o) * self.kernel.eval(t, t) - quad) * scale;
        GaussianState {
            mean,
            cov: clamp_psd(&cov),
        }
    }
}

/// Predicts a Gaussian per query time.
pub fn kmp_predict(model: &KmpModel, times: &[f64]) -> Result<ReferenceTrajectory> {
    let states = times.iter().map(|&t| model.predict_at(t)).collect();
    ReferenceTrajectory::new(times.to_vec(), states)
}

/// Exhaustive grid search over kernel parameters, scored by leave-some-out
/// RMSE between predicted and reference means. Ties break toward the smaller
/// lengthscale, then grid order.
pub fn kmp_tune(
    ref_traj: &ReferenceTrajectory,
    grid: &[KernelParams],
    lambda_mean: f64,
    lambda_cov: f64,
) -> Result<KernelParams> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("kmp_tune grid is empty".into()));
    }
    let n = ref_traj.len();
    // Hold out every 4th point (keeping first/last in the training set).
    let held: Vec<usize> = (0..n).filter(|i| i % 4 == 2).collect();
    if held.is_empty() || n - held.len() < 2 {
        return Ok(grid[0]);
    }
    let kept: Vec<usize> = (0..n).filter(|i| i % 4 != 2).collect();
    let train = ReferenceTrajectory::new(
        kept.iter().map(|&i| ref_traj.times[i]).collect(),
        kept.iter().map(|&i| ref_traj.states[i].clone()).collect(),
    )?;

    let mut best: Option<(f64, KernelParams)> = None;
    for &params in grid {
        let Ok(model) = kmp_fit(&train, params, lambda_mean, lambda_cov) else {
            continue;
        };
        let mut sq = 0.0;
        let mut count = 0;
        for &i in &held {
            let pred = model.predict_at(ref_traj.times[i]);
            sq += (&pred.mean - &ref_traj.states[i].mean).norm_squared();
            count += pred.mean.len();
        }
        let rmse = (sq / count as f64).sqrt();
        let better = match &best {
            None => true,
            Some((best_rmse, best_params)) => {
                rmse < *best_rmse
                    || (rmse == *best_rmse && params.lengthscale < best_params.lengthscale)
            }
        };
        if better {
            best = Some((rmse, params));
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::Singular("kmp_tune: no grid point produced a solvable system".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine_ref(n: usize, noise_var: f64) -> ReferenceTrajectory {
        let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let states = times
            .iter()
            .map(|&t| {
                GaussianState::isotropic(
                    DVector::from_vec(vec![(2.0 * std::f64::consts::PI * t).sin()]),
                    noise_var,
                )
            })
            .collect();
        ReferenceTrajectory::new(times, states).unwrap()
    }

    #[test]
    fn near_isolated_point_matches_small_solve_oracle() {
        // Two reference points so far apart in kernel terms that each solves
        // independently; verified against the explicit 1x1 solution
        // μ* = k(t,t) (k(t,t) + λ ε)⁻¹ μ.
        let eps = 1e-8;
        let kernel = KernelParams {
            lengthscale: 0.01,
            variance: 1.0,
        };
        let traj = ReferenceTrajectory::new(
            vec![0.0, 1.0],
            vec![
                GaussianState::isotropic(DVector::from_vec(vec![2.5]), eps),
                GaussianState::isotropic(DVector::from_vec(vec![-4.0]), eps),
            ],
        )
        .unwrap();
        let model = kmp_fit(&traj, kernel, 1.0, 60.0).unwrap();
        let oracle = kernel.eval(0.0, 0.0) / (kernel.eval(0.0, 0.0) + 1.0 * eps) * 2.5;
        let pred = model.predict_at(0.0);
        assert!((pred.mean[0] - oracle).abs() < 1e-10);
        assert!((pred.mean[0] - 2.5).abs() < 1e-4);
    }

    #[test]
    fn interpolation_limit_reproduces_reference_means() {
        let traj = sine_ref(40, 1e-10);
        let model = kmp_fit(
            &traj,
            KernelParams {
                lengthscale: 0.05,
                variance: 1.0,
            },
            1e-8,
            60.0,
        )
        .unwrap();
        for (i, &t) in traj.times.iter().enumerate() {
            let pred = model.predict_at(t);
            assert!(
                (pred.mean[0] - traj.states[i].mean[0]).abs() < 1e-3,
                "t={t}"
            );
        }
    }

    #[test]
    fn predicted_covariance_is_symmetric_psd() {
        let traj = sine_ref(30, 0.05);
        let model = kmp_fit(&traj, KernelParams::default(), 1.0, 60.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let t = rng.random_range(-0.2..1.2);
            let pred = model.predict_at(t);
            assert!((&pred.cov - pred.cov.transpose()).amax() < 1e-10);
            let min_eig = pred
                .cov
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig >= -1e-10);
        }
    }

    #[test]
    fn prediction_is_deterministic() {
        let traj = sine_ref(20, 0.01);
        let model = kmp_fit(&traj, KernelParams::default(), 1.0, 60.0).unwrap();
        let a = kmp_predict(&model, &[0.3, 0.31]).unwrap();
        let b = kmp_predict(&model, &[0.3, 0.31]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn anchor_attraction() {
        // A reference point with covariance εI pins the prediction there.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = 25;
            let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let states: Vec<GaussianState> = times
                .iter()
                .map(|&t| {
                    GaussianState::isotropic(
                        DVector::from_vec(vec![
                            rng.random_range(-1.0..1.0) + (3.0 * t).sin(),
                            rng.random_range(-1.0..1.0),
                        ]),
                        0.05,
                    )
                })
                .collect();
            let mut traj = ReferenceTrajectory::new(times, states).unwrap();
            let eps = 1e-8;
            let anchor = DVector::from_vec(vec![rng.random_range(-1.0..1.0), 0.5]);
            let idx = rng.random_range(0..n);
            traj.states[idx] = GaussianState::isotropic(anchor.clone(), eps);

            let model = kmp_fit(&traj, KernelParams::default(), 1.0, 60.0).unwrap();
            let pred = model.predict_at(traj.times[idx]);
            assert!(
                (&pred.mean - &anchor).norm() < 10.0 * eps.sqrt(),
                "err {}",
                (&pred.mean - &anchor).norm()
            );
        }
    }

    #[test]
    fn predictions_vary_continuously() {
        let traj = sine_ref(30, 0.01);
        let model = kmp_fit(&traj, KernelParams::default(), 1.0, 60.0).unwrap();
        let delta = 1e-6;
        for i in 0..20 {
            let t = i as f64 / 19.0;
            let a = model.predict_at(t);
            let b = model.predict_at(t + delta);
            // Slope bound: predictions are smooth with O(1/ℓ) derivative.
            assert!((&a.mean - &b.mean).norm() < 1e-3 * delta / 1e-6);
        }
    }

    #[test]
    fn doubling_lambda_mean_shrinks_toward_zero() {
        // With isotropic equal reference covariances the prediction operator
        // at reference times is K (K + λσ²I)⁻¹, whose eigenvalues shrink
        // monotonically in λ; the stacked prediction norm must not grow.
        let traj = sine_ref(30, 0.1);
        let norm_for = |lambda: f64| {
            let model = kmp_fit(&traj, KernelParams::default(), lambda, 60.0).unwrap();
            traj.times
                .iter()
                .map(|&t| model.predict_at(t).mean.norm_squared())
                .sum::<f64>()
        };
        assert!(norm_for(2.0) <= norm_for(1.0) + 1e-12);
        assert!(norm_for(4.0) <= norm_for(2.0) + 1e-12);
    }

    #[test]
    fn tune_single_point_grid_returns_it() {
        let traj = sine_ref(20, 0.01);
        let only = KernelParams {
            lengthscale: 0.07,
            variance: 1.0,
        };
        assert_eq!(kmp_tune(&traj, &[only], 1.0, 60.0).unwrap(), only);
    }

    #[test]
    fn tune_selects_grid_minimum() {
        let traj = sine_ref(60, 1e-6);
        let grid: Vec<KernelParams> = [0.001, 0.01, 0.05, 0.1, 0.5, 2.0]
            .iter()
            .map(|&l| KernelParams {
                lengthscale: l,
                variance: 1.0,
            })
            .collect();
        let picked = kmp_tune(&traj, &grid, 1e-6, 60.0).unwrap();

        // Independent re-enumeration of the same leave-some-out objective.
        let held: Vec<usize> = (0..traj.len()).filter(|i| i % 4 == 2).collect();
        let kept: Vec<usize> = (0..traj.len()).filter(|i| i % 4 != 2).collect();
        let train = ReferenceTrajectory::new(
            kept.iter().map(|&i| traj.times[i]).collect(),
            kept.iter().map(|&i| traj.states[i].clone()).collect(),
        )
        .unwrap();
        let rmse = |p: KernelParams| {
            let model = kmp_fit(&train, p, 1e-6, 60.0).unwrap();
            let mut sq = 0.0;
            for &i in &held {
                sq += (&model.predict_at(traj.times[i]).mean - &traj.states[i].mean)
                    .norm_squared();
            }
            (sq / held.len() as f64).sqrt()
        };
        let picked_rmse = rmse(picked);
        for &p in &grid {
            assert!(picked_rmse <= rmse(p) + 1e-15);
        }
    }

    #[test]
    fn tune_is_deterministic() {
        let traj = sine_ref(40, 0.01);
        let grid: Vec<KernelParams> = [0.02, 0.05, 0.1]
            .iter()
            .map(|&l| KernelParams {
                lengthscale: l,
                variance: 1.0,
            })
            .collect();
        let a = kmp_tune(&traj, &grid, 1.0, 60.0).unwrap();
        let b = kmp_tune(&traj, &grid, 1.0, 60.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_serialization_round_trip() {
        let traj = sine_ref(15, 0.01);
        let model = kmp_fit(&traj, KernelParams::default(), 1.0, 60.0).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: KmpModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
    }
}

//! Run configuration shared by the pipeline and the CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All tunables of the pipeline. Unknown keys in a config file are
/// rejected so typos cannot silently fall back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// GMM component count.
    pub k: usize,
    /// Candidate RBF lengthscales for the grid search.
    pub lengthscale_grid: Vec<f64>,
    pub kernel_variance: f64,
    pub lambda_mean: f64,
    pub lambda_cov: f64,
    /// Covariance scale for desired points (the infinitesimal anchor
    /// covariance εI).
    pub epsilon: f64,
    /// Number of resampled desired points per enhanced window (R).
    pub resample_count: usize,
    /// Enhanced window width as a fraction of normalized time.
    pub window: f64,
    /// Task frame count P.
    pub frame_count: usize,
    /// Number of reference timestamps produced by GMR.
    pub n_ref: usize,
    /// Number of generated trajectory points.
    pub n_out: usize,
    pub em_max_iter: usize,
    pub em_tol: f64,
    /// Cone enumeration step for terminal pose candidates (radians).
    pub angle_step: f64,
    /// Position samples drawn by terminal pose estimation.
    pub n_pos_samples: usize,
    /// Rotation weight in pose distances (length units per radian).
    pub w_rot: f64,
    /// Tangent-space fixed-point iterations for orientation fusion.
    pub orientation_fusion_iters: usize,
    /// Ablation: insert both endpoint anchors in every frame.
    pub anchors_in_all_frames: bool,
    /// Benchmark frame perturbation: translation scale (fraction of the
    /// start-end span) and rotation scale (radians).
    pub translation_scale: f64,
    pub rotation_scale: f64,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 5,
            lengthscale_grid: vec![0.02, 0.05, 0.1, 0.2],
            kernel_variance: 1.0,
            lambda_mean: 1.0,
            lambda_cov: 60.0,
            epsilon: 1e-8,
            resample_count: 5,
            window: 0.1,
            frame_count: 2,
            n_ref: 100,
            n_out: 200,
            em_max_iter: 200,
            em_tol: 1e-10,
            angle_step: 2.0_f64.to_radians(),
            n_pos_samples: 10,
            w_rot: 0.1,
            orientation_fusion_iters: 2,
            anchors_in_all_frames: false,
            translation_scale: 0.8,
            rotation_scale: 0.15,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg.into()))
            }
        };
        check(self.k >= 1, "k must be >= 1")?;
        check(!self.lengthscale_grid.is_empty(), "lengthscale_grid is empty")?;
        check(
            self.lengthscale_grid.iter().all(|&l| l > 0.0),
            "lengthscales must be > 0",
        )?;
        check(self.kernel_variance > 0.0, "kernel_variance must be > 0")?;
        check(self.lambda_mean > 0.0, "lambda_mean must be > 0")?;
        check(self.lambda_cov > 0.0, "lambda_cov must be > 0")?;
        check(self.epsilon > 0.0, "epsilon must be > 0")?;
        check(self.resample_count >= 1, "resample_count must be >= 1")?;
        check(
            self.window > 0.0 && self.window <= 0.2,
            "window must be in (0, 0.2]",
        )?;
        check(self.frame_count >= 1, "frame_count must be >= 1")?;
        check(self.n_ref >= 2, "n_ref must be >= 2")?;
        check(self.n_out >= 2, "n_out must be >= 2")?;
        check(self.angle_step > 0.0, "angle_step must be > 0")?;
        check(self.n_pos_samples >= 1, "n_pos_samples must be >= 1")?;
        check(self.w_rot >= 0.0, "w_rot must be >= 0")?;
        check(
            self.orientation_fusion_iters >= 1,
            "orientation_fusion_iters must be >= 1",
        )?;
        check(self.translation_scale >= 0.0, "translation_scale must be >= 0")?;
        check(self.rotation_scale >= 0.0, "rotation_scale must be >= 0")?;
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"seed": 1, "not_a_key": true}"#).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(RunConfig::from_json(r#"{"window": 0.5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"epsilon": 0.0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"k": 0}"#).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 7, "k": 3}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.lambda_cov, RunConfig::default().lambda_cov);
    }
}

//! Multivariate Gaussian algebra: precision-weighted products, affine
//! transforms and seeded sampling.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::TaskFrame;

/// Mean + covariance pair. Covariance is symmetrized and clamped to PSD on
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "mean dim {} vs cov {}x{}",
                d,
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self {
            mean,
            cov: clamp_psd(&cov),
        })
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Self {
        let d = mean.len();
        Self {
            mean,
            cov: DMatrix::identity(d, d) * variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Block-diagonal concatenation of two Gaussians.
    pub fn concat(&self, other: &GaussianState) -> GaussianState {
        let d1 = self.dim();
        let d2 = other.dim();
        let mut mean = DVector::zeros(d1 + d2);
        mean.rows_mut(0, d1).copy_from(&self.mean);
        mean.rows_mut(d1, d2).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(d1 + d2, d1 + d2);
        cov.view_mut((0, 0), (d1, d1)).copy_from(&self.cov);
        cov.view_mut((d1, d1), (d2, d2)).copy_from(&other.cov);
        GaussianState { mean, cov }
    }

    /// Sub-Gaussian over a contiguous coordinate block.
    pub fn block(&self, offset: usize, len: usize) -> GaussianState {
        GaussianState {
            mean: self.mean.rows(offset, len).into_owned(),
            cov: self.cov.view((offset, offset), (len, len)).into_owned(),
        }
    }
}

/// Symmetrizes and clamps negative eigenvalues to zero.
pub fn clamp_psd(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let d = sym.nrows();
    let mut lam = DMatrix::zeros(d, d);
    for i in 0..d {
        lam[(i, i)] = eig.eigenvalues[i].max(0.0);
    }
    let out = &eig.eigenvectors * lam * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Floors each eigenvalue at `rel` times the largest one, capping the
/// condition number at `1/rel`. Dimensions with no demonstrated variation
/// otherwise carry a floored-to-nearly-zero variance that would veto any
/// disagreeing input in a precision-weighted fusion.
pub fn spectral_floor(cov: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let floor = rel * max_eig;
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return sym;
    }
    let d = sym.nrows();
    let mut lam = DMatrix::zeros(d, d);
    for i in 0..d {
        lam[(i, i)] = eig.eigenvalues[i].max(floor);
    }
    let out = &eig.eigenvectors * lam * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

fn regularized_precision(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.inverse());
    }
    // Near-singular input: add a tiny ridge before inverting. Desired points
    // carry infinitesimal εI covariances that would otherwise break here.
    let d = cov.nrows();
    let delta = 1e-10 * cov.trace().max(1e-300) / d as f64;
    (cov + DMatrix::identity(d, d) * delta)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular("covariance not invertible after regularization".into()))
}

/// Precision-weighted fusion: `Σ⁻¹ = Σ_p Σ_p⁻¹`, `μ = Σ · Σ_p Σ_p⁻¹ μ_p`.
/// This is the closed-form argmax of the product of the input Gaussians.
pub fn gaussian_product(gs: &[GaussianState]) -> Result<GaussianState> {
    let first = gs
        .first()
        .ok_or_else(|| Error::InvalidArgument("gaussian_product needs >= 1 input".into()))?;
    let d = first.dim();
    let mut precision = DMatrix::zeros(d, d);
    let mut weighted_mean = DVector::zeros(d);
    for g in gs {
        if g.dim() != d {
            return Err(Error::DimensionMismatch(
                "gaussian_product inputs differ in dimension".into(),
            ));
        }
        let p = regularized_precision(&g.cov)?;
        weighted_mean += &p * &g.mean;
        precision += p;
    }
    let cov = precision
        .try_inverse()
        .ok_or_else(|| Error::Singular("fused precision not invertible".into()))?;
    let mean = &cov * weighted_mean;
    Ok(GaussianState {
        mean,
        cov: clamp_psd(&cov),
    })
}

/// Pushes a Gaussian through a task frame: `mean ↦ A μ + b`, `cov ↦ A Σ Aᵀ`.
pub fn gaussian_affine(f: &TaskFrame, g: &GaussianState) -> Result<GaussianState> {
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch(format!(
            "frame dim {} vs gaussian dim {}",
            f.dim(),
            g.dim()
        )));
    }
    let mean = f.apply_point(&g.mean);
    let cov = &f.a * &g.cov * f.a.transpose();
    Ok(GaussianState {
        mean,
        cov: (&cov + cov.transpose()) * 0.5,
    })
}

/// Deterministic seeded sampling via the symmetric PSD square root.
pub fn gaussian_sample(g: &GaussianState, seed: u64, n: usize) -> Vec<DVector<f64>> {
    let d = g.dim();
    let eig = clamp_psd(&g.cov).symmetric_eigen();
    let mut sqrt_lam = DMatrix::zeros(d, d);
    for i in 0..d {
        sqrt_lam[(i, i)] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    let root = &eig.eigenvectors * sqrt_lam;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            &g.mean + &root * z
        })
        .collect()
}

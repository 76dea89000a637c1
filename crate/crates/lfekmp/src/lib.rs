//! Learning-from-demonstration toolkit built around kernelized movement
//! primitives with local start/end feature enhancement.
//!
//! The crate covers the full pipeline from raw demonstrations to generalized
//! trajectories:
//!
//! * [`manifold`] — unit-quaternion geometry, rigid frames, pose algebra.
//! * [`gaussian`] — multivariate Gaussian products, affine maps, sampling.
//! * [`gmm`] — EM-fitted Gaussian mixtures and Gaussian mixture regression.
//! * [`kmp`] — kernelized movement primitive regression over a reference
//!   trajectory distribution.
//! * [`lfekmp`] — task-parameterized encoding, local feature enhancement,
//!   per-frame KMP and global Gaussian fusion.
//! * [`tpgmm`] — task-parameterized GMM baseline.
//! * [`bridge`] — semantic-keypoint interaction statistics and terminal pose
//!   estimation.
//! * [`metrics`] — shape-preservation metrics (topological similarity,
//!   smoothness, endpoint error).
//! * [`data`] — demonstration ingestion, keypoint-stream trajectory
//!   extraction, fixtures.
//! * [`cli`] — the command-line surface (`learn`, `generalize`, `endpose`,
//!   `extract`, `benchmark`).
//!
//! See the crate `examples/` directory for one runnable example per major
//! capability.

pub mod bridge;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gaussian;
pub mod gmm;
pub mod kmp;
pub mod lfekmp;
pub mod manifold;
pub mod metrics;
pub mod plot;
pub mod tpgmm;

pub use error::{Error, Result};

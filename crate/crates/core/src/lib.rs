//! # frf-lab
//!
//! Frequency response function (FRF) estimation with sliding-window local
//! methods, plus a synthetic benchmark harness for comparing them on lightly
//! damped systems.
//!
//! The crate provides:
//!
//! * [`spectra`] — synthetic experiments: band-limited multisine excitation,
//!   discrete-time LTI simulation with calibrated noise and deliberate
//!   leakage, and the unitary DFT that turns records into per-bin spectra.
//! * [`localwin`] — sliding local windows and scaled polynomial regressors.
//! * [`classic`] — the classical estimators: local polynomial (LPM), local
//!   rational (LRM), iterative local rational (ILRM), and MDL order
//!   selection.
//! * [`cgauss`] — complex-Gaussian linear algebra: augmented/composite kernel
//!   representations, MAP solvers, and the marginal-likelihood objective.
//! * [`kernels`] — the kernel zoo: DI, DP, DC, R1 and their additive
//!   composites, with hyperparameter bounds.
//! * [`lgpr`] — the regularized estimators: LRPM (coefficient space) and
//!   LGPR (FRF space), each with per-window empirical-Bayes tuning.
//! * [`harness`] — benchmark orchestration, MSE scoring and artifact output.
//!
//! All numerics are generic over the scalar type through [`Scalar`]
//! (`f32` or `f64`); the concrete aliases below pin the common choices.

pub mod cgauss;
pub mod classic;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod lgpr;
pub mod localwin;
pub mod scalar;
pub mod seeds;
pub mod spectra;

pub use error::{FrfError, Result};
pub use scalar::Scalar;

/// Spectra record in `f64`, the default precision for benchmark runs.
pub type SpectraRecord64 = spectra::SpectraRecord<f64>;
/// Spectra record in `f32`.
pub type SpectraRecord32 = spectra::SpectraRecord<f32>;
/// FRF estimate in `f64`.
pub type FrfEstimate64 = lgpr::FrfEstimate<f64>;
/// FRF estimate in `f32`.
pub type FrfEstimate32 = lgpr::FrfEstimate<f32>;
/// Kernel specification in `f64`.
pub type KernelSpec64 = kernels::KernelSpec<f64>;
/// Local window in `f64`.
pub type LocalWindow64 = localwin::LocalWindow<f64>;

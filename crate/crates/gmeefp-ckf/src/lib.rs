//! Robust nonlinear state estimation built on the cubature Kalman filter.
//!
//! The crate provides two filters over a shared state-space abstraction:
//!
//! * the classical third-degree **cubature Kalman filter** ([`ckf`]), and
//! * the **GMEEFP-CKF** ([`filter`]), whose measurement update maximizes a
//!   generalized minimum-error-entropy criterion with a fiducial point
//!   ([`criterion`]) through fixed-point iteration over a whitened
//!   regression. Under heavy-tailed, impulsive measurement noise the robust
//!   update discounts outlier-contaminated residuals instead of folding them
//!   into the state at full weight.
//!
//! The [`experiments`] module adds a reproducible Monte Carlo harness for the
//! planar vehicle-tracking benchmark (constant-velocity motion, range-bearing
//! sensor, mixed-Gaussian impulsive noise), with MSD curves, steady-state
//! summaries, and parameter sweeps. The `gmeefp-ckf` binary exposes it on the
//! command line.
//!
//! # Quick start
//!
//! ```
//! use gmeefp_ckf::ckf::GaussianBelief;
//! use gmeefp_ckf::filter::{gmeefp_step, preset};
//! use gmeefp_ckf::numerics::SymMatrix;
//! use gmeefp_ckf::state_space::{make_cv_model, simulate, NoiseSpec};
//! use nalgebra::DVector;
//!
//! // Planar constant-velocity target observed in range and bearing.
//! let model = make_cv_model(0.5, 0.1, 1.0)?;
//! let process = NoiseSpec::gaussian(4, 0.1)?;
//! let measurement = NoiseSpec::mixture(2, &[(0.96, 1.0), (0.04, 100.0)])?;
//! let x0 = DVector::from_vec(vec![1.0, 1.0, 10.0, 20.0]);
//! let trajectory = simulate(&model, &process, &measurement, &x0, 50, 42)?;
//!
//! // Filter the measurements with the robust update.
//! let params = preset("gmeefp")?;
//! let mut belief = GaussianBelief::new(x0, SymMatrix::identity(4))?;
//! for y in &trajectory.measurements {
//!     let (next, _info) = gmeefp_step(&belief, &model, y, &params)?;
//!     belief = next;
//! }
//! assert!(belief.mean.iter().all(|v| v.is_finite()));
//! # Ok::<(), gmeefp_ckf::Error>(())
//! ```

pub mod ckf;
pub mod criterion;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod numerics;
pub mod state_space;

pub use error::{Error, Result};

/// Doc-tests for the guide in `book/`; every fenced Rust block in the
/// chapters compiles and runs with `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/state-space.md")]
    mod state_space {}
    #[doc = include_str!("../../../book/src/cubature-filter.md")]
    mod cubature_filter {}
    #[doc = include_str!("../../../book/src/robust-criteria.md")]
    mod robust_criteria {}
    #[doc = include_str!("../../../book/src/gmeefp-filter.md")]
    mod gmeefp_filter {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}

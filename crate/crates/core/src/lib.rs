//! Parallel-in-time iterated Gaussian smoothers.
//!
//! This crate implements iterated extended (IEKS) and sigma-point (IPLS)
//! Kalman smoothers for nonlinear state-space models with additive
//! Gaussian noise, in two interchangeable engines:
//!
//! * a classical sequential Kalman filter / Rauch-Tung-Striebel smoother
//!   ([`sequential`]), which doubles as the correctness oracle, and
//! * a parallel-in-time engine ([`parfilter`], [`parsmoother`]) that maps
//!   filtering and smoothing onto an associative prefix/suffix scan
//!   ([`scan`]), reducing span complexity from linear to logarithmic in
//!   the number of time steps.
//!
//! The outer relinearization loop lives in [`iterated`]; per-step
//! linearizations (first-order Taylor or cubature statistical linear
//! regression) in [`linearize`]; the coordinated-turn / bearings-only
//! benchmark model and trajectory simulator in [`model`].

pub mod error;
pub mod gaussmath;
pub mod iterated;
pub mod linearize;
pub mod model;
pub mod parfilter;
pub mod parsmoother;
pub mod scan;
pub mod sequential;

pub use error::{Error, Result};
pub use gaussmath::SymMatrix;
pub use iterated::{Engine, IterationConfig, IterationTrace, Method};
pub use linearize::{LinearizationParams, NominalTrajectory};
pub use model::{CtModel, CtParams, StateSpaceModel, Trajectory};
pub use scan::{ScanMode, ScanPlan};
pub use sequential::GaussianBelief;

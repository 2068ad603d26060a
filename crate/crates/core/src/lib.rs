//! Relative-frame target tracking from a moving ego vehicle.
//!
//! The crate models a target and the ego vehicle with constant turn rate and
//! acceleration (or white-noise jerk) motion, expresses the target relative to
//! the ego in three coordinate choices and tracks it with an extended Kalman
//! filter that propagates the ego's own estimation uncertainty.

pub mod cli;
pub mod ekf;
pub mod error;
pub mod frames;
pub mod global_models;
pub mod observability;
pub mod relmodels;
pub mod simlab;
pub mod statespace;

pub use error::{Error, Result};
pub use statespace::{
    CartesianState6, CtraState, EgoBelief, EgoInput, GaussianBelief, Model, NoiseSpec, RelState, TargetBelief,
};

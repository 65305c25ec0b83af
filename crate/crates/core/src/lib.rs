//! Efficient estimation of a Euclidean parameter under smooth equality
//! constraints `S(θ) = 0`.
//!
//! Given an efficient unconstrained estimate `θ̂` with an information
//! estimate `Î`, the crate computes the one-step corrected estimate `θ*`,
//! its Euclidean projection `θ̃` onto the constraint manifold, and the
//! constrained information bound, together with the matching transform of
//! efficient influence functions.
//!
//! Modules:
//! - [`constraint`]: constraint systems, Jacobians, null-space bases.
//! - [`estimator`]: one-step update, manifold projection, bounds.
//! - [`models`]: built-in models (common mean, location-scale with known
//!   coefficient of variation, exchangeable Gaussian copula).
//! - [`montecarlo`]: seeded simulation engine checking the asymptotics.
//! - [`json`]: 17-significant-digit JSON number formatting for reports.

pub mod constraint;
pub mod error;
pub mod estimator;
pub mod json;
pub mod linalg;
pub mod models;
pub mod montecarlo;

pub use constraint::{ConstraintSpec, ConstraintSystem, CvForm, JacobianMode, LinearConstraint};
pub use error::{Error, ErrorKind, Result};
pub use estimator::{
    constrained_bound, constrained_bound_nullspace, constrained_influence, efficient_score,
    estimate_constrained, influence_projector, linear_constrained_estimate,
    linear_constrained_estimate_nullspace, one_step_update, project_to_manifold,
    ConstrainedResult, EfficientEstimate, InfluenceSample, ModelTag, Projection, ProjectionOptions,
};
pub use models::DataMatrix;
pub use montecarlo::{run_scenario, MCReport, Scenario, ScenarioModel};

pub use nalgebra::{DMatrix, DVector};

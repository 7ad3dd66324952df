//! Feasible-side experimental optimization.
//!
//! Given a plant whose cost and constraints can only be measured by running
//! an experiment, this crate generates a chain of experiments that never
//! violates the plant constraints, decreases the cost at every step and stops
//! close to a Fritz John point. Each step projects a target onto a set of
//! local descent halfspaces and then moves a fraction of the way towards the
//! projected target, the fraction being limited by Lipschitz bounds on the
//! plant functions.
//!
//! Module map:
//!
//! - [`model`]: problem data, the plant-oracle contract and measurements.
//! - [`bounds`]: Lipschitz growth bounds and the convergence diagnostics
//!   derived from them.
//! - [`qp`]: phase-1 LP feasibility and Euclidean projection onto
//!   halfspaces intersected with a box.
//! - [`engine`]: the project-and-filter iteration with adaptive projection
//!   parameters.
//! - [`fj`]: Fritz John error metric and termination certificates.
//! - [`benchmarks`]: built-in analytic plants and reference oracles.
//! - [`protocol`]: newline-delimited JSON wire format for external plants.
//! - [`io`]: problem files and trajectory export.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod bounds;
pub mod engine;
mod error;
pub mod fj;
pub mod io;
pub mod linalg;
pub mod model;
pub mod protocol;
pub mod qp;

pub use benchmarks::{builtin, BuiltinPlant, Summary};
pub use bounds::GrowthBounds;
pub use engine::{
    run, Adaptation, Ceilings, IterateRecord, ProjectionParams, RunConfig, RunFailure,
    StepStatus, StopReason, Trajectory,
};
pub use error::{Error, Result};
pub use fj::{FjCertificate, Normalization};
pub use model::{
    AnalyticPlant, BoxBounds, DecisionVector, LipschitzData, Measurement, NumericalConstraint,
    PlantOracle, ProblemSpec, TargetRule, ValidationReport,
};
pub use qp::{Feasibility, HalfspaceSet, Projection};

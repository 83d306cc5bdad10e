//! Nested case-control sampling in the Cox model.
//!
//! The crate simulates stratified nested case-control data exactly, fits the
//! maximum partial likelihood estimator and the Breslow baseline estimator,
//! evaluates the closed-form semiparametric efficiency bounds, and verifies
//! the projection calculus behind those bounds on a quadrature grid.

pub mod bounds;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod io;
pub mod model;
pub mod operators;
pub mod quadrature;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use model::{
    BaselineModel, CovariateModel, GroupSizeDistribution, ModelConfig, Observation,
};

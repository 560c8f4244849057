//! Monte Carlo transport of protons as a stochastic differential equation on
//! position × log-energy × direction, with direction on the unit sphere.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); `f64` aliases are provided below.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod convergence;
pub mod error;
pub mod experiments;
pub mod export;
pub mod integrators;
pub mod model;
pub mod montecarlo;
pub mod observables;
pub mod scalar;
pub mod sensitivity;
pub mod sphere;
pub mod stats;
pub mod vector;

pub use error::{Error, Result};
pub use integrators::{full_step, BrownianIncrement, DomainBox, NoiseDraw, ParticleState, SchemeId, StepOptions};
pub use model::{AngularModel, ModelParams, Param};
pub use montecarlo::{run_ensemble, BeamSpec, EnsembleOutput, EnsembleSummary, RunConfig};
pub use observables::{DepositMode, DoseGrid, GridSpec, Kernel, MollifierSpec};
pub use scalar::Real;
pub use sensitivity::{ParamSet, SensitivityState};
pub use sphere::{Dim, Direction};
pub use vector::Vec3;

pub type Vec3f = Vec3<f64>;
pub type Direction64 = Direction<f64>;
pub type ModelParams64 = ModelParams<f64>;
pub type ParticleState64 = ParticleState<f64>;
pub type RunConfig64 = RunConfig<f64>;
pub type DoseGrid64 = DoseGrid<f64>;
pub type GridSpec64 = GridSpec<f64>;

//! Langevin and Brownian sampling integrators and the machinery to measure
//! the bias of their configurational distributions.
//!
//! The modules build on each other bottom-up: [`model`] and [`rng`] feed
//! [`dynamics`]; [`stats`] and [`reference`] score trajectories; [`theory`]
//! predicts the bias; [`harness`] runs whole studies.

pub mod dynamics;
pub mod harness;
pub mod model;
pub mod reference;
pub mod rng;
pub mod stats;
pub mod theory;

pub use dynamics::{
    compose_splitting, ou_coefficients, DynamicsError, Integrator, LangevinParams, Method, OuCoefficients,
    PhaseState, SplittingScheme, StepContext,
};
pub use harness::{
    build_reference, convergence_study, emit_csv, gamma_sweep, run_trajectory, CellSpec, ExperimentSpec,
    HarnessError, RunResult, StudyResult,
};
pub use model::{DerivativeTower1D, ModelError, Potential, PotentialModel};
pub use reference::{quadrature_bin_probabilities, ReferenceDistribution, ReferenceError};
pub use rng::NoiseStream;
pub use stats::{Histogram, StatsError};
pub use theory::{CorrectionMethod, CorrectionOrder, TheoryError};

//! Core library: spectral discretization, problem catalog, reproducible
//! noise, linear evolution families, slow-fast time steppers, drift
//! averaging, and experiment runners for two-time-scale stochastic
//! reaction-diffusion systems.

// Comparisons written as !(x > 0.0) deliberately reject NaN alongside the
// out-of-range values; the suggested partial_cmp form would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod catalog;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod model;
pub mod noise;
pub mod solver;
pub mod spectral;
pub mod stats;
pub mod validate;

pub use averaging::{
    auxiliary_fast, averaged_drift, averaged_drift_cached, estimate_evolution_family,
    estimate_mixing_rate, khasminskii_delta, AveragedDriftCache, AveragingConfig, AvgDriftEstimate,
    EvolutionFamilyEstimate, KhasminskiiSchedule, MixingEstimate, MixingStatus, WindowSnapshots,
};
pub use catalog::{builtin_model, Overrides};
pub use error::{Error, Result};
pub use experiments::{
    run_almost_periodic, run_convergence, run_khasminskii, run_mixing, run_moments,
    run_window_decay, DriftSource, ExperimentConfig, InitialData,
};
pub use model::{ModelSpec, NoiseCoeffSpec, OperatorSpec, ReactionSpec};
pub use noise::{JumpEvents, JumpSpec, MarkLaw, PathNoise, SeedManifest, StreamKind, StreamTag};
pub use solver::{
    solve_averaged, solve_coupled, solve_frozen_fast, SolverConfig, TrajectoryRecord,
};
pub use spectral::{
    apply_at_nodes, apply_pointwise, BoundaryKind, Field, NoiseSpectrum, SpectralBasis,
};
pub use validate::{validate_assumptions, AssumptionReport, CheckStatus};

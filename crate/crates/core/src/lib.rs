//! Nonintrusive operator inference for bilinear stochastic differential
//! equations with additive Gaussian noise.
//!
//! A full-order model is only queried through sampled trajectories. Reduced
//! drift and diffusion coefficients are learned from projected empirical
//! moments and compared with the intrusive Galerkin reduction.

pub mod bench;
pub mod bounds;
pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod sim;
pub mod subspace;

pub use error::{Error, Result};
pub use inference::{infer_from_moments, infer_rom, InferenceConfig, InferredRom, TrainingRun};
pub use model::{galerkin_project, BilinearSdeSystem, ControlSignal, TimeGrid};
pub use moments::MomentTrajectory;
pub use sim::{sample_ensemble, SeedPolicy, SnapshotEnsemble};
pub use subspace::ReductionBasis;

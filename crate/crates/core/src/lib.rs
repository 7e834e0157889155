//! Rigid point-cloud registration by planning.
//!
//! A source/target pair is registered by a cross-entropy-method search over
//! 6-D rigid actions (three Euler angles plus a translation). Candidates are
//! scored either by the exact Chamfer distance after applying the action or by
//! a learned latent dynamic model: an encoder maps clouds to latent states, a
//! transformation network predicts the latent state of the moved source, and an
//! evaluation network predicts the Chamfer distance between two latent states.
//!
//! Module map:
//! - [`geometry`]: Euler rotations, rigid actions, Chamfer distance, noise, error metrics.
//! - [`dataio`]: cloud file formats, synthetic shapes, registration pairs, checkpoints.
//! - [`nnet`]: dense MLPs with analytic gradients and Adam.
//! - [`latentmodel`]: the encoder/decoder, transformation and evaluation networks, losses and training.
//! - [`planner`]: cross-entropy search with pluggable reward oracles.
//! - [`baseline`]: point-to-point ICP.
//! - [`harness`]: dataset-level evaluation, CEM sweeps and reports.
//! - [`config`]: the flat namespaced run configuration.

pub mod baseline;
pub mod config;
pub mod dataio;
mod error;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod latentmodel;
pub mod nnet;
pub mod planner;

pub use error::{Error, Result};
pub use exec::Exec;
pub use geometry::{Action, PointCloud, RigidTransform, RotationMatrix};

//! DIRIGENt-style imitation pipeline: a conditional diffusion model that
//! generates robot joint configurations from RGB demonstration images.
//!
//! The crate is organized along the pipeline stages:
//!
//! * [`kinematics`] — kinematic chain descriptions, forward kinematics and
//!   analytic Jacobians, plus a tensor-valued FK used inside the loss.
//! * [`schedule`] — the cosine noise schedule and the x0-prediction
//!   noising/denoising steps.
//! * [`dataset`] — loaders for DIRI/EMIL-style recordings, stream
//!   synchronization, splits, past-frame overlays and a synthetic
//!   stick-figure dataset generator.
//! * [`network`] — the two-contracting-path / one-expanding-path
//!   architecture with multi-resolution condition injection.
//! * [`training`] — the combined joint-space + Cartesian loss and the
//!   training / cross-validation loops.
//! * [`evaluation`] — joint MSE, Cartesian MSE and per-axis end-effector
//!   distance reports.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod kinematics;
pub mod network;
pub mod normalize;
pub mod schedule;
pub mod training;

pub use error::{Error, Result};
pub use kinematics::{
    EndEffectorPose, JointConfiguration, JointKind, JointSpec, KinematicChain, RobotModel,
};
pub use normalize::Normalizer;
pub use schedule::{NoiseSchedule, NoisyTarget};

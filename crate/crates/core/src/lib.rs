//! Model-based periodic event-triggered control (MB-PETC) for nonlinear
//! continuous-time networked control systems.
//!
//! The crate is organised along the control loop:
//!
//! - [`dynamics`]: plant, feedback law and Lyapunov certificate, plus the
//!   inverted-pendulum benchmark.
//! - [`certificates`]: grid estimation of the level-set constants and the
//!   σ-MASP sampling-period bound.
//! - [`prediction`]: sampled-data prediction maps used at the actuator.
//! - [`trigger`]: the sensor-side transmission rule with its mirrored
//!   prediction copy.
//! - [`simulator`]: the closed-loop flow/jump simulation and trace recording.
//! - [`analysis`]: trace verification of the convergence criterion and the
//!   non-monotone decrease conditions.
//! - [`cli`] and [`acceptance`]: experiment runner and reproduction battery.

pub mod acceptance;
pub mod analysis;
pub mod certificates;
pub mod cli;
pub mod dynamics;
pub mod integrate;
pub mod linalg;
pub mod prediction;
pub mod simulator;
pub mod trigger;

pub use analysis::{CheckReport, ReferenceDecay};
pub use certificates::{CertifiedConstants, EstimationOptions};
pub use dynamics::{ControlSystem, Gamma, LevelSet, ModelError, SystemModel};
pub use prediction::{PredictionKind, PredictionModel};
pub use simulator::{SimConfig, SimTrace};
pub use trigger::{Reason, TriggerDecision, TriggerState};

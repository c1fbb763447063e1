//! Training-free guidance lab on an analytic linear-Gaussian video world.
//!
//! A tiny "video" is a grid of frames by object slots, each slot holding
//! `(x, y, presence)`. Conditions are flat embeddings of positions,
//! velocities and presence flags. The world model gives exact conditional
//! and unconditional noise predictions, so guidance rules can be compared
//! against closed-form oracles and swept over seeds.

pub mod embedding;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod sampler;
pub mod schedule;
pub mod stats;
pub mod toymodel;
pub mod verify;

mod rng;

pub use embedding::{ConditionEmbedding, Group, IndexGroups, PerturbationSpec};
pub use error::{Error, Result};
pub use guidance::{Anchor, CadsParams, GuidanceKind, GuidancePolicy, MotionRule};
pub use metrics::MetricsReport;
pub use sampler::{Phase, RunConfig, RunResult};
pub use schedule::{NoiseSchedule, ScheduleParams};
pub use toymodel::{LatentVideo, WorldModel, WorldParams};

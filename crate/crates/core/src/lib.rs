//! Simulation and estimation of total treatment effects under network
//! interference with staggered roll-out experiments.

pub mod error;
pub mod estimate;
pub mod graph;
pub mod identify;
pub mod linalg;
pub mod outcomes;
pub mod rng;
pub mod rollout;
pub mod select;
pub mod study;

pub use error::{Error, Result};
pub use graph::InterferenceGraph;
pub use rollout::{DesignKind, RolloutSchedule, TreatmentPanel};

//! Analysis, design and simulation of non-intrusive random access for
//! secondary users sharing a slotted channel with a primary user.

pub mod analytics;
pub mod error;
pub mod markov;
pub mod model;
pub mod optimizer;
pub mod simulator;

pub use analytics::{collision_profile, core_quantities, full_metrics, success_probability, CollisionProfile};
pub use error::{Error, Result};
pub use model::{
    gamma_from_eta, make_protocol, DesignProblem, Metrics, NetworkConfig, Protocol, Threshold, TrafficModel,
};
pub use optimizer::{DesignSolution, Optimizer, SearchOptions, SweepAxis, SweepResult};
pub use simulator::{EnhancedPolicy, RunSpec, SimStats};

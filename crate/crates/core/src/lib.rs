//! Offloading simulator for a two-tier network of MEC sites and vehicular
//! fogs: a closed-form queueing cost model, an episodic environment around
//! it, and the learning and search agents that pick offloading ratios.

pub mod agents;
pub mod config;
pub mod env;
pub mod nn;
pub mod model;
pub mod queueing;

pub use config::SimConfig;
pub use model::{Topology, TrafficProfile};
pub use queueing::{CostBreakdown, CostWeights, OffloadDecision};

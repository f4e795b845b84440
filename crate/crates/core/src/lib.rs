//! Multi-hop STAR-RIS downlink simulator and multi-agent reinforcement
//! learning trainer for energy-efficient joint BS/surface beamforming.

pub mod channel;
pub mod error;
pub mod experiment;
pub mod marl;
pub mod metrics;
pub mod nn;
pub mod scenario;
pub mod starris;

pub use error::{Error, Result};

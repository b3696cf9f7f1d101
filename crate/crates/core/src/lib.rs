//! Multi-cell massive MIMO simulator for time-multiplexed, superimposed and
//! hybrid pilot schemes.

pub mod config;
pub mod error;
pub mod experiments;
pub mod estimators;
pub mod geometry;
pub mod linalg;
pub mod link;
pub mod metrics;
pub mod partition;
pub mod pilots;
pub mod rng;

pub use error::{Result, SimError};

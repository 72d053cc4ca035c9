//! Federated learning with selective CKKS encryption of update coordinates.

pub mod attack;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod rng;
pub mod sensitivity;

pub use error::{CoreError, ErrorClass, Result};

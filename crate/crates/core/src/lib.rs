//! Roughness estimation for SAR intensity data under the G_I^0 law.
//!
//! Small fully connected networks map the log-moments of a sample to its
//! roughness α. Applied through pooled log-moment tensors, the same network
//! yields per-pixel roughness maps. Classical log-cumulant and maximum
//! likelihood estimators are included for comparison, together with a Monte
//! Carlo harness that measures error, failure rate and speed.

pub mod bench;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod features;
pub mod gi0;
pub mod io;
pub mod network;
pub mod numerics;

pub use error::{Error, Result};

//! Metric-learning losses with analytic gradients, a small hashed text
//! encoder, and a cross-validated few-shot experiment harness.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod numeric;
pub mod proxy_bank;
pub mod trainer;

pub use error::{Error, Result};

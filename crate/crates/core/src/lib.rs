pub mod correlations;
pub mod critical;
pub mod error;
pub mod montecarlo;
pub mod partition;
pub mod pattern;
pub mod renewal;
pub mod series;
pub mod transfer;

pub use error::{Error, Result};

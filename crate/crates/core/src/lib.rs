//! Latent-force inference for ODEs: an extended Kalman filter and RTS smoother
//! over an augmented Gauss–Markov prior, with the ODE entering as a measurement.

pub mod covid_ingest;
pub mod error;
pub mod filter_smoother;
pub mod gauss_markov;
pub mod linalg;
pub mod measurements;
pub mod metrics;
pub mod pipeline;
pub mod problems;
pub mod simulate;

pub use error::{Error, Result};

//! OTDR trace simulation, dataset preparation, GRU-autoencoder anomaly
//! detection, attention-BiGRU fault diagnosis, baselines and evaluation.

pub mod anomaly;
pub mod baselines;
pub mod dataset;
pub mod diagnoser;
pub mod error;
pub mod eval;
pub mod generate;
pub mod trace_sim;
pub mod training;

pub use error::{CoreError, Result};

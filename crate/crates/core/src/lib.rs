//! Federated-averaging simulator with anomaly-score based client banning.
//!
//! The crate provides a from-scratch f64 neural network engine (`nn`), MNIST
//! and synthetic data handling with client partitioning (`data`), the round
//! engine for plain and secure federated averaging (`federation`), and model
//! poisoning transforms (`attack`). Everything is deterministic given the
//! seeds in the configuration; parallel client execution is guaranteed to
//! match sequential execution bit for bit.

pub mod attack;
pub mod data;
pub mod error;
pub mod federation;
pub mod nn;
pub mod numeric;
pub mod rng;
pub mod serialize;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

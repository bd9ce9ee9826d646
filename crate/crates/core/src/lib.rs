//! Gossip-based distributed Kalman filtering over sensor networks.
//!
//! The crate simulates the modified gossip interactive Kalman filter
//! (M-GIKF): sensors swap filter states along random matchings while a
//! Poisson-rate gossip protocol disseminates instantaneous observations.
//! The per-sensor error covariances follow a switched random Riccati
//! equation whose invariant law concentrates on the centralized fixed
//! point as the dissemination rate grows. Modules:
//!
//! * [`model`]: signal/observation model and structural checks
//! * [`riccati`]: subset Riccati operators, strings, weights, rate functions
//! * [`network`]: topology, matchings, hitting-time constants
//! * [`gossip`]: observation dissemination protocol
//! * [`filter`]: GIKF / M-GIKF epoch loops and the particle representation
//! * [`analysis`]: invariant-measure sampling and large-deviation estimates

pub mod analysis;
pub mod error;
pub mod filter;
pub mod gossip;
pub mod linalg;
pub mod model;
pub mod network;
pub mod riccati;
pub mod seed;

pub use error::{Error, Result};

//! Spectrum sharing between a CDMA uplink and an OFDMA uplink.
//!
//! The CDMA side is protected by an interference margin derived from
//! large-system SINR limits of the matched-filter and MMSE receivers; the
//! OFDMA side maximizes its sum rate under that margin and per-user power
//! caps.

pub mod allocator;
pub mod asymptotics;
pub mod cdma;
pub mod channel;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod rng;

pub use error::{Error, Result};

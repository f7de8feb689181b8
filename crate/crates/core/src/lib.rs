//! System-level simulation of C-V2X sidelink subchannel scheduling.
//!
//! Two centralized (mode-3) schedulers, one minimizing the summed received
//! power of assigned subchannels and one maximizing subchannel reuse
//! distance, are compared against the distributed sensing-based
//! semi-persistent scheduler of mode-4 on a wrap-around freeway. Results are
//! packet reception ratio (PRR) versus distance, aggregated over seeds.

pub mod assignment;
pub mod channel;
pub mod config;
pub mod mobility;
pub mod engine;
pub mod metrics;
pub mod schedulers;

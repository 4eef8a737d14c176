//! Deterministic discrete-event simulator of RPL with its secure modes,
//! the attacks that target them, and the metrics used to compare them.

pub mod attacks;
pub mod check;
pub mod messages;
pub mod metrics;
pub mod node;
pub mod params;
pub mod scenarios;
pub mod security;
pub mod simnet;
pub mod stats;
pub mod trace;
pub mod trickle;
pub mod types;

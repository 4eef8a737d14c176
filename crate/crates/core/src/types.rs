//! Identity, rank and time primitives shared by every module.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Node identifier. The sink is always node 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl NodeId {
    pub const SINK: NodeId = NodeId(1);

    pub fn is_sink(self) -> bool {
        self == Self::SINK
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// OF0 step between a parent and its child.
pub const MIN_HOP_RANK_INCREASE: u16 = 256;

/// DODAG rank. Smaller is closer to the root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rank(pub u16);

impl Rank {
    pub const ROOT: Rank = Rank(MIN_HOP_RANK_INCREASE);
    pub const INFINITE: Rank = Rank(0xFFFF);

    pub fn is_infinite(self) -> bool {
        self == Self::INFINITE
    }

    /// Hop count implied by the rank (root = 0).
    pub fn hops(self) -> u16 {
        (self.0 / MIN_HOP_RANK_INCREASE).saturating_sub(1)
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// OF0 rank of a child whose preferred parent advertises `parent`.
///
/// Saturates at [`Rank::INFINITE`].
pub fn compute_rank(parent: Rank) -> Rank {
    if parent.is_infinite() {
        return Rank::INFINITE;
    }
    match parent.0.checked_add(MIN_HOP_RANK_INCREASE) {
        Some(r) if r < Rank::INFINITE.0 => Rank(r),
        _ => Rank::INFINITE,
    }
}

/// Simulation time in microseconds since the start of a round.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1e6).round() as u64)
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}s", self.as_secs_f64())
    }
}

//! Simulation trace: the single record every metric and invariant is derived from.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::attacks::{AdversaryType, AttackBehavior};
use crate::messages::ControlKind;
use crate::security::SecurityMode;
use crate::types::{NodeId, Rank, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FrameKind {
    Dio,
    Dis,
    Dao,
    DaoAck,
    Cc,
    Data,
}

impl From<ControlKind> for FrameKind {
    fn from(k: ControlKind) -> Self {
        match k {
            ControlKind::Dio => FrameKind::Dio,
            ControlKind::Dis => FrameKind::Dis,
            ControlKind::Dao => FrameKind::Dao,
            ControlKind::DaoAck => FrameKind::DaoAck,
            ControlKind::Cc => FrameKind::Cc,
        }
    }
}

impl FrameKind {
    pub fn is_control(self) -> bool {
        self != FrameKind::Data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropCause {
    /// No preferred parent.
    NoRoute,
    /// Dropped by an adversary filter.
    Attack,
    /// Next hop already on the packet's path.
    Loop,
    /// Forwarder rank not below the previous hop's.
    RankError,
    /// Unicast to a node out of radio range.
    OutOfRange,
    /// Random link loss.
    LinkLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum TraceEvent {
    Meta {
        name: String,
        seed: u64,
        mode: SecurityMode,
        sink: NodeId,
        adversary: Option<NodeId>,
        attack: AttackBehavior,
        adversary_type: AdversaryType,
        duration_us: u64,
        targeted: Vec<NodeId>,
    },
    /// A radio transmission. `node` is the transmitter, `src` the network source.
    Tx {
        id: u64,
        t: SimTime,
        node: NodeId,
        src: NodeId,
        dst: Option<NodeId>,
        kind: FrameKind,
        bytes: u32,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        counter: Option<u32>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        frame: Option<String>,
        #[serde(skip_serializing_if = "std::ops::Not::not", default)]
        replay: bool,
    },
    Rx {
        t: SimTime,
        node: NodeId,
        tx: u64,
        kind: FrameKind,
        bytes: u32,
    },
    DataSent {
        t: SimTime,
        src: NodeId,
        seq: u32,
    },
    DataDelivered {
        t: SimTime,
        src: NodeId,
        seq: u32,
        created_at: SimTime,
        path: Vec<(NodeId, Rank)>,
    },
    DataDropped {
        t: SimTime,
        node: NodeId,
        src: NodeId,
        seq: u32,
        cause: DropCause,
    },
    ParentChanged {
        t: SimTime,
        node: NodeId,
        old: Option<NodeId>,
        new: Option<NodeId>,
        rank: Rank,
    },
    LocalRepair {
        t: SimTime,
        node: NodeId,
    },
    DaoExhausted {
        t: SimTime,
        node: NodeId,
        parent: NodeId,
    },
    SecurityDrop {
        t: SimTime,
        node: NodeId,
        src: NodeId,
        reason: String,
    },
    CcIssued {
        t: SimTime,
        node: NodeId,
        peer: NodeId,
    },
    CcVerified {
        t: SimTime,
        node: NodeId,
        peer: NodeId,
    },
    CcExpired {
        t: SimTime,
        node: NodeId,
        peer: NodeId,
    },
    AttackLaunched {
        t: SimTime,
        node: NodeId,
    },
    Snapshot {
        t: SimTime,
        parents: Vec<(NodeId, Option<NodeId>)>,
    },
    Energy {
        node: NodeId,
        tx_mj: f64,
        rx_mj: f64,
        cpu_mj: f64,
        idle_mj: f64,
    },
    RoundEnd {
        t: SimTime,
        in_flight: Vec<(NodeId, u32)>,
    },
}

pub type Trace = Vec<TraceEvent>;

pub fn write_jsonl<W: Write>(trace: &[TraceEvent], mut w: W) -> std::io::Result<()> {
    for ev in trace {
        serde_json::to_writer(&mut w, ev)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum TraceParseError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceParseError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|source| TraceParseError::Json {
            line: i + 1,
            source,
        })?;
        out.push(ev);
    }
    Ok(out)
}

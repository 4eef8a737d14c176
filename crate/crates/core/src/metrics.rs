//! Trace folds producing the per-round metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::trace::{DropCause, FrameKind, TraceEvent};
use crate::types::{NodeId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no data packets were sent")]
    ZeroSent,
    #[error("no data packets were delivered")]
    NoDeliveries,
}

pub type ParentMap = BTreeMap<NodeId, Option<NodeId>>;

pub fn data_sent(trace: &[TraceEvent]) -> u64 {
    trace
        .iter()
        .filter(|e| matches!(e, TraceEvent::DataSent { .. }))
        .count() as u64
}

pub fn data_delivered(trace: &[TraceEvent]) -> u64 {
    trace
        .iter()
        .filter(|e| matches!(e, TraceEvent::DataDelivered { .. }))
        .count() as u64
}

/// Delivered over sent. Packets still in flight at the end count as lost.
pub fn compute_pdr(trace: &[TraceEvent]) -> Result<f64, MetricsError> {
    let sent = data_sent(trace);
    if sent == 0 {
        return Err(MetricsError::ZeroSent);
    }
    Ok(data_delivered(trace) as f64 / sent as f64)
}

/// Mean end-to-end latency in ms over delivered packets.
pub fn compute_e2e(trace: &[TraceEvent]) -> Result<f64, MetricsError> {
    let (sum, n) = trace.iter().fold((0.0, 0u64), |(s, n), e| match e {
        TraceEvent::DataDelivered { t, created_at, .. } => {
            (s + (*t - *created_at).as_ms_f64(), n + 1)
        }
        _ => (s, n),
    });
    if n == 0 {
        return Err(MetricsError::NoDeliveries);
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlCounts {
    pub sent: BTreeMap<FrameKind, u64>,
    pub received: BTreeMap<FrameKind, u64>,
}

impl ControlCounts {
    pub fn total_sent(&self) -> u64 {
        self.sent.values().sum()
    }
    pub fn total_received(&self) -> u64 {
        self.received.values().sum()
    }
    pub fn total(&self) -> u64 {
        self.total_sent() + self.total_received()
    }
}

/// Control transmissions counted once at the sender, receptions once per receiver.
pub fn count_control(trace: &[TraceEvent]) -> ControlCounts {
    let mut c = ControlCounts::default();
    for e in trace {
        match e {
            TraceEvent::Tx { kind, .. } if kind.is_control() => {
                *c.sent.entry(*kind).or_default() += 1
            }
            TraceEvent::Rx { kind, .. } if kind.is_control() => {
                *c.received.entry(*kind).or_default() += 1
            }
            _ => {}
        }
    }
    c
}

pub fn energy_total(trace: &[TraceEvent]) -> f64 {
    trace
        .iter()
        .map(|e| match e {
            TraceEvent::Energy {
                tx_mj,
                rx_mj,
                cpu_mj,
                idle_mj,
                ..
            } => tx_mj + rx_mj + cpu_mj + idle_mj,
            _ => 0.0,
        })
        .sum()
}

/// Network energy (mJ) divided by packets received at the sink.
pub fn power_per_received_packet(trace: &[TraceEvent]) -> Result<f64, MetricsError> {
    let n = data_delivered(trace);
    if n == 0 {
        return Err(MetricsError::NoDeliveries);
    }
    Ok(energy_total(trace) / n as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: BTreeMap<String, u64>,
    pub in_flight: u64,
}

impl Flow {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }
    pub fn balanced(&self) -> bool {
        self.sent == self.delivered + self.dropped_total() + self.in_flight
    }
}

fn cause_name(c: DropCause) -> String {
    serde_json::to_value(c)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn flow(trace: &[TraceEvent]) -> Flow {
    let mut f = Flow::default();
    for e in trace {
        match e {
            TraceEvent::DataSent { .. } => f.sent += 1,
            TraceEvent::DataDelivered { .. } => f.delivered += 1,
            TraceEvent::DataDropped { cause, .. } => {
                *f.dropped.entry(cause_name(*cause)).or_default() += 1
            }
            TraceEvent::RoundEnd { in_flight, .. } => f.in_flight += in_flight.len() as u64,
            _ => {}
        }
    }
    f
}

pub fn snapshots(trace: &[TraceEvent]) -> Vec<(SimTime, ParentMap)> {
    trace
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Snapshot { t, parents } => Some((*t, parents.iter().copied().collect())),
            _ => None,
        })
        .collect()
}

/// Parent map from the latest snapshot taken at or before `t`.
pub fn dodag_snapshot(trace: &[TraceEvent], t: SimTime) -> Option<ParentMap> {
    snapshots(trace)
        .into_iter()
        .take_while(|(at, _)| *at <= t)
        .last()
        .map(|(_, m)| m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalDodag {
    pub parents: ParentMap,
    /// Fraction of sampled instants showing exactly this parent map.
    pub share: f64,
    pub samples: usize,
}

/// Most frequent parent map among snapshots in `[from, to]`. Ties go to the
/// earliest-seen map.
pub fn modal_dodag(trace: &[TraceEvent], from: SimTime, to: SimTime) -> Option<ModalDodag> {
    let window: Vec<ParentMap> = snapshots(trace)
        .into_iter()
        .filter(|(t, _)| *t >= from && *t <= to)
        .map(|(_, m)| m)
        .collect();
    modal_of(&window)
}

pub fn modal_of(maps: &[ParentMap]) -> Option<ModalDodag> {
    let mut counts: Vec<(&ParentMap, usize)> = Vec::new();
    for m in maps {
        match counts.iter_mut().find(|(k, _)| *k == m) {
            Some((_, c)) => *c += 1,
            None => counts.push((m, 1)),
        }
    }
    let mut best: Option<(&ParentMap, usize)> = None;
    for (m, c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((m, c));
        }
    }
    best.map(|(m, c)| ModalDodag {
        parents: m.clone(),
        share: c as f64 / maps.len() as f64,
        samples: maps.len(),
    })
}

pub fn children_of(parents: &ParentMap, node: NodeId) -> Vec<NodeId> {
    parents
        .iter()
        .filter(|(_, p)| **p == Some(node))
        .map(|(c, _)| *c)
        .collect()
}

/// Graphviz rendering: one edge per child toward its parent.
pub fn to_dot(name: &str, parents: &ParentMap, adversary: Option<NodeId>) -> String {
    let mut s = format!("digraph \"{name}\" {{\n  rankdir=BT;\n  1 [shape=doublecircle];\n");
    if let Some(a) = adversary {
        s.push_str(&format!("  {a} [style=filled, fillcolor=red];\n"));
    }
    for (child, parent) in parents {
        match parent {
            Some(p) => s.push_str(&format!("  {child} -> {p};\n")),
            None => s.push_str(&format!("  {child} [style=dashed];\n")),
        }
    }
    s.push_str("}\n");
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundInfo {
    pub adversary: Option<NodeId>,
    pub targeted: Vec<NodeId>,
    pub duration: SimTime,
    pub launched_at: Option<SimTime>,
}

pub fn round_info(trace: &[TraceEvent]) -> RoundInfo {
    let mut info = RoundInfo {
        adversary: None,
        targeted: Vec::new(),
        duration: SimTime::ZERO,
        launched_at: None,
    };
    for e in trace {
        match e {
            TraceEvent::Meta {
                adversary,
                targeted,
                duration_us,
                ..
            } => {
                info.adversary = *adversary;
                info.targeted = targeted.clone();
                info.duration = SimTime(*duration_us);
            }
            TraceEvent::AttackLaunched { t, .. } => info.launched_at = Some(*t),
            _ => {}
        }
    }
    info
}

/// Delay from attack launch until a targeted node first moves its preferred
/// parent away from the adversary.
pub fn first_reparent_after_launch(trace: &[TraceEvent]) -> Option<SimTime> {
    let info = round_info(trace);
    let (adv, launch) = (info.adversary?, info.launched_at?);
    trace.iter().find_map(|e| match e {
        TraceEvent::ParentChanged {
            t, node, old, new, ..
        } if *t >= launch
            && info.targeted.contains(node)
            && *old == Some(adv)
            && *new != Some(adv) =>
        {
            Some(*t - launch)
        }
        _ => None,
    })
}

/// Whether the modal DODAG of the last `window` gives the adversary no children.
pub fn adversary_childless(trace: &[TraceEvent], window: SimTime) -> Option<bool> {
    let info = round_info(trace);
    let adv = info.adversary?;
    let modal = modal_dodag(trace, info.duration.saturating_sub(window), info.duration)?;
    Some(children_of(&modal.parents, adv).is_empty())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub pdr: f64,
    pub e2e_latency_ms: f64,
    pub data_sent: u64,
    pub data_delivered: u64,
    pub ctrl_sent: u64,
    pub ctrl_received: u64,
    pub ctrl_total: u64,
    pub cc_sent: u64,
    pub energy_total_mj: f64,
    pub power_per_received_packet: f64,
    pub reparent_after_launch_s: Option<f64>,
    pub adversary_childless_final: Option<bool>,
}

impl RoundMetrics {
    /// Named scalar values in a fixed order, for tabular output.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("pdr", self.pdr),
            ("e2e_latency_ms", self.e2e_latency_ms),
            ("ctrl_sent", self.ctrl_sent as f64),
            ("ctrl_received", self.ctrl_received as f64),
            ("ctrl_total", self.ctrl_total as f64),
            ("cc_sent", self.cc_sent as f64),
            ("energy_total_mj", self.energy_total_mj),
            ("power_per_received_packet", self.power_per_received_packet),
        ];
        if let Some(r) = self.reparent_after_launch_s {
            v.push(("reparent_after_launch_s", r));
        }
        if let Some(c) = self.adversary_childless_final {
            v.push(("adversary_childless_final", if c { 1.0 } else { 0.0 }));
        }
        v
    }
}

pub const FINAL_WINDOW: SimTime = SimTime(300_000_000);

pub fn round_metrics(trace: &[TraceEvent]) -> Result<RoundMetrics, MetricsError> {
    let ctrl = count_control(trace);
    Ok(RoundMetrics {
        pdr: compute_pdr(trace)?,
        e2e_latency_ms: compute_e2e(trace)?,
        data_sent: data_sent(trace),
        data_delivered: data_delivered(trace),
        ctrl_sent: ctrl.total_sent(),
        ctrl_received: ctrl.total_received(),
        ctrl_total: ctrl.total(),
        cc_sent: ctrl.sent.get(&FrameKind::Cc).copied().unwrap_or(0),
        energy_total_mj: energy_total(trace),
        power_per_received_packet: power_per_received_packet(trace)?,
        reparent_after_launch_s: first_reparent_after_launch(trace).map(|d| d.as_secs_f64()),
        adversary_childless_final: adversary_childless(trace, FINAL_WINDOW),
    })
}

//! Whole-trace invariant checks.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::attacks::AdversaryType;
use crate::trace::TraceEvent;
use crate::types::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invariant {
    LoopFreedom,
    RankMonotonicity,
    CounterMonotonicity,
    FlowConservation,
    ExternalIsolation,
    ReplayIdentity,
}

impl Invariant {
    pub const ALL: [Invariant; 6] = [
        Invariant::LoopFreedom,
        Invariant::RankMonotonicity,
        Invariant::CounterMonotonicity,
        Invariant::FlowConservation,
        Invariant::ExternalIsolation,
        Invariant::ReplayIdentity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Invariant::LoopFreedom => "loop-freedom",
            Invariant::RankMonotonicity => "rank-monotonicity",
            Invariant::CounterMonotonicity => "counter-monotonicity",
            Invariant::FlowConservation => "flow-conservation",
            Invariant::ExternalIsolation => "external-isolation",
            Invariant::ReplayIdentity => "replay-identity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Index of the offending event in the checked trace.
    pub index: usize,
    pub invariant: Invariant,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "event {}: {}: {}",
            self.index,
            self.invariant.name(),
            self.message
        )
    }
}

/// Checks every invariant. A file holding several rounds is split at each
/// `meta` record; indices stay global.
pub fn check_trace(trace: &[TraceEvent]) -> Vec<Violation> {
    let mut starts: Vec<usize> = trace
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e, TraceEvent::Meta { .. }))
        .map(|(i, _)| i)
        .collect();
    if starts.first() != Some(&0) {
        starts.insert(0, 0);
    }
    let mut out = Vec::new();
    for (k, &s) in starts.iter().enumerate() {
        let e = starts.get(k + 1).copied().unwrap_or(trace.len());
        check_round(&trace[s..e], s, &mut out);
    }
    out
}

fn check_round(round: &[TraceEvent], offset: usize, out: &mut Vec<Violation>) {
    let mut push = |i: usize, invariant: Invariant, message: String| {
        out.push(Violation {
            index: offset + i,
            invariant,
            message,
        })
    };

    let mut external: Option<NodeId> = None;
    let mut last_counter: BTreeMap<NodeId, u32> = BTreeMap::new();
    let mut frames: BTreeMap<u64, &str> = BTreeMap::new();
    let mut heard: BTreeMap<NodeId, BTreeSet<&str>> = BTreeMap::new();
    let mut outstanding: BTreeMap<(NodeId, u32), usize> = BTreeMap::new();
    let mut resolved: BTreeSet<(NodeId, u32)> = BTreeSet::new();
    let mut saw_end = false;

    for (i, ev) in round.iter().enumerate() {
        match ev {
            TraceEvent::Meta {
                mode,
                adversary,
                adversary_type,
                ..
            } => {
                if *adversary_type == AdversaryType::External && mode.is_secure() {
                    external = *adversary;
                }
            }
            TraceEvent::Tx {
                id,
                node,
                src,
                counter,
                frame,
                replay,
                ..
            } => {
                if let Some(f) = frame {
                    frames.insert(*id, f.as_str());
                }
                if *replay {
                    let known = frame
                        .as_deref()
                        .is_some_and(|f| heard.get(node).is_some_and(|h| h.contains(f)));
                    if !known {
                        push(
                            i,
                            Invariant::ReplayIdentity,
                            format!("node {node} replayed a frame it never received"),
                        );
                    }
                } else if let (Some(c), true) = (counter, node == src) {
                    if let Some(prev) = last_counter.insert(*node, *c) {
                        if *c <= prev {
                            push(
                                i,
                                Invariant::CounterMonotonicity,
                                format!("node {node} sent counter {c} after {prev}"),
                            );
                        }
                    }
                }
            }
            TraceEvent::Rx { node, tx, .. } => {
                if let Some(f) = frames.get(tx) {
                    heard.entry(*node).or_default().insert(f);
                }
            }
            TraceEvent::DataSent { src, seq, .. } => {
                if outstanding.insert((*src, *seq), i).is_some() {
                    push(
                        i,
                        Invariant::FlowConservation,
                        format!("packet {src}:{seq} sent twice"),
                    );
                }
            }
            TraceEvent::DataDelivered { src, seq, path, .. } => {
                let mut seen = BTreeSet::new();
                if let Some(dup) = path.iter().find(|(n, _)| !seen.insert(*n)) {
                    push(
                        i,
                        Invariant::LoopFreedom,
                        format!("packet {src}:{seq} visited node {} twice", dup.0),
                    );
                }
                if path.windows(2).any(|w| w[1].1 >= w[0].1) {
                    push(
                        i,
                        Invariant::RankMonotonicity,
                        format!("packet {src}:{seq} path ranks do not strictly decrease"),
                    );
                }
                resolve(&mut outstanding, &mut resolved, (*src, *seq), i, &mut push);
            }
            TraceEvent::DataDropped { src, seq, .. } => {
                resolve(&mut outstanding, &mut resolved, (*src, *seq), i, &mut push);
            }
            TraceEvent::RoundEnd { in_flight, .. } => {
                saw_end = true;
                for key in in_flight {
                    resolve(&mut outstanding, &mut resolved, *key, i, &mut push);
                }
                for ((src, seq), at) in std::mem::take(&mut outstanding) {
                    push(
                        at,
                        Invariant::FlowConservation,
                        format!("packet {src}:{seq} neither delivered, dropped nor in flight"),
                    );
                }
            }
            TraceEvent::ParentChanged { node, new, .. } => {
                if external.is_some() && *new == external && Some(*node) != external {
                    push(
                        i,
                        Invariant::ExternalIsolation,
                        format!("node {node} chose the external adversary as parent"),
                    );
                }
            }
            TraceEvent::Snapshot { parents, .. } => {
                if let Some(adv) = external {
                    for (n, p) in parents {
                        if *p == Some(adv) && *n != adv {
                            push(
                                i,
                                Invariant::ExternalIsolation,
                                format!("node {n} is a child of the external adversary"),
                            );
                        }
                    }
                }
            }
            _ => {}
        }
    }
    if !saw_end && !round.is_empty() {
        push(
            round.len() - 1,
            Invariant::FlowConservation,
            "round has no end record".into(),
        );
    }
}

fn resolve<F: FnMut(usize, Invariant, String)>(
    outstanding: &mut BTreeMap<(NodeId, u32), usize>,
    resolved: &mut BTreeSet<(NodeId, u32)>,
    key: (NodeId, u32),
    i: usize,
    push: &mut F,
) {
    if outstanding.remove(&key).is_none() {
        let what = if resolved.contains(&key) {
            "resolved twice"
        } else {
            "never sent"
        };
        push(
            i,
            Invariant::FlowConservation,
            format!("packet {}:{} {what}", key.0, key.1),
        );
    }
    resolved.insert(key);
}

/// Counts of violations per invariant, including zeros.
pub fn tally(violations: &[Violation]) -> BTreeMap<Invariant, usize> {
    let mut m: BTreeMap<Invariant, usize> = Invariant::ALL.iter().map(|i| (*i, 0)).collect();
    for v in violations {
        *m.entry(v.invariant).or_default() += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::FrameKind;
    use crate::types::{Rank, SimTime};

    fn tx(id: u64, node: u16, counter: u32) -> TraceEvent {
        TraceEvent::Tx {
            id,
            t: SimTime(id),
            node: NodeId(node),
            src: NodeId(node),
            dst: None,
            kind: FrameKind::Dio,
            bytes: 92,
            counter: Some(counter),
            frame: Some(format!("{id:02x}")),
            replay: false,
        }
    }

    fn end() -> TraceEvent {
        TraceEvent::RoundEnd {
            t: SimTime(100),
            in_flight: vec![],
        }
    }

    #[test]
    fn corrupted_counter_flagged_at_index() {
        let t = vec![tx(1, 3, 1), tx(2, 3, 3), tx(3, 3, 2), end()];
        let v = check_trace(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, 2);
        assert_eq!(v[0].invariant, Invariant::CounterMonotonicity);
    }

    #[test]
    fn flow_and_loops() {
        let t = vec![
            TraceEvent::DataSent {
                t: SimTime(0),
                src: NodeId(4),
                seq: 1,
            },
            TraceEvent::DataSent {
                t: SimTime(0),
                src: NodeId(4),
                seq: 2,
            },
            TraceEvent::DataDelivered {
                t: SimTime(5),
                src: NodeId(4),
                seq: 1,
                created_at: SimTime(0),
                path: vec![
                    (NodeId(4), Rank(768)),
                    (NodeId(3), Rank(768)),
                    (NodeId(1), Rank(256)),
                ],
            },
            end(),
        ];
        let v = check_trace(&t);
        let kinds: Vec<Invariant> = v.iter().map(|v| v.invariant).collect();
        assert_eq!(
            kinds,
            vec![Invariant::RankMonotonicity, Invariant::FlowConservation]
        );
        assert_eq!(v[1].index, 1);
    }

    #[test]
    fn replay_must_match_heard_frame() {
        let mut replay = tx(2, 14, 0);
        if let TraceEvent::Tx {
            replay: r,
            frame,
            src,
            ..
        } = &mut replay
        {
            *r = true;
            *frame = Some("01".into());
            *src = NodeId(7);
        }
        let heard = TraceEvent::Rx {
            t: SimTime(1),
            node: NodeId(14),
            tx: 1,
            kind: FrameKind::Dio,
            bytes: 92,
        };
        assert!(check_trace(&[tx(1, 7, 1), heard, replay.clone(), end()]).is_empty());
        let v = check_trace(&[tx(1, 7, 1), replay, end()]);
        assert_eq!(v[0].invariant, Invariant::ReplayIdentity);
    }
}

//! Whole-network behavior on the canonical deployment.

use rplsim::attacks::AttackBehavior;
use rplsim::check::{check_trace, Invariant};
use rplsim::metrics::{count_control, flow, round_info};
use rplsim::scenarios::{round_seed, Experiment, ScenarioConfig, CANONICAL_ADVERSARY};
use rplsim::simnet::run_round;
use rplsim::trace::{DropCause, FrameKind, Trace, TraceEvent};
use rplsim::types::{NodeId, SimTime};

fn round(e: Experiment, a: AttackBehavior, r: u32) -> Trace {
    let cfg = ScenarioConfig::canonical(e, a);
    run_round(cfg.sim, round_seed(cfg.seed, r)).unwrap()
}

fn launch(trace: &Trace) -> SimTime {
    round_info(trace).launched_at.expect("attack launched")
}

fn time_of(e: &TraceEvent) -> Option<SimTime> {
    use TraceEvent::*;
    match e {
        Tx { t, .. }
        | Rx { t, .. }
        | DataSent { t, .. }
        | DataDelivered { t, .. }
        | DataDropped { t, .. }
        | ParentChanged { t, .. }
        | LocalRepair { t, .. }
        | DaoExhausted { t, .. }
        | SecurityDrop { t, .. }
        | CcIssued { t, .. }
        | CcVerified { t, .. }
        | CcExpired { t, .. }
        | AttackLaunched { t, .. }
        | Snapshot { t, .. }
        | RoundEnd { t, .. } => Some(*t),
        Meta { .. } | Energy { .. } => None,
    }
}

fn before(trace: &Trace, end: SimTime) -> Vec<&TraceEvent> {
    trace
        .iter()
        .filter(|e| time_of(e).is_some_and(|t| t < end))
        .collect()
}

#[test]
fn adversary_is_indistinguishable_before_launch() {
    let baseline = round(Experiment::PsmI, AttackBehavior::None, 0);
    for attack in [
        AttackBehavior::Blackhole,
        AttackBehavior::SelectiveForward,
        AttackBehavior::NeighborReplay,
    ] {
        let attacked = round(Experiment::PsmI, attack, 0);
        let t = launch(&attacked);
        assert!(t >= SimTime::from_secs(120));
        assert_eq!(before(&baseline, t), before(&attacked, t), "{attack:?}");
    }
}

#[test]
fn blackhole_goes_silent_and_drops_everything() {
    let t = round(Experiment::UmI, AttackBehavior::Blackhole, 1);
    let at = launch(&t);
    let adv_tx_after = t.iter().any(
        |e| matches!(e, TraceEvent::Tx { node, t, .. } if *node == CANONICAL_ADVERSARY && *t >= at),
    );
    assert!(!adv_tx_after);
    let attack_drops = t
        .iter()
        .filter(|e| {
            matches!(
                e,
                TraceEvent::DataDropped {
                    cause: DropCause::Attack,
                    ..
                }
            )
        })
        .count();
    assert!(attack_drops > 0);
}

#[test]
fn selective_forward_passes_control_only() {
    let t = round(Experiment::UmI, AttackBehavior::SelectiveForward, 1);
    let at = launch(&t);
    let adv_after: Vec<FrameKind> = t
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Tx { node, t, kind, .. } if *node == CANONICAL_ADVERSARY && *t >= at => {
                Some(*kind)
            }
            _ => None,
        })
        .collect();
    assert!(!adv_after.contains(&FrameKind::Data));
    assert!(adv_after.iter().any(|k| k.is_control()));
    // forwarded DAOs from the sub-DODAG still reach the sink
    assert!(t.iter().any(|e| matches!(
        e,
        TraceEvent::Tx { node, src, kind: FrameKind::Dao, t, .. }
            if *node == CANONICAL_ADVERSARY && *src == CANONICAL_ADVERSARY && *t >= at
    )));
}

fn ghost_adoptions(t: &Trace) -> usize {
    let topo = ScenarioConfig::canonical(Experiment::PsmI, AttackBehavior::None)
        .sim
        .topology;
    t.iter()
        .filter(|e| match e {
            TraceEvent::ParentChanged {
                node, new: Some(p), ..
            } => !topo.in_range(*node, *p),
            _ => false,
        })
        .count()
}

#[test]
fn replay_protection_blocks_ghost_parents() {
    let mut psm = 0;
    for r in 0..3 {
        let t = round(Experiment::PsmI, AttackBehavior::NeighborReplay, r);
        assert!(t
            .iter()
            .any(|e| matches!(e, TraceEvent::Tx { replay: true, .. })));
        psm += ghost_adoptions(&t);

        let t = round(Experiment::PsmrpI, AttackBehavior::NeighborReplay, r);
        assert_eq!(ghost_adoptions(&t), 0, "round {r}");
        assert!(t.iter().any(|e| matches!(e, TraceEvent::CcExpired { .. })));
    }
    assert!(psm > 0);
}

#[test]
fn external_adversary_never_becomes_a_parent() {
    for attack in [AttackBehavior::Blackhole, AttackBehavior::NeighborReplay] {
        let t = round(Experiment::PsmE, attack, 2);
        assert!(!t.iter().any(|e| matches!(
            e,
            TraceEvent::ParentChanged { node, new: Some(p), .. }
                if *p == CANONICAL_ADVERSARY && *node != CANONICAL_ADVERSARY
        )));
        assert!(check_trace(&t)
            .iter()
            .all(|v| v.invariant != Invariant::ExternalIsolation));
        // its plaintext control is dropped at the security layer
        assert!(t.iter().any(|e| matches!(
            e,
            TraceEvent::SecurityDrop { src, .. } if *src == CANONICAL_ADVERSARY
        )));
    }
}

#[test]
fn rounds_are_reproducible_and_seed_sensitive() {
    let a = round(Experiment::PsmrpI, AttackBehavior::NeighborReplay, 4);
    let b = round(Experiment::PsmrpI, AttackBehavior::NeighborReplay, 4);
    assert_eq!(a, b);
    let c = round(Experiment::PsmrpI, AttackBehavior::NeighborReplay, 5);
    assert_ne!(a, c);
}

#[test]
fn baseline_round_is_clean() {
    let t = round(Experiment::UmI, AttackBehavior::None, 0);
    assert!(check_trace(&t).is_empty());
    assert!(flow(&t).balanced());
    let c = count_control(&t);
    assert!(c.total_received() > c.total_sent());
    // every sensor has joined by the end of warm-up
    let joined: std::collections::BTreeSet<NodeId> = t
        .iter()
        .filter_map(|e| match e {
            TraceEvent::ParentChanged {
                t,
                node,
                new: Some(_),
                ..
            } if *t <= SimTime::from_secs(120) => Some(*node),
            _ => None,
        })
        .collect();
    assert_eq!(joined.len(), 27);
}

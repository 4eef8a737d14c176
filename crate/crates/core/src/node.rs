//! Per-node RPL state machine.
//!
//! A [`Node`] reacts to packets and timer expirations by pushing [`Output`]s
//! (transmissions, timers, trace records) into a [`NodeCtx`]; it never touches
//! the radio or the clock itself. The simulator owns delivery and time.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacks::{Adversary, Traffic, Verdict};
use crate::messages::{
    BaseFrame, ControlKind, ControlMessage, Dao, DaoAck, DataPacket, Dio, Dis, Frame,
};
use crate::params::ProtocolParams;
use crate::security::{CcOutcome, SecurityContext, SecurityError, SecurityMode, SuspectReason};
use crate::trace::{DropCause, TraceEvent};
use crate::trickle::{TrickleSchedule, TrickleTimer};
use crate::types::{compute_rank, NodeId, Rank, SimTime, MIN_HOP_RANK_INCREASE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Sink,
    Sensor,
    Adversary,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    Control(Vec<u8>),
    Data(DataPacket),
}

/// Network-layer packet. `src` is the claimed origin, which a replaying
/// adversary leaves untouched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub src: NodeId,
    pub dst: Option<NodeId>,
    pub body: Body,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Timer {
    TrickleFire { gen: u64 },
    TrickleEnd { gen: u64 },
    DaoRefresh,
    DaoAckTimeout { seq: u8 },
    DeadParentCheck,
    CcTimeout { peer: NodeId, nonce: u32 },
    DisRetry { gen: u64 },
    AppSend,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    Transmit {
        packet: Packet,
        kind: Option<ControlKind>,
        secure: bool,
        counter: Option<u32>,
        replay: bool,
    },
    Timer {
        after: SimTime,
        timer: Timer,
    },
    Trace(TraceEvent),
    /// First DAO-ACK received: the node is fully joined.
    Joined,
}

pub struct NodeCtx<'a> {
    pub now: SimTime,
    pub out: &'a mut Vec<Output>,
}

impl NodeCtx<'_> {
    fn timer(&mut self, after: SimTime, timer: Timer) {
        self.out.push(Output::Timer { after, timer });
    }
    fn trace(&mut self, ev: TraceEvent) {
        self.out.push(Output::Trace(ev));
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParentEntry {
    pub advertised_rank: Rank,
    pub last_heard: SimTime,
    /// Set when a DAO transaction through this parent went unanswered.
    pub suspect: bool,
}

#[derive(Clone, Debug)]
struct DaoTransaction {
    seq: u8,
    parent: NodeId,
    sends: u32,
}

pub struct Node {
    pub id: NodeId,
    pub role: Role,
    params: Arc<ProtocolParams>,
    pub rank: Rank,
    pub parents: BTreeMap<NodeId, ParentEntry>,
    pub preferred: Option<NodeId>,
    pub trickle: TrickleTimer,
    pub version: u8,
    /// Storing-mode table: destination -> next hop.
    pub routes: BTreeMap<NodeId, NodeId>,
    pub security: SecurityContext,
    pub adversary: Option<Adversary>,
    rng: ChaCha8Rng,
    dao_seq: u8,
    dao_pending: Option<DaoTransaction>,
    dao_failures: u32,
    dis_gen: u64,
    data_seq: u32,
    joined: bool,
    refresh_armed: bool,
}

fn stream_seed(seed: u64, id: NodeId, stream: u64) -> u64 {
    // splitmix-style mixing so neighbouring ids get unrelated streams
    let mut z = seed
        .wrapping_add((id.0 as u64) << 32)
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Node {
    pub fn new(
        id: NodeId,
        role: Role,
        params: Arc<ProtocolParams>,
        security: SecurityContext,
        seed: u64,
    ) -> Self {
        let trickle = TrickleTimer::new(
            params.trickle_imin(),
            params.trickle_doublings,
            params.trickle_k,
        );
        Self {
            id,
            role,
            rank: if role == Role::Sink {
                Rank::ROOT
            } else {
                Rank::INFINITE
            },
            params,
            parents: BTreeMap::new(),
            preferred: None,
            trickle,
            version: 0,
            routes: BTreeMap::new(),
            security,
            adversary: None,
            rng: ChaCha8Rng::seed_from_u64(stream_seed(seed, id, 1)),
            dao_seq: 0,
            dao_pending: None,
            dao_failures: 0,
            dis_gen: 0,
            data_seq: 0,
            joined: false,
            refresh_armed: false,
        }
    }

    /// Nonce-stream seed for this node's security context.
    pub fn nonce_seed(seed: u64, id: NodeId) -> u64 {
        stream_seed(seed, id, 2)
    }

    pub fn is_sink(&self) -> bool {
        self.role == Role::Sink
    }

    pub fn is_attached(&self) -> bool {
        !self.rank.is_infinite()
    }

    fn sends_data(&self) -> bool {
        self.role == Role::Sensor
    }

    fn silent(&self) -> bool {
        self.adversary.as_ref().is_some_and(|a| a.silent())
    }

    fn requires_verification(&self) -> bool {
        self.security.mode == SecurityMode::Psmrp
    }

    fn is_verified(&self, peer: NodeId) -> bool {
        !self.requires_verification() || self.security.peer(peer).is_some_and(|p| p.verified)
    }

    pub fn start(&mut self, ctx: &mut NodeCtx) {
        if self.is_sink() {
            let s = self.trickle.start(&mut self.rng);
            self.schedule_trickle(ctx, s);
        } else {
            let jitter = SimTime(
                self.rng
                    .random_range(0..self.params.dis_interval().0.max(1)),
            );
            ctx.timer(jitter, Timer::DisRetry { gen: self.dis_gen });
            let check = SimTime(
                self.rng
                    .random_range(0..self.params.dead_parent_check().0.max(1)),
            );
            ctx.timer(check, Timer::DeadParentCheck);
        }
        if self.sends_data() {
            let phase = SimTime(
                self.rng
                    .random_range(0..self.params.data_interval().0.max(1)),
            );
            ctx.timer(phase, Timer::AppSend);
        }
    }

    fn schedule_trickle(&mut self, ctx: &mut NodeCtx, s: TrickleSchedule) {
        ctx.timer(s.fire_in, Timer::TrickleFire { gen: s.generation });
        ctx.timer(s.interval_end_in, Timer::TrickleEnd { gen: s.generation });
    }

    fn trickle_reset(&mut self, ctx: &mut NodeCtx) {
        if let Some(s) = self.trickle.reset(&mut self.rng) {
            self.schedule_trickle(ctx, s);
        }
    }

    fn dio(&self) -> ControlMessage {
        ControlMessage::Dio(Dio::new(self.id, self.rank, self.version))
    }

    /// Frames `msg` for the node's mode and queues the transmission.
    fn send_control(&mut self, ctx: &mut NodeCtx, dst: Option<NodeId>, msg: ControlMessage) {
        if self.silent() {
            return;
        }
        let kind = msg.kind();
        let (bytes, secure, counter) = if self.security.mode.is_secure() {
            match self.security.secure_wrap(&msg) {
                Ok(env) => {
                    let c = env.header.counter;
                    (env.to_bytes(), true, Some(c))
                }
                Err(_) => return,
            }
        } else {
            match BaseFrame::new(msg) {
                Ok(f) => (f.to_bytes(), false, None),
                Err(_) => return,
            }
        };
        ctx.out.push(Output::Transmit {
            packet: Packet {
                src: self.id,
                dst,
                body: Body::Control(bytes),
            },
            kind: Some(kind),
            secure,
            counter,
            replay: false,
        });
    }

    pub fn on_timer(&mut self, ctx: &mut NodeCtx, timer: Timer) {
        match timer {
            Timer::TrickleFire { gen } => {
                if gen == self.trickle.generation
                    && self.trickle.is_running()
                    && self.trickle.on_fire()
                    && self.is_attached()
                {
                    let dio = self.dio();
                    self.send_control(ctx, None, dio);
                }
            }
            Timer::TrickleEnd { gen } => {
                if gen == self.trickle.generation && self.trickle.is_running() {
                    let s = self.trickle.on_interval_end(&mut self.rng);
                    self.schedule_trickle(ctx, s);
                }
            }
            Timer::DisRetry { gen } => {
                if gen == self.dis_gen && !self.is_attached() {
                    let dis = ControlMessage::Dis(Dis {
                        sender: self.id,
                        flags: 0,
                    });
                    self.send_control(ctx, None, dis);
                    ctx.timer(self.params.dis_interval(), Timer::DisRetry { gen });
                }
            }
            Timer::DeadParentCheck => {
                self.detect_dead_parent(ctx);
                ctx.timer(self.params.dead_parent_check(), Timer::DeadParentCheck);
            }
            Timer::DaoRefresh => {
                if self.is_attached() && self.dao_pending.is_none() {
                    self.start_dao(ctx);
                }
                let base = self.params.dao_refresh().0;
                let jitter = self.rng.random_range(0..(base / 5).max(1));
                ctx.timer(SimTime(base - base / 10 + jitter), Timer::DaoRefresh);
            }
            Timer::DaoAckTimeout { seq } => self.on_dao_timeout(ctx, seq),
            Timer::CcTimeout { peer, nonce } => {
                if self.security.pending(peer).map(|c| c.nonce) != Some(nonce) {
                    return;
                }
                match self.security.reissue(peer, 1 + self.params.cc_max_reissues) {
                    Ok(req) => {
                        self.send_control(ctx, Some(peer), req);
                        ctx.timer(self.params.cc_timeout(), Timer::CcTimeout { peer, nonce });
                    }
                    Err(_) => ctx.trace(TraceEvent::CcExpired {
                        t: ctx.now,
                        node: self.id,
                        peer,
                    }),
                }
            }
            Timer::AppSend => {
                self.originate_data(ctx);
                ctx.timer(self.params.data_interval(), Timer::AppSend);
            }
        }
    }

    pub fn on_packet(&mut self, ctx: &mut NodeCtx, packet: Packet) {
        match packet.body {
            Body::Data(pkt) => {
                if packet.dst != Some(self.id) {
                    return;
                }
                if let Some(adv) = &self.adversary {
                    if adv.filter(Traffic::Data) == Verdict::Drop {
                        self.drop_data(ctx, &pkt, DropCause::Attack);
                        return;
                    }
                }
                self.forward_data(ctx, pkt);
            }
            Body::Control(bytes) => {
                if let Some(adv) = &self.adversary {
                    if packet.src != self.id {
                        if let Some(frame) = adv.neighbor_replay(&bytes) {
                            ctx.out.push(Output::Transmit {
                                packet: Packet {
                                    src: packet.src,
                                    dst: None,
                                    body: Body::Control(frame),
                                },
                                kind: Some(ControlKind::Dio),
                                secure: bytes.first().is_some_and(|b| b & 0x80 != 0),
                                counter: None,
                                replay: true,
                            });
                        }
                    }
                    if adv.filter(Traffic::Control) == Verdict::Drop {
                        return;
                    }
                }
                self.on_control(ctx, packet.src, packet.dst, &bytes);
            }
        }
    }

    fn security_drop(&self, ctx: &mut NodeCtx, src: NodeId, reason: &str) {
        ctx.trace(TraceEvent::SecurityDrop {
            t: ctx.now,
            node: self.id,
            src,
            reason: reason.to_string(),
        });
    }

    fn on_control(&mut self, ctx: &mut NodeCtx, src: NodeId, dst: Option<NodeId>, bytes: &[u8]) {
        if src == self.id {
            return;
        }
        let frame = match Frame::parse(bytes) {
            Ok(f) => f,
            Err(_) => return self.security_drop(ctx, src, "malformed"),
        };
        let msg = match (self.security.mode.is_secure(), frame) {
            (false, Frame::Base(b)) => b.into_message(),
            (false, Frame::Secure(_)) => return self.security_drop(ctx, src, "unreadable"),
            (true, Frame::Base(_)) => return self.security_drop(ctx, src, "unsecured"),
            (true, Frame::Secure(env)) => match self.security.secure_unwrap(&env, src) {
                Ok(m) => m,
                Err(SecurityError::ReplaySuspect {
                    reason,
                    message,
                    counter,
                }) => {
                    if reason == SuspectReason::FirstContact && !self.could_influence(&message) {
                        if self.security.accept_unverified(src, counter) {
                            self.dispatch(ctx, src, dst, *message);
                        }
                        return;
                    }
                    self.challenge(ctx, src, *message);
                    return;
                }
                Err(e) => return self.security_drop(ctx, src, &e.to_string()),
            },
        };
        if msg.sender() != src {
            return self.security_drop(ctx, src, "sender mismatch");
        }
        self.dispatch(ctx, src, dst, msg);
    }

    /// Whether a DIO could change this node's parent choice.
    fn could_influence(&self, msg: &ControlMessage) -> bool {
        match msg {
            ControlMessage::Dio(d) => {
                !self.is_sink()
                    && !d.rank.is_infinite()
                    && (!self.is_attached() || d.rank <= self.rank)
            }
            _ => true,
        }
    }

    fn challenge(&mut self, ctx: &mut NodeCtx, peer: NodeId, held: ControlMessage) {
        match self.security.issue_cc_request(peer, ctx.now) {
            Ok(req) => {
                let nonce = match &req {
                    ControlMessage::Cc(c) => c.nonce,
                    _ => unreachable!(),
                };
                ctx.trace(TraceEvent::CcIssued {
                    t: ctx.now,
                    node: self.id,
                    peer,
                });
                self.send_control(ctx, Some(peer), req);
                ctx.timer(self.params.cc_timeout(), Timer::CcTimeout { peer, nonce });
            }
            Err(SecurityError::ChallengeAlreadyPending) => {}
            Err(_) => return,
        }
        self.security.quarantine(peer, held);
    }

    fn dispatch(
        &mut self,
        ctx: &mut NodeCtx,
        src: NodeId,
        dst: Option<NodeId>,
        msg: ControlMessage,
    ) {
        match msg {
            ControlMessage::Dio(d) => self.process_dio(ctx, &d),
            ControlMessage::Dis(_) => self.process_dis(ctx, dst, src),
            ControlMessage::Dao(d) => {
                if dst == Some(self.id) {
                    self.process_dao(ctx, &d, src)
                }
            }
            ControlMessage::DaoAck(a) => {
                if dst == Some(self.id) {
                    self.process_dao_ack(ctx, &a, src)
                }
            }
            ControlMessage::Cc(cc) => {
                if dst != Some(self.id) {
                    return;
                }
                match self.security.handle_cc(&cc, src) {
                    Ok(CcOutcome::Respond(resp)) => self.send_control(ctx, Some(src), resp),
                    Ok(CcOutcome::Verified { released }) => {
                        ctx.trace(TraceEvent::CcVerified {
                            t: ctx.now,
                            node: self.id,
                            peer: src,
                        });
                        if let Some(m) = released {
                            self.dispatch(ctx, src, Some(self.id), m);
                        }
                    }
                    Err(e) => self.security_drop(ctx, src, &e.to_string()),
                }
            }
        }
    }

    /// DIO handling: the rank owner is the sender named in the DIO.
    pub fn process_dio(&mut self, ctx: &mut NodeCtx, dio: &Dio) {
        if dio.sender == self.id {
            return;
        }
        if self.is_sink() {
            if !dio.rank.is_infinite() {
                self.trickle.hear_consistent();
            }
            return;
        }
        if dio.version < self.version {
            return;
        }
        if dio.version > self.version {
            self.version = dio.version;
            self.parents.clear();
            if self.is_attached() {
                self.local_repair(ctx);
            }
        }
        if dio.rank.is_infinite() {
            if self.parents.remove(&dio.sender).is_some() && self.preferred == Some(dio.sender) {
                self.select_preferred_parent(ctx);
            }
            return;
        }
        let now = ctx.now;
        let entry = self.parents.entry(dio.sender).or_insert(ParentEntry {
            advertised_rank: dio.rank,
            last_heard: now,
            suspect: false,
        });
        let unchanged = entry.advertised_rank == dio.rank;
        entry.advertised_rank = dio.rank;
        entry.last_heard = now;
        let changed = self.select_preferred_parent(ctx);
        if unchanged && !changed {
            self.trickle.hear_consistent();
        }
    }

    fn candidate(&self, id: NodeId, e: &ParentEntry, siblings: bool) -> bool {
        if e.advertised_rank.is_infinite() || !self.is_verified(id) {
            return false;
        }
        // Descendants advertise a rank above ours; equal ranks are siblings.
        !self.is_attached()
            || self.preferred == Some(id)
            || e.advertised_rank < self.rank
            || (siblings && e.advertised_rank == self.rank)
    }

    /// Re-runs OF0 parent selection. Returns true if parent or rank changed.
    pub fn select_preferred_parent(&mut self, ctx: &mut NodeCtx) -> bool {
        self.reselect(ctx, false)
    }

    /// `siblings` admits equal-rank neighbors, used after a parent timed out.
    fn reselect(&mut self, ctx: &mut NodeCtx, siblings: bool) -> bool {
        if self.is_sink() {
            return false;
        }
        let best = self
            .parents
            .iter()
            .filter(|(id, e)| self.candidate(**id, e, siblings))
            .min_by_key(|(id, e)| (e.advertised_rank, **id))
            .map(|(id, e)| (*id, e.advertised_rank));
        let old_pref = self.preferred;
        let old_rank = self.rank;
        let Some((parent, parent_rank)) = best else {
            if self.is_attached() {
                self.local_repair(ctx);
                return true;
            }
            return false;
        };
        let new_rank = compute_rank(parent_rank);
        if self.is_attached()
            && new_rank > old_rank
            && new_rank.0 - old_rank.0 >= 2 * MIN_HOP_RANK_INCREASE
        {
            self.local_repair(ctx);
            return true;
        }
        if new_rank.is_infinite() {
            return false;
        }
        self.preferred = Some(parent);
        self.rank = new_rank;
        let parent_changed = old_pref != Some(parent);
        if parent_changed {
            ctx.trace(TraceEvent::ParentChanged {
                t: ctx.now,
                node: self.id,
                old: old_pref,
                new: Some(parent),
                rank: new_rank,
            });
            if old_rank.is_infinite() {
                self.dis_gen += 1;
                if !self.refresh_armed {
                    self.refresh_armed = true;
                    let base = self.params.dao_refresh().0;
                    ctx.timer(
                        SimTime(self.rng.random_range(base - base / 10..base)),
                        Timer::DaoRefresh,
                    );
                }
            }
            self.dao_pending = None;
            self.start_dao(ctx);
        }
        if new_rank != old_rank {
            self.trickle_reset(ctx);
        }
        parent_changed || new_rank != old_rank
    }

    /// Evicts silent parents. The preferred parent is only evicted once a DAO
    /// transaction through it has gone unanswered.
    pub fn detect_dead_parent(&mut self, ctx: &mut NodeCtx) {
        if self.is_sink() {
            return;
        }
        let timeout = self.params.dead_parent_timeout();
        let now = ctx.now;
        let dead: Vec<NodeId> = self
            .parents
            .iter()
            .filter(|(_, e)| e.suspect && now.saturating_sub(e.last_heard) > timeout)
            .map(|(id, _)| *id)
            .collect();
        let mut lost_preferred = false;
        for id in dead {
            self.parents.remove(&id);
            lost_preferred |= self.preferred == Some(id);
        }
        if lost_preferred {
            self.reselect(ctx, true);
        }
    }

    /// Poison, forget parents, solicit DIOs.
    pub fn local_repair(&mut self, ctx: &mut NodeCtx) {
        if self.is_sink() {
            return;
        }
        ctx.trace(TraceEvent::LocalRepair {
            t: ctx.now,
            node: self.id,
        });
        let old = self.preferred.take();
        self.rank = Rank::INFINITE;
        self.parents.clear();
        self.dao_pending = None;
        self.dao_failures = 0;
        if old.is_some() {
            ctx.trace(TraceEvent::ParentChanged {
                t: ctx.now,
                node: self.id,
                old,
                new: None,
                rank: Rank::INFINITE,
            });
        }
        let poison = ControlMessage::Dio(Dio::new(self.id, Rank::INFINITE, self.version));
        self.send_control(ctx, None, poison);
        self.trickle.stop();
        let dis = ControlMessage::Dis(Dis {
            sender: self.id,
            flags: 0,
        });
        self.send_control(ctx, None, dis);
        self.dis_gen += 1;
        ctx.timer(
            self.params.dis_interval(),
            Timer::DisRetry { gen: self.dis_gen },
        );
    }

    pub fn process_dis(&mut self, ctx: &mut NodeCtx, dst: Option<NodeId>, from: NodeId) {
        if !self.is_attached() {
            return;
        }
        if dst == Some(self.id) {
            let dio = self.dio();
            self.send_control(ctx, Some(from), dio);
        } else {
            self.trickle_reset(ctx);
        }
    }

    fn start_dao(&mut self, ctx: &mut NodeCtx) {
        let Some(parent) = self.preferred else { return };
        self.dao_seq = self.dao_seq.wrapping_add(1);
        self.dao_pending = Some(DaoTransaction {
            seq: self.dao_seq,
            parent,
            sends: 1,
        });
        self.send_dao(ctx, parent, self.dao_seq);
    }

    fn send_dao(&mut self, ctx: &mut NodeCtx, parent: NodeId, seq: u8) {
        let dao = ControlMessage::Dao(Dao {
            sender: self.id,
            sequence: seq,
            ack_requested: true,
            targets: vec![self.id],
        });
        self.send_control(ctx, Some(parent), dao);
        ctx.timer(self.params.dao_ack_timeout(), Timer::DaoAckTimeout { seq });
    }

    fn on_dao_timeout(&mut self, ctx: &mut NodeCtx, seq: u8) {
        let Some(tx) = self.dao_pending.as_mut() else {
            return;
        };
        if tx.seq != seq {
            return;
        }
        if tx.sends <= self.params.dao_max_retries {
            tx.sends += 1;
            let parent = tx.parent;
            self.send_dao(ctx, parent, seq);
            return;
        }
        let parent = tx.parent;
        self.dao_pending = None;
        ctx.trace(TraceEvent::DaoExhausted {
            t: ctx.now,
            node: self.id,
            parent,
        });
        if let Some(e) = self.parents.get_mut(&parent) {
            e.suspect = true;
        }
        self.dao_failures += 1;
        if self.dao_failures >= self.params.dao_failures_for_repair {
            self.local_repair(ctx);
        }
    }

    pub fn process_dao(&mut self, ctx: &mut NodeCtx, dao: &Dao, from: NodeId) {
        if dao.targets.contains(&self.id) {
            // our own advertisement came back: routing loop
            self.local_repair(ctx);
            return;
        }
        for t in &dao.targets {
            self.routes.insert(*t, from);
        }
        if dao.ack_requested {
            let ack = ControlMessage::DaoAck(DaoAck {
                sender: self.id,
                sequence: dao.sequence,
                status: 0,
            });
            self.send_control(ctx, Some(from), ack);
        }
        if !self.is_sink() {
            if let Some(parent) = self.preferred {
                let mut targets = dao.targets.clone();
                targets.push(self.id);
                let fwd = ControlMessage::Dao(Dao {
                    sender: self.id,
                    sequence: dao.sequence,
                    ack_requested: false,
                    targets,
                });
                self.send_control(ctx, Some(parent), fwd);
            }
        }
    }

    pub fn process_dao_ack(&mut self, ctx: &mut NodeCtx, ack: &DaoAck, from: NodeId) {
        let Some(tx) = &self.dao_pending else { return };
        if tx.seq != ack.sequence || tx.parent != from {
            return;
        }
        self.dao_pending = None;
        self.dao_failures = 0;
        if let Some(e) = self.parents.get_mut(&from) {
            e.suspect = false;
            e.last_heard = ctx.now;
        }
        if !self.joined {
            self.joined = true;
            ctx.out.push(Output::Joined);
        }
    }

    fn originate_data(&mut self, ctx: &mut NodeCtx) {
        if !self.sends_data() {
            return;
        }
        self.data_seq += 1;
        let pkt = DataPacket {
            source: self.id,
            destination: NodeId::SINK,
            sequence: self.data_seq,
            created_at: ctx.now,
            size: self.params.data_payload_bytes,
            hops: Vec::new(),
        };
        ctx.trace(TraceEvent::DataSent {
            t: ctx.now,
            src: self.id,
            seq: self.data_seq,
        });
        self.forward_data(ctx, pkt);
    }

    fn drop_data(&self, ctx: &mut NodeCtx, pkt: &DataPacket, cause: DropCause) {
        ctx.trace(TraceEvent::DataDropped {
            t: ctx.now,
            node: self.id,
            src: pkt.source,
            seq: pkt.sequence,
            cause,
        });
    }

    /// Upward forwarding toward the sink with rank and loop checks.
    pub fn forward_data(&mut self, ctx: &mut NodeCtx, mut pkt: DataPacket) {
        if let Some(&(_, prev_rank)) = pkt.hops.last() {
            if self.rank >= prev_rank {
                self.drop_data(ctx, &pkt, DropCause::RankError);
                self.trickle_reset(ctx);
                return;
            }
        }
        if self.is_sink() {
            pkt.hops.push((self.id, self.rank));
            ctx.trace(TraceEvent::DataDelivered {
                t: ctx.now,
                src: pkt.source,
                seq: pkt.sequence,
                created_at: pkt.created_at,
                path: pkt.hops,
            });
            return;
        }
        let Some(parent) = self.preferred else {
            return self.drop_data(ctx, &pkt, DropCause::NoRoute);
        };
        if parent == self.id || pkt.hops.iter().any(|(n, _)| *n == parent) {
            self.drop_data(ctx, &pkt, DropCause::Loop);
            self.local_repair(ctx);
            return;
        }
        pkt.hops.push((self.id, self.rank));
        ctx.out.push(Output::Transmit {
            packet: Packet {
                src: self.id,
                dst: Some(parent),
                body: Body::Data(pkt),
            },
            kind: None,
            secure: false,
            counter: None,
            replay: false,
        });
    }

    pub fn has_pending_dao(&self) -> bool {
        self.dao_pending.is_some()
    }

    pub fn dao_failures(&self) -> u32 {
        self.dao_failures
    }
}

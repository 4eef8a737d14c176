//! Adversary overlays on a node's receive and forward path.

use serde::{Deserialize, Serialize};

use crate::messages::{any_kind_of, base_kind_of, ControlKind};
use crate::types::{NodeId, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackBehavior {
    None,
    Blackhole,
    #[serde(rename = "sf", alias = "selective_forward")]
    SelectiveForward,
    #[serde(rename = "neighbor", alias = "neighbor_replay")]
    NeighborReplay,
}

impl AttackBehavior {
    pub const ALL: [AttackBehavior; 4] = [
        AttackBehavior::None,
        AttackBehavior::Blackhole,
        AttackBehavior::SelectiveForward,
        AttackBehavior::NeighborReplay,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AttackBehavior::None => "No-Attack",
            AttackBehavior::Blackhole => "Blackhole",
            AttackBehavior::SelectiveForward => "SF",
            AttackBehavior::NeighborReplay => "Neighbor",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            AttackBehavior::None => "none",
            AttackBehavior::Blackhole => "blackhole",
            AttackBehavior::SelectiveForward => "sf",
            AttackBehavior::NeighborReplay => "neighbor",
        }
    }
}

impl std::str::FromStr for AttackBehavior {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "no-attack" => Ok(AttackBehavior::None),
            "blackhole" => Ok(AttackBehavior::Blackhole),
            "sf" | "selective-forward" | "selective_forward" => {
                Ok(AttackBehavior::SelectiveForward)
            }
            "neighbor" | "neighbour" | "neighbor-replay" => Ok(AttackBehavior::NeighborReplay),
            other => Err(format!(
                "unknown attack `{other}` (none|blackhole|sf|neighbor)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdversaryType {
    /// Holds the preinstalled key and speaks the network's mode.
    Internal,
    /// No key; runs the unsecured mode whatever the network runs.
    External,
}

impl std::str::FromStr for AdversaryType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "internal" | "i" => Ok(AdversaryType::Internal),
            "external" | "e" => Ok(AdversaryType::External),
            other => Err(format!(
                "unknown adversary type `{other}` (internal|external)"
            )),
        }
    }
}

fn default_launch_delay() -> u64 {
    120
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryConfig {
    pub node: NodeId,
    #[serde(rename = "attack")]
    pub behavior: AttackBehavior,
    #[serde(rename = "type")]
    pub adversary_type: AdversaryType,
    /// Legitimate behaviour after joining before the attack starts.
    #[serde(default = "default_launch_delay")]
    pub launch_delay_s: u64,
}

impl AdversaryConfig {
    pub fn launch_delay(&self) -> SimTime {
        SimTime::from_secs(self.launch_delay_s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Forward,
    Drop,
}

/// What arrived at the adversary for processing or forwarding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Traffic {
    Data,
    Control,
}

/// Blackhole: after launch nothing passes.
pub fn blackhole_filter(_traffic: Traffic, launched: bool) -> Verdict {
    if launched {
        Verdict::Drop
    } else {
        Verdict::Forward
    }
}

/// Selective forwarding: after launch data is dropped, control passes.
pub fn selective_forward_filter(traffic: Traffic, launched: bool) -> Verdict {
    match (launched, traffic) {
        (true, Traffic::Data) => Verdict::Drop,
        _ => Verdict::Forward,
    }
}

/// Runtime state of the adversary overlay on its node.
#[derive(Clone, Debug)]
pub struct Adversary {
    pub config: AdversaryConfig,
    pub launched_at: Option<SimTime>,
    /// Re-broadcast secure frames without being able to recognise them.
    pub replays_opaque: bool,
    pub keeps_advertising: bool,
}

impl Adversary {
    pub fn new(config: AdversaryConfig) -> Self {
        Self {
            config,
            launched_at: None,
            replays_opaque: false,
            keeps_advertising: false,
        }
    }

    pub fn launched(&self) -> bool {
        self.launched_at.is_some()
    }

    pub fn filter(&self, traffic: Traffic) -> Verdict {
        match self.config.behavior {
            AttackBehavior::Blackhole => blackhole_filter(traffic, self.launched()),
            AttackBehavior::SelectiveForward => selective_forward_filter(traffic, self.launched()),
            AttackBehavior::None | AttackBehavior::NeighborReplay => Verdict::Forward,
        }
    }

    /// A launched Blackhole stops emitting its own control traffic.
    pub fn silent(&self) -> bool {
        self.launched()
            && self.config.behavior == AttackBehavior::Blackhole
            && !self.keeps_advertising
    }

    /// Neighbor attack: the frame to re-broadcast verbatim, if it is a DIO the
    /// adversary can recognise.
    pub fn neighbor_replay(&self, frame: &[u8]) -> Option<Vec<u8>> {
        if !self.launched() || self.config.behavior != AttackBehavior::NeighborReplay {
            return None;
        }
        let kind = match self.config.adversary_type {
            AdversaryType::Internal => any_kind_of(frame),
            AdversaryType::External if self.replays_opaque => any_kind_of(frame),
            AdversaryType::External => base_kind_of(frame),
        };
        (kind == Some(ControlKind::Dio)).then(|| frame.to_vec())
    }

    pub fn node(&self) -> NodeId {
        self.config.node
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::{encode, ControlMessage, Dio, SecurityHeader, SecurityLevel};
    use crate::types::Rank;

    fn adv(behavior: AttackBehavior, t: AdversaryType) -> Adversary {
        Adversary::new(AdversaryConfig {
            node: NodeId(14),
            behavior,
            adversary_type: t,
            launch_delay_s: 120,
        })
    }

    #[test]
    fn blackhole_before_and_after() {
        let mut a = adv(AttackBehavior::Blackhole, AdversaryType::Internal);
        assert_eq!(a.filter(Traffic::Data), Verdict::Forward);
        assert!(!a.silent());
        a.launched_at = Some(SimTime::from_secs(130));
        assert_eq!(a.filter(Traffic::Data), Verdict::Drop);
        assert_eq!(a.filter(Traffic::Control), Verdict::Drop);
        assert!(a.silent());
    }

    #[test]
    fn sf_drops_data_only() {
        let mut a = adv(AttackBehavior::SelectiveForward, AdversaryType::Internal);
        a.launched_at = Some(SimTime::ZERO);
        assert_eq!(a.filter(Traffic::Data), Verdict::Drop);
        assert_eq!(a.filter(Traffic::Control), Verdict::Forward);
        assert!(!a.silent());
    }

    #[test]
    fn replay_is_verbatim() {
        let mut a = adv(AttackBehavior::NeighborReplay, AdversaryType::Internal);
        let dio = encode(&ControlMessage::Dio(Dio::new(NodeId(7), Rank(512), 0)));
        assert_eq!(a.neighbor_replay(&dio), None);
        a.launched_at = Some(SimTime::ZERO);
        assert_eq!(a.neighbor_replay(&dio).as_deref(), Some(&dio[..]));
        let mut secure = SecurityHeader {
            kind: ControlKind::Dio,
            level: SecurityLevel::EncMac,
            key_id: 0,
            counter: 3,
        }
        .to_bytes()
        .to_vec();
        secure.extend_from_slice(&[0u8; 30]);
        assert!(a.neighbor_replay(&secure).is_some());
    }

    #[test]
    fn external_cannot_spot_secure_dio() {
        let mut a = adv(AttackBehavior::NeighborReplay, AdversaryType::External);
        a.launched_at = Some(SimTime::ZERO);
        let mut secure = SecurityHeader {
            kind: ControlKind::Dio,
            level: SecurityLevel::EncMac,
            key_id: 0,
            counter: 3,
        }
        .to_bytes()
        .to_vec();
        secure.extend_from_slice(&[0u8; 30]);
        assert_eq!(a.neighbor_replay(&secure), None);
        a.replays_opaque = true;
        assert!(a.neighbor_replay(&secure).is_some());
    }
}

//! Tunable protocol, radio and energy constants.
//!
//! Every field can be overridden from a scenario file; missing fields take
//! the defaults below.

use serde::{Deserialize, Serialize};

use crate::messages::ControlKind;
use crate::types::SimTime;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub trickle_imin_ms: u64,
    pub trickle_doublings: u32,
    pub trickle_k: u32,
    /// Silence after which a parent is considered dead.
    pub dead_parent_timeout_s: u64,
    pub dead_parent_check_s: u64,
    /// Period of DAO route refreshes toward the preferred parent.
    pub dao_refresh_s: u64,
    pub dao_ack_timeout_s: u64,
    pub dao_max_retries: u32,
    /// Consecutive exhausted DAO transactions that count as an inconsistency.
    pub dao_failures_for_repair: u32,
    pub dis_interval_s: u64,
    pub cc_timeout_s: u64,
    /// Re-sends after the first consistency-check request.
    pub cc_max_reissues: u32,
    pub data_interval_s: u64,
    pub data_payload_bytes: u16,
    /// A Blackhole adversary keeps advertising DIOs while dropping traffic.
    pub blackhole_keeps_advertising: bool,
    /// An external adversary replays secure DIOs it cannot parse.
    pub external_replays_opaque: bool,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            trickle_imin_ms: 4_000,
            trickle_doublings: 8,
            trickle_k: 10,
            dead_parent_timeout_s: 200,
            dead_parent_check_s: 10,
            dao_refresh_s: 600,
            dao_ack_timeout_s: 5,
            dao_max_retries: 3,
            dao_failures_for_repair: 3,
            dis_interval_s: 60,
            cc_timeout_s: 10,
            cc_max_reissues: 3,
            data_interval_s: 60,
            data_payload_bytes: 100,
            blackhole_keeps_advertising: false,
            external_replays_opaque: false,
        }
    }
}

impl ProtocolParams {
    pub fn trickle_imin(&self) -> SimTime {
        SimTime::from_ms(self.trickle_imin_ms)
    }
    pub fn dead_parent_timeout(&self) -> SimTime {
        SimTime::from_secs(self.dead_parent_timeout_s)
    }
    pub fn dead_parent_check(&self) -> SimTime {
        SimTime::from_secs(self.dead_parent_check_s)
    }
    pub fn dao_refresh(&self) -> SimTime {
        SimTime::from_secs(self.dao_refresh_s)
    }
    pub fn dao_ack_timeout(&self) -> SimTime {
        SimTime::from_secs(self.dao_ack_timeout_s)
    }
    pub fn dis_interval(&self) -> SimTime {
        SimTime::from_secs(self.dis_interval_s)
    }
    pub fn cc_timeout(&self) -> SimTime {
        SimTime::from_secs(self.cc_timeout_s)
    }
    pub fn data_interval(&self) -> SimTime {
        SimTime::from_secs(self.data_interval_s)
    }
}

/// Nominal on-air sizes used for energy and airtime. Secure frames add
/// `secure_overhead` (header + MAC).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MessageSizes {
    pub dio: u32,
    pub dis: u32,
    pub dao: u32,
    pub dao_ack: u32,
    pub cc: u32,
    pub secure_overhead: u32,
    /// Link and network headers added to every frame.
    pub frame_overhead: u32,
}

impl Default for MessageSizes {
    fn default() -> Self {
        Self {
            dio: 76,
            dis: 8,
            dao: 24,
            dao_ack: 8,
            cc: 16,
            secure_overhead: 16,
            frame_overhead: 0,
        }
    }
}

impl MessageSizes {
    pub fn control(&self, kind: ControlKind, secure: bool) -> u32 {
        let base = match kind {
            ControlKind::Dio => self.dio,
            ControlKind::Dis => self.dis,
            ControlKind::Dao => self.dao,
            ControlKind::DaoAck => self.dao_ack,
            ControlKind::Cc => self.cc,
        };
        base + if secure { self.secure_overhead } else { 0 } + self.frame_overhead
    }

    pub fn data(&self, payload: u16) -> u32 {
        payload as u32 + self.frame_overhead
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    pub e_tx_mj_per_byte: f64,
    pub e_rx_mj_per_byte: f64,
    pub cpu_crypto_mj: f64,
    /// Idle draw in milliwatts (mJ per second).
    pub p_idle_mw: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            e_tx_mj_per_byte: 0.0006,
            e_rx_mj_per_byte: 0.00055,
            cpu_crypto_mj: 0.01,
            p_idle_mw: 0.0012,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    pub bytes_per_ms: f64,
    pub processing_ms: f64,
    pub loss_prob: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            bytes_per_ms: 31.25,
            processing_ms: 1.0,
            loss_prob: 0.0,
        }
    }
}

impl RadioParams {
    pub fn airtime(&self, bytes: u32) -> SimTime {
        SimTime::from_secs_f64((bytes as f64 / self.bytes_per_ms + self.processing_ms) / 1e3)
    }
}

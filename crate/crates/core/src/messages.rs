//! RPL control messages, their base and secure frame encodings, and data packets.
//!
//! The wire layout is simulator-defined (see `docs/wire-format.md`): a one-byte
//! kind code, a little-endian `u16` body length, then a fixed per-kind body.
//! A base frame is exactly that encoding. A secure frame is an 8-byte clear
//! header followed by the encrypted encoding and an 8-byte MAC.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{NodeId, Rank, SimTime};

pub const SECURE_HEADER_LEN: usize = 8;
pub const MAC_LEN: usize = 8;
/// High bit of the kind code marks the secure form, as ICMPv6 codes do in RPL.
pub const SECURE_FLAG: u8 = 0x80;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error("malformed message: {0}")]
    Malformed(&'static str),
    #[error("consistency-check messages exist only in secure form")]
    CcRequiresSecure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ControlKind {
    Dio,
    Dis,
    Dao,
    DaoAck,
    Cc,
}

impl ControlKind {
    pub const ALL: [ControlKind; 5] = [
        ControlKind::Dio,
        ControlKind::Dis,
        ControlKind::Dao,
        ControlKind::DaoAck,
        ControlKind::Cc,
    ];

    pub fn code(self) -> u8 {
        match self {
            ControlKind::Dio => 0x01,
            ControlKind::Dis => 0x02,
            ControlKind::Dao => 0x03,
            ControlKind::DaoAck => 0x04,
            ControlKind::Cc => 0x05,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x01 => ControlKind::Dio,
            0x02 => ControlKind::Dis,
            0x03 => ControlKind::Dao,
            0x04 => ControlKind::DaoAck,
            0x05 => ControlKind::Cc,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ControlKind::Dio => "DIO",
            ControlKind::Dis => "DIS",
            ControlKind::Dao => "DAO",
            ControlKind::DaoAck => "DAO_ACK",
            ControlKind::Cc => "CC",
        }
    }
}

/// DODAG configuration carried in every DIO.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DodagConfig {
    pub dio_interval_doublings: u8,
    /// log2 of the minimum trickle interval in milliseconds.
    pub dio_interval_min: u8,
    pub dio_redundancy: u8,
    pub max_rank_increase: u16,
    pub min_hop_rank_increase: u16,
    /// Objective code point; 0 is OF0.
    pub ocp: u16,
}

impl Default for DodagConfig {
    fn default() -> Self {
        Self {
            dio_interval_doublings: 8,
            dio_interval_min: 12,
            dio_redundancy: 10,
            max_rank_increase: 0,
            min_hop_rank_increase: crate::types::MIN_HOP_RANK_INCREASE,
            ocp: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dio {
    pub sender: NodeId,
    pub rank: Rank,
    pub version: u8,
    pub instance: u8,
    pub dtsn: u8,
    pub grounded: bool,
    /// Mode of operation, 3 bits. 2 = storing without multicast.
    pub mop: u8,
    pub config: DodagConfig,
}

impl Dio {
    pub fn new(sender: NodeId, rank: Rank, version: u8) -> Self {
        Self {
            sender,
            rank,
            version,
            instance: 0,
            dtsn: 0,
            grounded: true,
            mop: 2,
            config: DodagConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dis {
    pub sender: NodeId,
    pub flags: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dao {
    pub sender: NodeId,
    pub sequence: u8,
    pub ack_requested: bool,
    /// Nodes reachable through `sender`.
    pub targets: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaoAck {
    pub sender: NodeId,
    pub sequence: u8,
    pub status: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cc {
    pub sender: NodeId,
    pub response: bool,
    pub nonce: u32,
    /// Responder's outgoing counter; zero in requests.
    pub counter: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ControlMessage {
    Dio(Dio),
    Dis(Dis),
    Dao(Dao),
    DaoAck(DaoAck),
    Cc(Cc),
}

impl ControlMessage {
    pub fn kind(&self) -> ControlKind {
        match self {
            ControlMessage::Dio(_) => ControlKind::Dio,
            ControlMessage::Dis(_) => ControlKind::Dis,
            ControlMessage::Dao(_) => ControlKind::Dao,
            ControlMessage::DaoAck(_) => ControlKind::DaoAck,
            ControlMessage::Cc(_) => ControlKind::Cc,
        }
    }

    pub fn sender(&self) -> NodeId {
        match self {
            ControlMessage::Dio(m) => m.sender,
            ControlMessage::Dis(m) => m.sender,
            ControlMessage::Dao(m) => m.sender,
            ControlMessage::DaoAck(m) => m.sender,
            ControlMessage::Cc(m) => m.sender,
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MessageError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(MessageError::Malformed("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, MessageError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, MessageError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32, MessageError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn node(&mut self) -> Result<NodeId, MessageError> {
        self.u16().map(NodeId)
    }
}

/// Serializes a control message: kind code, body length, body.
pub fn encode(msg: &ControlMessage) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(24));
    match msg {
        ControlMessage::Dio(m) => {
            w.u16(m.sender.0);
            w.u16(m.rank.0);
            w.u8(m.version);
            w.u8(m.instance);
            w.u8(m.dtsn);
            w.u8(((m.grounded as u8) << 7) | (m.mop & 0x07) << 3);
            w.u8(m.config.dio_interval_doublings);
            w.u8(m.config.dio_interval_min);
            w.u8(m.config.dio_redundancy);
            w.u16(m.config.max_rank_increase);
            w.u16(m.config.min_hop_rank_increase);
            w.u16(m.config.ocp);
        }
        ControlMessage::Dis(m) => {
            w.u16(m.sender.0);
            w.u8(m.flags);
        }
        ControlMessage::Dao(m) => {
            w.u16(m.sender.0);
            w.u8(m.sequence);
            w.u8((m.ack_requested as u8) << 7);
            w.u8(m.targets.len() as u8);
            for t in &m.targets {
                w.u16(t.0);
            }
        }
        ControlMessage::DaoAck(m) => {
            w.u16(m.sender.0);
            w.u8(m.sequence);
            w.u8(m.status);
        }
        ControlMessage::Cc(m) => {
            w.u16(m.sender.0);
            w.u8((m.response as u8) << 7);
            w.u32(m.nonce);
            w.u32(m.counter);
        }
    }
    let body = w.0;
    let mut out = Vec::with_capacity(body.len() + 3);
    out.push(msg.kind().code());
    out.extend_from_slice(&(body.len() as u16).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

/// Parses the output of [`encode`]. Never panics on arbitrary input.
pub fn decode(bytes: &[u8]) -> Result<ControlMessage, MessageError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let code = r.u8()?;
    let kind = ControlKind::from_code(code).ok_or(MessageError::Malformed("unknown kind"))?;
    let len = r.u16()? as usize;
    if bytes.len() != 3 + len {
        return Err(MessageError::Malformed("length mismatch"));
    }
    let msg = match kind {
        ControlKind::Dio => {
            let sender = r.node()?;
            let rank = Rank(r.u16()?);
            let version = r.u8()?;
            let instance = r.u8()?;
            let dtsn = r.u8()?;
            let flags = r.u8()?;
            let config = DodagConfig {
                dio_interval_doublings: r.u8()?,
                dio_interval_min: r.u8()?,
                dio_redundancy: r.u8()?,
                max_rank_increase: r.u16()?,
                min_hop_rank_increase: r.u16()?,
                ocp: r.u16()?,
            };
            ControlMessage::Dio(Dio {
                sender,
                rank,
                version,
                instance,
                dtsn,
                grounded: flags & 0x80 != 0,
                mop: (flags >> 3) & 0x07,
                config,
            })
        }
        ControlKind::Dis => ControlMessage::Dis(Dis {
            sender: r.node()?,
            flags: r.u8()?,
        }),
        ControlKind::Dao => {
            let sender = r.node()?;
            let sequence = r.u8()?;
            let flags = r.u8()?;
            let n = r.u8()? as usize;
            let mut targets = Vec::with_capacity(n);
            for _ in 0..n {
                targets.push(r.node()?);
            }
            ControlMessage::Dao(Dao {
                sender,
                sequence,
                ack_requested: flags & 0x80 != 0,
                targets,
            })
        }
        ControlKind::DaoAck => ControlMessage::DaoAck(DaoAck {
            sender: r.node()?,
            sequence: r.u8()?,
            status: r.u8()?,
        }),
        ControlKind::Cc => {
            let sender = r.node()?;
            let flags = r.u8()?;
            ControlMessage::Cc(Cc {
                sender,
                response: flags & 0x80 != 0,
                nonce: r.u32()?,
                counter: r.u32()?,
            })
        }
    };
    if r.pos != bytes.len() {
        return Err(MessageError::Malformed("trailing bytes"));
    }
    Ok(msg)
}

/// A control message in base (unsecured) form. CC cannot be built this way.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaseFrame(ControlMessage);

impl BaseFrame {
    pub fn new(msg: ControlMessage) -> Result<Self, MessageError> {
        if msg.kind() == ControlKind::Cc {
            return Err(MessageError::CcRequiresSecure);
        }
        Ok(Self(msg))
    }

    pub fn message(&self) -> &ControlMessage {
        &self.0
    }

    pub fn into_message(self) -> ControlMessage {
        self.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SecurityLevel {
    MacOnly,
    EncMac,
}

impl SecurityLevel {
    pub fn code(self) -> u8 {
        match self {
            SecurityLevel::MacOnly => 1,
            SecurityLevel::EncMac => 2,
        }
    }
    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(SecurityLevel::MacOnly),
            2 => Some(SecurityLevel::EncMac),
            _ => None,
        }
    }
}

/// Clear-text security header of a secure control frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SecurityHeader {
    /// Kind of the protected message, visible to anyone who knows the secure codes.
    pub kind: ControlKind,
    pub level: SecurityLevel,
    pub key_id: u8,
    pub counter: u32,
}

impl SecurityHeader {
    pub fn to_bytes(&self) -> [u8; SECURE_HEADER_LEN] {
        let c = self.counter.to_le_bytes();
        [
            SECURE_FLAG | self.kind.code(),
            self.level.code(),
            self.key_id,
            0,
            c[0],
            c[1],
            c[2],
            c[3],
        ]
    }
}

/// Secure form: clear header, then encrypted message encoding followed by the MAC.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecureEnvelope {
    pub header: SecurityHeader,
    /// Ciphertext of the message encoding with the MAC appended.
    pub ciphertext: Vec<u8>,
}

impl SecureEnvelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SECURE_HEADER_LEN + self.ciphertext.len());
        out.extend_from_slice(&self.header.to_bytes());
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MessageError> {
        if bytes.len() < SECURE_HEADER_LEN + 3 + MAC_LEN {
            return Err(MessageError::Malformed("short secure frame"));
        }
        let code = bytes[0];
        if code & SECURE_FLAG == 0 {
            return Err(MessageError::Malformed("not a secure frame"));
        }
        let kind = ControlKind::from_code(code & !SECURE_FLAG)
            .ok_or(MessageError::Malformed("unknown kind"))?;
        let level =
            SecurityLevel::from_code(bytes[1]).ok_or(MessageError::Malformed("security level"))?;
        let counter = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
        Ok(Self {
            header: SecurityHeader {
                kind,
                level,
                key_id: bytes[2],
                counter,
            },
            ciphertext: bytes[SECURE_HEADER_LEN..].to_vec(),
        })
    }
}

/// A control frame as it travels on the air.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    Base(BaseFrame),
    Secure(SecureEnvelope),
}

impl Frame {
    pub fn parse(bytes: &[u8]) -> Result<Frame, MessageError> {
        let first = *bytes.first().ok_or(MessageError::Malformed("empty"))?;
        if first & SECURE_FLAG != 0 {
            SecureEnvelope::from_bytes(bytes).map(Frame::Secure)
        } else {
            BaseFrame::new(decode(bytes)?).map(Frame::Base)
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Frame::Base(b) => b.to_bytes(),
            Frame::Secure(s) => s.to_bytes(),
        }
    }
}

/// Kind of a frame as identified by an implementation that only knows base codes.
pub fn base_kind_of(bytes: &[u8]) -> Option<ControlKind> {
    bytes.first().and_then(|&c| ControlKind::from_code(c))
}

/// Kind of a frame as identified by an implementation that knows secure codes too.
pub fn any_kind_of(bytes: &[u8]) -> Option<ControlKind> {
    bytes
        .first()
        .and_then(|&c| ControlKind::from_code(c & !SECURE_FLAG))
}

/// Upward (MP2P) application packet. `hops` records (node, rank) for each forwarder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPacket {
    pub source: NodeId,
    pub destination: NodeId,
    pub sequence: u32,
    pub created_at: SimTime,
    pub size: u16,
    pub hops: Vec<(NodeId, Rank)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dio() -> ControlMessage {
        ControlMessage::Dio(Dio::new(NodeId(3), Rank(256), 1))
    }

    #[test]
    fn dis_is_shortest() {
        let dis = encode(&ControlMessage::Dis(Dis {
            sender: NodeId(9),
            flags: 0,
        }));
        let others = [
            dio(),
            ControlMessage::Dao(Dao {
                sender: NodeId(2),
                sequence: 1,
                ack_requested: true,
                targets: vec![],
            }),
            ControlMessage::DaoAck(DaoAck {
                sender: NodeId(2),
                sequence: 1,
                status: 0,
            }),
            ControlMessage::Cc(Cc {
                sender: NodeId(2),
                response: false,
                nonce: 1,
                counter: 0,
            }),
        ];
        for o in &others {
            assert!(dis.len() < encode(o).len(), "{:?}", o.kind());
        }
    }

    #[test]
    fn dio_round_trip() {
        let m = dio();
        assert_eq!(decode(&encode(&m)).unwrap(), m);
    }

    #[test]
    fn cc_has_no_base_form() {
        let cc = ControlMessage::Cc(Cc {
            sender: NodeId(4),
            response: true,
            nonce: 42,
            counter: 7,
        });
        assert_eq!(
            BaseFrame::new(cc.clone()),
            Err(MessageError::CcRequiresSecure)
        );
        // a CC encoding presented as a base frame is refused too
        assert!(Frame::parse(&encode(&cc)).is_err());
    }

    #[test]
    fn empty_and_unknown() {
        assert!(matches!(decode(&[]), Err(MessageError::Malformed(_))));
        assert!(matches!(
            decode(&[0x09, 0, 0]),
            Err(MessageError::Malformed(_))
        ));
        assert!(Frame::parse(&[]).is_err());
    }

    #[test]
    fn truncated_dao() {
        let m = ControlMessage::Dao(Dao {
            sender: NodeId(5),
            sequence: 3,
            ack_requested: true,
            targets: vec![NodeId(5), NodeId(6)],
        });
        let bytes = encode(&m);
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn kind_visibility() {
        let bytes = encode(&dio());
        assert_eq!(base_kind_of(&bytes), Some(ControlKind::Dio));
        let hdr = SecurityHeader {
            kind: ControlKind::Dio,
            level: SecurityLevel::EncMac,
            key_id: 0,
            counter: 5,
        };
        let secure = hdr.to_bytes();
        assert_eq!(base_kind_of(&secure), None);
        assert_eq!(any_kind_of(&secure), Some(ControlKind::Dio));
    }
}

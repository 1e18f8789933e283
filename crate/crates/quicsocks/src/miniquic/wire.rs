//! Packet and frame codecs.
//!
//! Packet layout: `TYPE(1) VERSION(4) DCID_LEN(1) DCID SCID_LEN(1) SCID
//! [TOKEN_LEN(2) TOKEN] PN(4) PAYLOAD`, token section present only for
//! INITIAL and RETRY packets. Frames are TLV: `TYPE(1) LEN(2) VALUE`.

use std::fmt;

use rand::RngCore;

use crate::socks::DomainName;

/// Protocol version bytes: "QSK1".
pub const VERSION: [u8; 4] = [0x51, 0x53, 0x4B, 0x31];

/// Errors from the wire codecs, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("version mismatch: {0:02x?}")]
    VersionMismatch([u8; 4]),
    #[error("unknown packet type {0:#04x}")]
    UnknownPacketType(u8),
    #[error("connection id length must be 0 or 8, got {0}")]
    BadCidLength(u8),
    #[error("retry packets must carry a token and no frames")]
    MalformedRetry,
    #[error("unknown frame type {0:#04x}")]
    UnknownFrameType(u8),
    #[error("frame length mismatch in {0}")]
    FrameLength(&'static str),
    #[error("token longer than 65535 bytes")]
    TokenTooLong,
    #[error("server name invalid in clienthello")]
    BadServerName,
    #[error("trailing bytes after {0}")]
    TrailingBytes(&'static str),
}

/// An 8-byte connection identifier, compared bytewise.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnectionId([u8; 8]);

impl ConnectionId {
    pub fn random(rng: &mut dyn RngCore) -> Self {
        let mut bytes = [0u8; 8];
        rng.fill_bytes(&mut bytes);
        ConnectionId(bytes)
    }

    pub fn from_bytes(bytes: [u8; 8]) -> Self {
        ConnectionId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 8] {
        &self.0
    }
}

impl fmt::Debug for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketType {
    Initial,
    Retry,
    Handshake,
    OneRtt,
}

impl PacketType {
    fn to_byte(self) -> u8 {
        match self {
            PacketType::Initial => 0x01,
            PacketType::Retry => 0x02,
            PacketType::Handshake => 0x03,
            PacketType::OneRtt => 0x04,
        }
    }

    fn from_byte(b: u8) -> Result<Self, WireError> {
        match b {
            0x01 => Ok(PacketType::Initial),
            0x02 => Ok(PacketType::Retry),
            0x03 => Ok(PacketType::Handshake),
            0x04 => Ok(PacketType::OneRtt),
            other => Err(WireError::UnknownPacketType(other)),
        }
    }

    /// Whether the token section is present on the wire.
    fn has_token(self) -> bool {
        matches!(self, PacketType::Initial | PacketType::Retry)
    }
}

/// A decoded packet. The payload is kept as raw bytes so that relaying and
/// token splicing preserve frame bytes exactly; use [`Packet::frames`] to
/// parse it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub ptype: PacketType,
    pub dcid: Option<ConnectionId>,
    pub scid: Option<ConnectionId>,
    /// Token bytes; meaningful for INITIAL (may be empty) and RETRY
    /// (must be non-empty).
    pub token: Vec<u8>,
    pub packet_number: u32,
    pub payload: Vec<u8>,
}

impl Packet {
    pub fn frames(&self) -> Result<Vec<Frame>, WireError> {
        decode_frames(&self.payload)
    }
}

fn put_cid(out: &mut Vec<u8>, cid: &Option<ConnectionId>) {
    match cid {
        Some(cid) => {
            out.push(8);
            out.extend_from_slice(cid.as_bytes());
        }
        None => out.push(0),
    }
}

fn take_cid(buf: &[u8], what: &'static str) -> Result<(Option<ConnectionId>, usize), WireError> {
    let len = *buf.first().ok_or(WireError::Truncated(what))?;
    match len {
        0 => Ok((None, 1)),
        8 => {
            if buf.len() < 9 {
                return Err(WireError::Truncated(what));
            }
            let mut bytes = [0u8; 8];
            bytes.copy_from_slice(&buf[1..9]);
            Ok((Some(ConnectionId::from_bytes(bytes)), 9))
        }
        other => Err(WireError::BadCidLength(other)),
    }
}

pub fn encode_packet(p: &Packet) -> Result<Vec<u8>, WireError> {
    if p.ptype == PacketType::Retry && (p.token.is_empty() || !p.payload.is_empty()) {
        return Err(WireError::MalformedRetry);
    }
    if p.token.len() > u16::MAX as usize {
        return Err(WireError::TokenTooLong);
    }
    let mut out = Vec::with_capacity(32 + p.token.len() + p.payload.len());
    out.push(p.ptype.to_byte());
    out.extend_from_slice(&VERSION);
    put_cid(&mut out, &p.dcid);
    put_cid(&mut out, &p.scid);
    if p.ptype.has_token() {
        out.extend_from_slice(&(p.token.len() as u16).to_be_bytes());
        out.extend_from_slice(&p.token);
    }
    out.extend_from_slice(&p.packet_number.to_be_bytes());
    out.extend_from_slice(&p.payload);
    Ok(out)
}

pub fn decode_packet(buf: &[u8]) -> Result<Packet, WireError> {
    if buf.is_empty() {
        return Err(WireError::Truncated("packet type"));
    }
    let ptype = PacketType::from_byte(buf[0])?;
    if buf.len() < 5 {
        return Err(WireError::Truncated("version"));
    }
    let mut version = [0u8; 4];
    version.copy_from_slice(&buf[1..5]);
    if version != VERSION {
        return Err(WireError::VersionMismatch(version));
    }
    let mut at = 5;
    let (dcid, used) = take_cid(&buf[at..], "dcid")?;
    at += used;
    let (scid, used) = take_cid(&buf[at..], "scid")?;
    at += used;
    let token = if ptype.has_token() {
        if buf.len() < at + 2 {
            return Err(WireError::Truncated("token length"));
        }
        let tlen = u16::from_be_bytes([buf[at], buf[at + 1]]) as usize;
        at += 2;
        if buf.len() < at + tlen {
            return Err(WireError::Truncated("token"));
        }
        let token = buf[at..at + tlen].to_vec();
        at += tlen;
        token
    } else {
        Vec::new()
    };
    if buf.len() < at + 4 {
        return Err(WireError::Truncated("packet number"));
    }
    let packet_number = u32::from_be_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]]);
    at += 4;
    let payload = buf[at..].to_vec();
    if ptype == PacketType::Retry && (token.is_empty() || !payload.is_empty()) {
        return Err(WireError::MalformedRetry);
    }
    Ok(Packet {
        ptype,
        dcid,
        scid,
        token,
        packet_number,
        payload,
    })
}

/// Peek at the packet type without a full decode; used by the relay, which
/// only needs to recognize RETRY packets.
pub(crate) fn peek_type(buf: &[u8]) -> Result<PacketType, WireError> {
    if buf.len() < 5 {
        return Err(WireError::Truncated("packet type"));
    }
    let ptype = PacketType::from_byte(buf[0])?;
    let mut version = [0u8; 4];
    version.copy_from_slice(&buf[1..5]);
    if version != VERSION {
        return Err(WireError::VersionMismatch(version));
    }
    Ok(ptype)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    /// 32-byte client random plus the server name being connected to.
    ClientHello {
        random: [u8; 32],
        server_name: DomainName,
    },
    /// 32-byte server random.
    ServerHello { random: [u8; 32] },
    /// Transcript MAC finishing one side of the handshake.
    Fin { mac: [u8; 32] },
    PathChallenge { data: [u8; 8] },
    PathResponse { data: [u8; 8] },
    /// Largest packet number seen from the peer.
    Ack { largest: u32 },
    Ping,
    AppData { data: Vec<u8> },
}

impl Frame {
    fn type_byte(&self) -> u8 {
        match self {
            Frame::ClientHello { .. } => 0x01,
            Frame::ServerHello { .. } => 0x02,
            Frame::Fin { .. } => 0x03,
            Frame::PathChallenge { .. } => 0x04,
            Frame::PathResponse { .. } => 0x05,
            Frame::Ack { .. } => 0x06,
            Frame::Ping => 0x07,
            Frame::AppData { .. } => 0x08,
        }
    }

    fn value_bytes(&self) -> Vec<u8> {
        match self {
            Frame::ClientHello {
                random,
                server_name,
            } => {
                let mut v = Vec::with_capacity(33 + server_name.len());
                v.extend_from_slice(random);
                v.push(server_name.len() as u8);
                v.extend_from_slice(server_name.as_bytes());
                v
            }
            Frame::ServerHello { random } => random.to_vec(),
            Frame::Fin { mac } => mac.to_vec(),
            Frame::PathChallenge { data } | Frame::PathResponse { data } => data.to_vec(),
            Frame::Ack { largest } => largest.to_be_bytes().to_vec(),
            Frame::Ping => Vec::new(),
            Frame::AppData { data } => data.clone(),
        }
    }
}

pub fn encode_frames(frames: &[Frame]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in frames {
        let value = f.value_bytes();
        out.push(f.type_byte());
        out.extend_from_slice(&(value.len() as u16).to_be_bytes());
        out.extend_from_slice(&value);
    }
    out
}

fn exact<const N: usize>(value: &[u8], what: &'static str) -> Result<[u8; N], WireError> {
    if value.len() != N {
        return Err(WireError::FrameLength(what));
    }
    let mut out = [0u8; N];
    out.copy_from_slice(value);
    Ok(out)
}

pub fn decode_frames(mut buf: &[u8]) -> Result<Vec<Frame>, WireError> {
    let mut frames = Vec::new();
    while !buf.is_empty() {
        if buf.len() < 3 {
            return Err(WireError::Truncated("frame header"));
        }
        let ftype = buf[0];
        let len = u16::from_be_bytes([buf[1], buf[2]]) as usize;
        if buf.len() < 3 + len {
            return Err(WireError::Truncated("frame value"));
        }
        let value = &buf[3..3 + len];
        let frame = match ftype {
            0x01 => {
                if value.len() < 33 {
                    return Err(WireError::FrameLength("clienthello"));
                }
                let mut random = [0u8; 32];
                random.copy_from_slice(&value[..32]);
                let name_len = value[32] as usize;
                if value.len() != 33 + name_len {
                    return Err(WireError::FrameLength("clienthello"));
                }
                let server_name = DomainName::new(value[33..].to_vec())
                    .map_err(|_| WireError::BadServerName)?;
                Frame::ClientHello {
                    random,
                    server_name,
                }
            }
            0x02 => Frame::ServerHello {
                random: exact::<32>(value, "serverhello")?,
            },
            0x03 => Frame::Fin {
                mac: exact::<32>(value, "fin")?,
            },
            0x04 => Frame::PathChallenge {
                data: exact::<8>(value, "path_challenge")?,
            },
            0x05 => Frame::PathResponse {
                data: exact::<8>(value, "path_response")?,
            },
            0x06 => Frame::Ack {
                largest: u32::from_be_bytes(exact::<4>(value, "ack")?),
            },
            0x07 => {
                if !value.is_empty() {
                    return Err(WireError::FrameLength("ping"));
                }
                Frame::Ping
            }
            0x08 => Frame::AppData {
                data: value.to_vec(),
            },
            other => return Err(WireError::UnknownFrameType(other)),
        };
        frames.push(frame);
        buf = &buf[3 + len..];
    }
    Ok(frames)
}

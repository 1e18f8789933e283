//! Complete record of everything put on the virtual wire.
//!
//! Every send appears exactly once: delivered, lost to configured link loss,
//! or unreachable (no host or link). Full datagram bytes are retained in
//! memory so tests can assert on exact wire contents; the JSON export keeps
//! only the length.

use std::net::SocketAddr;

use serde::Serialize;

use crate::miniquic::{self, PacketType};
use crate::socks;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeliveryStatus {
    Delivered { arrive_ms: f64 },
    /// Dropped by the link's loss process.
    Lost,
    /// No host at the destination address, or no link to it.
    Unreachable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Send time.
    pub t_ms: f64,
    pub src: SocketAddr,
    pub dst: SocketAddr,
    pub len: usize,
    /// Packet-type tag from a best-effort classifier; assertions needing
    /// certainty should decode `bytes` instead.
    pub tag: String,
    pub status: DeliveryStatus,
    pub bytes: Vec<u8>,
}

impl TraceRecord {
    pub fn delivered(&self) -> bool {
        matches!(self.status, DeliveryStatus::Delivered { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub(crate) fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    /// One JSON object per line, in send order.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let (status, arrive_ms) = match r.status {
                DeliveryStatus::Delivered { arrive_ms } => ("delivered", Some(arrive_ms)),
                DeliveryStatus::Lost => ("lost", None),
                DeliveryStatus::Unreachable => ("unreachable", None),
            };
            let line = JsonRecord {
                t_ms: r.t_ms,
                src: r.src.to_string(),
                dst: r.dst.to_string(),
                len: r.len,
                tag: &r.tag,
                status,
                arrive_ms,
            };
            out.push_str(&serde_json::to_string(&line).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    t_ms: f64,
    src: String,
    dst: String,
    len: usize,
    tag: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    arrive_ms: Option<f64>,
}

/// Best-effort datagram classification for trace tags.
pub fn classify(bytes: &[u8]) -> String {
    if let Ok(ptype) = miniquic::peek_type(bytes) {
        return match ptype {
            PacketType::Initial => "initial",
            PacketType::Retry => "retry",
            PacketType::Handshake => "handshake",
            PacketType::OneRtt => "one_rtt",
        }
        .to_string();
    }
    if let Ok((_, payload)) = socks::decode_udp_header(bytes) {
        return if payload.is_empty() {
            "socks:empty".to_string()
        } else {
            format!("socks:{}", classify(payload))
        };
    }
    if looks_like_dns(bytes) {
        return if bytes[2] & 0x80 != 0 {
            "dns-response".to_string()
        } else {
            "dns-query".to_string()
        };
    }
    "other".to_string()
}

fn looks_like_dns(bytes: &[u8]) -> bool {
    if bytes.len() < 12 {
        return false;
    }
    let opcode = (bytes[2] >> 3) & 0x0F;
    let qdcount = u16::from_be_bytes([bytes[4], bytes[5]]);
    opcode == 0 && (1..=8).contains(&qdcount)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miniquic::{encode_packet, Packet};

    #[test]
    fn classifies_miniquic_and_socks_wrapping() {
        let packet = Packet {
            ptype: PacketType::Initial,
            dcid: None,
            scid: None,
            token: Vec::new(),
            packet_number: 0,
            payload: Vec::new(),
        };
        let inner = encode_packet(&packet).unwrap();
        assert_eq!(classify(&inner), "initial");
        let wrapped = socks::encode_udp_packet(
            &socks::SocksAddress::V4([10, 0, 0, 1].into(), 4433),
            &inner,
        );
        assert_eq!(classify(&wrapped), "socks:initial");
        let empty = socks::encode_udp_packet(
            &socks::SocksAddress::V4([10, 0, 0, 1].into(), 4433),
            &[],
        );
        assert_eq!(classify(&empty), "socks:empty");
        assert_eq!(classify(b"xx"), "other");
    }

    #[test]
    fn json_lines_parse_and_omit_bytes() {
        let mut trace = Trace::default();
        trace.push(TraceRecord {
            t_ms: 1.5,
            src: "10.0.0.1:9".parse().unwrap(),
            dst: "10.0.0.2:9".parse().unwrap(),
            len: 3,
            tag: "other".into(),
            status: DeliveryStatus::Delivered { arrive_ms: 2.5 },
            bytes: vec![1, 2, 3],
        });
        trace.push(TraceRecord {
            t_ms: 2.0,
            src: "10.0.0.1:9".parse().unwrap(),
            dst: "10.0.0.3:9".parse().unwrap(),
            len: 1,
            tag: "other".into(),
            status: DeliveryStatus::Unreachable,
            bytes: vec![0],
        });
        let lines: Vec<serde_json::Value> = trace
            .to_json_lines()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["arrive_ms"], 2.5);
        assert_eq!(lines[0]["status"], "delivered");
        assert_eq!(lines[1]["status"], "unreachable");
        assert!(lines[1].get("arrive_ms").is_none());
        assert!(lines[0].get("bytes").is_none());
    }
}

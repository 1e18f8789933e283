//! DNS message codec, the RFC 1035 subset the rest of the crate needs:
//! single-question A/AAAA messages, class IN, no EDNS0. Compression
//! pointers are honored on decode and never emitted on encode. Unknown
//! record types in a response are skipped, not errors.

use std::net::IpAddr;

pub const DNS_CLASS_IN: u16 = 1;

const FLAG_QR: u16 = 0x8000;
const FLAG_RD: u16 = 0x0100;
const FLAG_RA: u16 = 0x0080;
const OPCODE_MASK: u16 = 0x7800;
const TYPE_A: u16 = 1;
const TYPE_AAAA: u16 = 28;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DnsError {
    #[error("datagram truncated")]
    Truncated,
    #[error("empty label")]
    EmptyLabel,
    #[error("label longer than 63 bytes")]
    LabelTooLong,
    #[error("name longer than 255 bytes on the wire")]
    NameTooLong,
    #[error("bad compression pointer")]
    BadPointer,
    #[error("unsupported opcode {0}")]
    UnsupportedOpcode(u8),
    #[error("expected exactly one question, found {0}")]
    QuestionCount(u16),
    #[error("unsupported query type {0}")]
    UnsupportedQType(u16),
    #[error("unsupported query class {0}")]
    UnsupportedClass(u16),
    #[error("address record with data length {0}")]
    BadRdLength(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QType {
    A,
    Aaaa,
}

impl QType {
    pub fn to_u16(self) -> u16 {
        match self {
            QType::A => TYPE_A,
            QType::Aaaa => TYPE_AAAA,
        }
    }

    pub fn from_u16(raw: u16) -> Option<Self> {
        match raw {
            TYPE_A => Some(QType::A),
            TYPE_AAAA => Some(QType::Aaaa),
            _ => None,
        }
    }

    /// Whether an address belongs in answers to this query type.
    pub fn matches(self, addr: &IpAddr) -> bool {
        match self {
            QType::A => addr.is_ipv4(),
            QType::Aaaa => addr.is_ipv6(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rcode {
    NoError,
    ServFail,
    NxDomain,
    Other(u8),
}

impl Rcode {
    fn to_u8(self) -> u8 {
        match self {
            Rcode::NoError => 0,
            Rcode::ServFail => 2,
            Rcode::NxDomain => 3,
            Rcode::Other(n) => n & 0x0F,
        }
    }

    fn from_u8(raw: u8) -> Self {
        match raw & 0x0F {
            0 => Rcode::NoError,
            2 => Rcode::ServFail,
            3 => Rcode::NxDomain,
            n => Rcode::Other(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub name: String,
    pub qtype: QType,
}

/// One address record. The record type is implied by the address family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub name: String,
    pub ttl_s: u32,
    pub addr: IpAddr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnsMessage {
    pub id: u16,
    pub response: bool,
    pub recursion_desired: bool,
    pub recursion_available: bool,
    pub rcode: Rcode,
    pub question: Question,
    pub answers: Vec<Answer>,
}

/// Builds a recursion-desired query.
pub fn query(id: u16, name: &str, qtype: QType) -> DnsMessage {
    DnsMessage {
        id,
        response: false,
        recursion_desired: true,
        recursion_available: false,
        rcode: Rcode::NoError,
        question: Question {
            name: name.to_ascii_lowercase(),
            qtype,
        },
        answers: Vec::new(),
    }
}

/// Builds the response to `req`, echoing id, question, and the RD bit.
pub fn response(req: &DnsMessage, rcode: Rcode, answers: Vec<Answer>) -> DnsMessage {
    DnsMessage {
        id: req.id,
        response: true,
        recursion_desired: req.recursion_desired,
        recursion_available: true,
        rcode,
        question: req.question.clone(),
        answers,
    }
}

/// Length and emptiness checks for a dotted name, without touching the wire.
pub fn validate_name(name: &str) -> Result<(), DnsError> {
    if name.is_empty() {
        return Err(DnsError::EmptyLabel);
    }
    let mut wire_len = 1usize;
    for label in name.split('.') {
        if label.is_empty() {
            return Err(DnsError::EmptyLabel);
        }
        if label.len() > 63 {
            return Err(DnsError::LabelTooLong);
        }
        wire_len += 1 + label.len();
    }
    if wire_len > 255 {
        return Err(DnsError::NameTooLong);
    }
    Ok(())
}

fn encode_name(out: &mut Vec<u8>, name: &str) -> Result<(), DnsError> {
    validate_name(name)?;
    for label in name.split('.') {
        out.push(label.len() as u8);
        out.extend_from_slice(label.as_bytes());
    }
    out.push(0);
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DnsError> {
        let end = self.pos.checked_add(n).ok_or(DnsError::Truncated)?;
        let slice = self.buf.get(self.pos..end).ok_or(DnsError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, DnsError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DnsError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn decode_name(cur: &mut Cursor<'_>) -> Result<String, DnsError> {
    let mut name = String::new();
    let mut wire_len = 1usize;
    let mut pos = cur.pos;
    let mut resume = None;
    loop {
        let len = *cur.buf.get(pos).ok_or(DnsError::Truncated)? as usize;
        if len & 0xC0 == 0xC0 {
            let lo = *cur.buf.get(pos + 1).ok_or(DnsError::Truncated)? as usize;
            let target = ((len & 0x3F) << 8) | lo;
            // Pointers must go strictly backward, which rules out loops.
            if target >= pos {
                return Err(DnsError::BadPointer);
            }
            resume.get_or_insert(pos + 2);
            pos = target;
        } else if len & 0xC0 != 0 {
            return Err(DnsError::BadPointer);
        } else if len == 0 {
            cur.pos = resume.unwrap_or(pos + 1);
            if name.is_empty() {
                return Err(DnsError::EmptyLabel);
            }
            return Ok(name);
        } else {
            wire_len += 1 + len;
            if wire_len > 255 {
                return Err(DnsError::NameTooLong);
            }
            let label = cur
                .buf
                .get(pos + 1..pos + 1 + len)
                .ok_or(DnsError::Truncated)?;
            if !name.is_empty() {
                name.push('.');
            }
            for &byte in label {
                name.push(byte.to_ascii_lowercase() as char);
            }
            pos += 1 + len;
        }
    }
}

impl DnsMessage {
    pub fn encode(&self) -> Result<Vec<u8>, DnsError> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.id.to_be_bytes());
        let mut flags = self.rcode.to_u8() as u16;
        if self.response {
            flags |= FLAG_QR;
        }
        if self.recursion_desired {
            flags |= FLAG_RD;
        }
        if self.recursion_available {
            flags |= FLAG_RA;
        }
        out.extend_from_slice(&flags.to_be_bytes());
        for count in [1u16, self.answers.len() as u16, 0, 0] {
            out.extend_from_slice(&count.to_be_bytes());
        }
        encode_name(&mut out, &self.question.name)?;
        out.extend_from_slice(&self.question.qtype.to_u16().to_be_bytes());
        out.extend_from_slice(&DNS_CLASS_IN.to_be_bytes());
        for answer in &self.answers {
            encode_name(&mut out, &answer.name)?;
            let (rtype, rdata): (u16, Vec<u8>) = match answer.addr {
                IpAddr::V4(v4) => (TYPE_A, v4.octets().to_vec()),
                IpAddr::V6(v6) => (TYPE_AAAA, v6.octets().to_vec()),
            };
            out.extend_from_slice(&rtype.to_be_bytes());
            out.extend_from_slice(&DNS_CLASS_IN.to_be_bytes());
            out.extend_from_slice(&answer.ttl_s.to_be_bytes());
            out.extend_from_slice(&(rdata.len() as u16).to_be_bytes());
            out.extend_from_slice(&rdata);
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<DnsMessage, DnsError> {
        let mut cur = Cursor { buf, pos: 0 };
        let id = cur.u16()?;
        let flags = cur.u16()?;
        let opcode = ((flags & OPCODE_MASK) >> 11) as u8;
        if opcode != 0 {
            return Err(DnsError::UnsupportedOpcode(opcode));
        }
        let qdcount = cur.u16()?;
        let ancount = cur.u16()?;
        let nscount = cur.u16()?;
        let arcount = cur.u16()?;
        if qdcount != 1 {
            return Err(DnsError::QuestionCount(qdcount));
        }
        let qname = decode_name(&mut cur)?;
        let qtype_raw = cur.u16()?;
        let qtype = QType::from_u16(qtype_raw).ok_or(DnsError::UnsupportedQType(qtype_raw))?;
        let qclass = cur.u16()?;
        if qclass != DNS_CLASS_IN {
            return Err(DnsError::UnsupportedClass(qclass));
        }
        let mut answers = Vec::new();
        for (count, keep) in [(ancount, true), (nscount, false), (arcount, false)] {
            for _ in 0..count {
                let rname = decode_name(&mut cur)?;
                let rtype = cur.u16()?;
                let rclass = cur.u16()?;
                let ttl_s = cur.u32()?;
                let rdlen = cur.u16()?;
                let rdata = cur.take(rdlen as usize)?;
                if !keep || rclass != DNS_CLASS_IN {
                    continue;
                }
                let addr: IpAddr = match rtype {
                    TYPE_A => match <[u8; 4]>::try_from(rdata) {
                        Ok(octets) => octets.into(),
                        Err(_) => return Err(DnsError::BadRdLength(rdlen)),
                    },
                    TYPE_AAAA => match <[u8; 16]>::try_from(rdata) {
                        Ok(octets) => octets.into(),
                        Err(_) => return Err(DnsError::BadRdLength(rdlen)),
                    },
                    _ => continue,
                };
                answers.push(Answer {
                    name: rname,
                    ttl_s,
                    addr,
                });
            }
        }
        Ok(DnsMessage {
            id,
            response: flags & FLAG_QR != 0,
            recursion_desired: flags & FLAG_RD != 0,
            recursion_available: flags & FLAG_RA != 0,
            rcode: Rcode::from_u8(flags as u8),
            question: Question {
                name: qname,
                qtype,
            },
            answers,
        })
    }
}

//! Byte-exact codecs for the RFC 1928 messages the relay relies on.

use std::net::{Ipv4Addr, Ipv6Addr};

use super::{DomainName, SocksAddress, SocksError};

pub const SOCKS_VERSION: u8 = 0x05;
pub const METHOD_NO_AUTH: u8 = 0x00;
pub const METHOD_NO_ACCEPTABLE: u8 = 0xFF;
pub const CMD_UDP_ASSOCIATE: u8 = 0x03;
pub const REPLY_SUCCEEDED: u8 = 0x00;
pub const REPLY_NETWORK_UNREACHABLE: u8 = 0x03;
pub const REPLY_HOST_UNREACHABLE: u8 = 0x04;
pub const REPLY_COMMAND_NOT_SUPPORTED: u8 = 0x07;

const ATYP_IPV4: u8 = 0x01;
const ATYP_DOMAIN: u8 = 0x03;
const ATYP_IPV6: u8 = 0x04;

/// Header prepended to every relayed UDP datagram (RFC 1928 §7).
///
/// `RSV(2) FRAG(1) ATYP(1) ADDR PORT(2)`, with the payload starting
/// immediately after. Fragmentation is not supported: `frag` must be zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SocksUdpHeader {
    pub dst: SocksAddress,
}

impl SocksUdpHeader {
    pub fn wire_len(&self) -> usize {
        3 + self.dst.wire_len()
    }
}

fn put_address(out: &mut Vec<u8>, addr: &SocksAddress) {
    match addr {
        SocksAddress::V4(ip, port) => {
            out.push(ATYP_IPV4);
            out.extend_from_slice(&ip.octets());
            out.extend_from_slice(&port.to_be_bytes());
        }
        SocksAddress::Domain(name, port) => {
            out.push(ATYP_DOMAIN);
            out.push(name.len() as u8);
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&port.to_be_bytes());
        }
        SocksAddress::V6(ip, port) => {
            out.push(ATYP_IPV6);
            out.extend_from_slice(&ip.octets());
            out.extend_from_slice(&port.to_be_bytes());
        }
    }
}

fn take_address(buf: &[u8]) -> Result<(SocksAddress, usize), SocksError> {
    let atyp = *buf.first().ok_or(SocksError::Truncated("atyp"))?;
    match atyp {
        ATYP_IPV4 => {
            if buf.len() < 1 + 4 + 2 {
                return Err(SocksError::Truncated("ipv4 address"));
            }
            let ip = Ipv4Addr::new(buf[1], buf[2], buf[3], buf[4]);
            let port = u16::from_be_bytes([buf[5], buf[6]]);
            Ok((SocksAddress::V4(ip, port), 7))
        }
        ATYP_DOMAIN => {
            let len = *buf.get(1).ok_or(SocksError::Truncated("domain length"))? as usize;
            if buf.len() < 2 + len + 2 {
                return Err(SocksError::Truncated("domain name"));
            }
            let name = DomainName::new(buf[2..2 + len].to_vec())?;
            let port = u16::from_be_bytes([buf[2 + len], buf[3 + len]]);
            Ok((SocksAddress::Domain(name, port), 2 + len + 2))
        }
        ATYP_IPV6 => {
            if buf.len() < 1 + 16 + 2 {
                return Err(SocksError::Truncated("ipv6 address"));
            }
            let mut octets = [0u8; 16];
            octets.copy_from_slice(&buf[1..17]);
            let port = u16::from_be_bytes([buf[17], buf[18]]);
            Ok((SocksAddress::V6(Ipv6Addr::from(octets), port), 19))
        }
        other => Err(SocksError::UnknownAddressType(other)),
    }
}

/// Encode the UDP request header for a datagram destined to `dst`.
pub fn encode_udp_header(dst: &SocksAddress) -> Vec<u8> {
    let mut out = Vec::with_capacity(3 + dst.wire_len());
    out.extend_from_slice(&[0x00, 0x00, 0x00]);
    put_address(&mut out, dst);
    out
}

/// Encode a full relayed datagram: header for `dst` followed by `payload`.
pub fn encode_udp_packet(dst: &SocksAddress, payload: &[u8]) -> Vec<u8> {
    let mut out = encode_udp_header(dst);
    out.extend_from_slice(payload);
    out
}

/// Decode the UDP request header, returning it together with the payload that
/// follows (possibly empty).
pub fn decode_udp_header(datagram: &[u8]) -> Result<(SocksUdpHeader, &[u8]), SocksError> {
    if datagram.len() < 3 {
        return Err(SocksError::Truncated("rsv/frag"));
    }
    if datagram[0] != 0 || datagram[1] != 0 {
        return Err(SocksError::ReservedNonZero);
    }
    if datagram[2] != 0 {
        return Err(SocksError::FragmentationUnsupported(datagram[2]));
    }
    let (dst, used) = take_address(&datagram[3..])?;
    Ok((SocksUdpHeader { dst }, &datagram[3 + used..]))
}

// Control-channel messages. The negotiators below drive these; they are
// kept as free functions so the tests can exercise exact byte layouts.

pub(super) fn encode_greeting(methods: &[u8]) -> Vec<u8> {
    let mut out = vec![SOCKS_VERSION, methods.len() as u8];
    out.extend_from_slice(methods);
    out
}

pub(super) fn encode_method_selection(method: u8) -> Vec<u8> {
    vec![SOCKS_VERSION, method]
}

pub(super) fn encode_request(cmd: u8, dst: &SocksAddress) -> Vec<u8> {
    let mut out = vec![SOCKS_VERSION, cmd, 0x00];
    put_address(&mut out, dst);
    out
}

/// Reply message: also reused by the proxy to report a failed resolution on
/// the control channel after the association is up.
pub(crate) fn encode_reply(code: u8, bound: &SocksAddress) -> Vec<u8> {
    let mut out = vec![SOCKS_VERSION, code, 0x00];
    put_address(&mut out, bound);
    out
}

/// Incremental decode helpers: return `Ok(None)` when more bytes are needed.
pub(super) fn try_decode_greeting(buf: &[u8]) -> Result<Option<(Vec<u8>, usize)>, SocksError> {
    if buf.len() < 2 {
        return Ok(None);
    }
    if buf[0] != SOCKS_VERSION {
        return Err(SocksError::VersionMismatch(buf[0]));
    }
    let n = buf[1] as usize;
    if buf.len() < 2 + n {
        return Ok(None);
    }
    Ok(Some((buf[2..2 + n].to_vec(), 2 + n)))
}

pub(super) fn try_decode_method_selection(buf: &[u8]) -> Result<Option<(u8, usize)>, SocksError> {
    if buf.len() < 2 {
        return Ok(None);
    }
    if buf[0] != SOCKS_VERSION {
        return Err(SocksError::VersionMismatch(buf[0]));
    }
    Ok(Some((buf[1], 2)))
}

/// Request and reply share the VER/CODE/RSV/ADDR layout.
pub(super) fn try_decode_request_like(
    buf: &[u8],
) -> Result<Option<(u8, SocksAddress, usize)>, SocksError> {
    if buf.len() < 3 {
        return Ok(None);
    }
    if buf[0] != SOCKS_VERSION {
        return Err(SocksError::VersionMismatch(buf[0]));
    }
    let code = buf[1];
    match take_address(&buf[3..]) {
        Ok((addr, used)) => Ok(Some((code, addr, 3 + used))),
        Err(SocksError::Truncated(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    #[test]
    fn udp_header_domain_layout() {
        // RSV RSV FRAG ATYP LEN e  x  a  m  p  l  e  .  c  o  m  PORT
        let dst = SocksAddress::Domain(DomainName::from_str("example.com").unwrap(), 4433);
        let bytes = encode_udp_header(&dst);
        assert_eq!(
            bytes,
            [
                0x00, 0x00, 0x00, 0x03, 0x0B, 0x65, 0x78, 0x61, 0x6D, 0x70, 0x6C, 0x65, 0x2E,
                0x63, 0x6F, 0x6D, 0x11, 0x51
            ]
        );
    }

    #[test]
    fn udp_header_ipv4_layout() {
        let dst = SocksAddress::V4(Ipv4Addr::new(127, 0, 0, 1), 0);
        assert_eq!(
            encode_udp_header(&dst),
            [0x00, 0x00, 0x00, 0x01, 0x7F, 0x00, 0x00, 0x01, 0x00, 0x00]
        );
    }

    #[test]
    fn empty_domain_rejected() {
        assert!(DomainName::new(Vec::new()).is_err());
    }

    #[test]
    fn decode_round_trip_with_payload() {
        let dst = SocksAddress::Domain(DomainName::from_str("example.com").unwrap(), 4433);
        let mut datagram = encode_udp_header(&dst);
        datagram.extend_from_slice(&[0xAA, 0xBB]);
        let (header, payload) = decode_udp_header(&datagram).unwrap();
        assert_eq!(header.dst, dst);
        assert_eq!(payload, &[0xAA, 0xBB]);
    }

    #[test]
    fn fragments_rejected() {
        let err = decode_udp_header(&[0x00, 0x00, 0x01, 0x01, 1, 2, 3, 4, 0, 80]).unwrap_err();
        assert_eq!(err, SocksError::FragmentationUnsupported(0x01));
    }

    #[test]
    fn truncated_rejected() {
        assert_eq!(
            decode_udp_header(&[0x00, 0x00, 0x00]).unwrap_err(),
            SocksError::Truncated("atyp")
        );
        assert_eq!(
            decode_udp_header(&[0x00, 0x00]).unwrap_err(),
            SocksError::Truncated("rsv/frag")
        );
        // Declared domain length runs past the end of the datagram.
        assert_eq!(
            decode_udp_header(&[0x00, 0x00, 0x00, 0x03, 0x09, b'a', b'b']).unwrap_err(),
            SocksError::Truncated("domain name")
        );
    }

    #[test]
    fn unknown_atyp_rejected() {
        let err = decode_udp_header(&[0x00, 0x00, 0x00, 0x02, 1, 2, 3, 4, 0, 80]).unwrap_err();
        assert_eq!(err, SocksError::UnknownAddressType(0x02));
    }
}

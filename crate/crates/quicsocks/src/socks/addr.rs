use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};

use super::SocksError;

/// A domain name as carried in a SOCKS request header: 1..=255 bytes, no NUL.
///
/// The wire format does not constrain names to valid DNS syntax, so arbitrary
/// non-NUL bytes are preserved exactly as decoded.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainName(Vec<u8>);

impl DomainName {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, SocksError> {
        let bytes = bytes.into();
        if bytes.is_empty() || bytes.len() > 255 {
            return Err(SocksError::DomainLength(bytes.len()));
        }
        if bytes.contains(&0) {
            return Err(SocksError::DomainNul);
        }
        Ok(DomainName(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl std::str::FromStr for DomainName {
    type Err = SocksError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainName::new(s.as_bytes().to_vec())
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", String::from_utf8_lossy(&self.0))
    }
}

impl fmt::Debug for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DomainName({})", String::from_utf8_lossy(&self.0))
    }
}

/// Destination address forms of RFC 1928: IPv4, IPv6, or a domain name, plus
/// a port. The address kind is preserved exactly as decoded; IPv4-mapped
/// forms are never synthesized.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SocksAddress {
    V4(Ipv4Addr, u16),
    V6(Ipv6Addr, u16),
    Domain(DomainName, u16),
}

impl SocksAddress {
    pub fn port(&self) -> u16 {
        match self {
            SocksAddress::V4(_, p) | SocksAddress::V6(_, p) | SocksAddress::Domain(_, p) => *p,
        }
    }

    /// Concrete socket address, if this is not a domain form.
    pub fn socket_addr(&self) -> Option<SocketAddr> {
        match self {
            SocksAddress::V4(ip, p) => Some(SocketAddr::new(IpAddr::V4(*ip), *p)),
            SocksAddress::V6(ip, p) => Some(SocketAddr::new(IpAddr::V6(*ip), *p)),
            SocksAddress::Domain(..) => None,
        }
    }

    /// Number of bytes this address occupies on the wire (ATYP + ADDR + PORT).
    pub fn wire_len(&self) -> usize {
        1 + match self {
            SocksAddress::V4(..) => 4,
            SocksAddress::V6(..) => 16,
            SocksAddress::Domain(name, _) => 1 + name.len(),
        } + 2
    }
}

impl From<SocketAddr> for SocksAddress {
    fn from(addr: SocketAddr) -> Self {
        match addr {
            SocketAddr::V4(a) => SocksAddress::V4(*a.ip(), a.port()),
            SocketAddr::V6(a) => SocksAddress::V6(*a.ip(), a.port()),
        }
    }
}

impl fmt::Display for SocksAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SocksAddress::V4(ip, p) => write!(f, "{ip}:{p}"),
            SocksAddress::V6(ip, p) => write!(f, "[{ip}]:{p}"),
            SocksAddress::Domain(name, p) => write!(f, "{name}:{p}"),
        }
    }
}

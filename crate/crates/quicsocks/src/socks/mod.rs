//! RFC 1928 subset: method negotiation, UDP ASSOCIATE, and the UDP request
//! header with the domain-name address form.
//!
//! Everything here is sans-I/O. The codecs are pure functions over byte
//! slices; the association negotiators consume byte chunks from a reliable
//! control stream and produce byte chunks to write back. Blocking helpers for
//! real TCP streams live in [`negotiate`].

mod addr;
mod negotiate;
mod wire;

pub use addr::{DomainName, SocksAddress};
pub use negotiate::{
    negotiate_client, negotiate_server, ClientNegotiator, NegotiationStatus, ServerNegotiator,
    UdpAssociation,
};
pub use wire::{
    decode_udp_header, encode_udp_header, encode_udp_packet, SocksUdpHeader, METHOD_NO_ACCEPTABLE,
    METHOD_NO_AUTH, REPLY_COMMAND_NOT_SUPPORTED, REPLY_HOST_UNREACHABLE, REPLY_NETWORK_UNREACHABLE,
    REPLY_SUCCEEDED, SOCKS_VERSION,
};
pub(crate) use wire::encode_reply;

/// Errors for the SOCKS codecs and the association state machines.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SocksError {
    #[error("domain name must be 1..=255 bytes, got {0}")]
    DomainLength(usize),
    #[error("domain name contains a NUL byte")]
    DomainNul,
    #[error("truncated {0} field")]
    Truncated(&'static str),
    #[error("reserved field must be zero")]
    ReservedNonZero,
    #[error("fragmentation unsupported (frag={0:#04x})")]
    FragmentationUnsupported(u8),
    #[error("unknown address type {0:#04x}")]
    UnknownAddressType(u8),
    #[error("unexpected protocol version {0:#04x}")]
    VersionMismatch(u8),
    #[error("no acceptable authentication method")]
    MethodRejected,
    #[error("command {0:#04x} not supported")]
    CommandNotSupported(u8),
    #[error("association request failed with reply code {0:#04x}")]
    RequestFailed(u8),
    #[error("control stream closed during negotiation")]
    StreamClosed,
    #[error("control stream I/O: {0}")]
    Io(String),
}

impl From<std::io::Error> for SocksError {
    fn from(e: std::io::Error) -> Self {
        SocksError::Io(e.to_string())
    }
}

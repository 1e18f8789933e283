//! A miniature QUIC-like transport carrying exactly the mechanisms the relay
//! depends on: stateless retry with address-validation tokens, a two-flight
//! handshake deriving forward-secure keys, connection IDs, and client-driven
//! connection migration with path validation.
//!
//! The key schedule is a toy (hashes over the exchanged randoms) and provides
//! no real confidentiality; the protocol exists to exercise message flow and
//! address validation. One packet per UDP datagram, at most
//! [`MAX_DATAGRAM_SIZE`] bytes.

mod conn;
mod crypto;
mod rtt;
mod server;
mod token;
mod wire;

pub use conn::{
    ClientConfig, ClientStats, ConnEvent, Connection, ConnectionError, MigrateError, PathId,
    Phase, Transmit,
};
pub use crypto::{derive_forward_secure_key, transcript_mac};
pub use rtt::RttEstimator;
pub use server::{
    ServerConfig, ServerEngine, ServerEvent, ServerStats, UNVALIDATED_SEND_BUDGET,
};
pub use token::{issue_retry, validate_token, RetryToken, TokenReject, TOKEN_WIRE_LEN};
pub use wire::{
    decode_frames, decode_packet, encode_frames, encode_packet, ConnectionId, Frame, Packet,
    PacketType, WireError, VERSION,
};

pub(crate) use wire::peek_type;

/// Largest datagram an endpoint will send; anything bigger is dropped.
pub const MAX_DATAGRAM_SIZE: usize = 1350;

/// Default freshness window for retry tokens, in milliseconds.
pub const DEFAULT_TOKEN_FRESHNESS_MS: u64 = 30_000;

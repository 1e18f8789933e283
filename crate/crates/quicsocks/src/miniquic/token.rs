//! Address-validation tokens for stateless retry.
//!
//! A token binds the claimed source address and an issue timestamp under an
//! HMAC keyed by a server-lifetime secret, so the server can verify client
//! reachability without allocating per-connection state. Layout:
//! `claimed_ip(16, IPv4-mapped form) claimed_port(2) issued_at_ms(8, BE)
//! mac(32)`. Tokens are opaque to clients and relays; they are only echoed.

use std::net::{IpAddr, Ipv6Addr, SocketAddr};

use hmac::{Hmac, Mac};
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

/// Exact length of a token on the wire.
pub const TOKEN_WIRE_LEN: usize = 16 + 2 + 8 + 32;

/// Decoded contents of a token that passed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryToken {
    pub claimed: SocketAddr,
    pub issued_at_ms: u64,
}

/// Why a token was rejected. Rejections never produce a wire response; the
/// reason exists for counters and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenReject {
    /// MAC verification failed; covers malformed and truncated tokens.
    BadMac,
    /// Genuine token presented from an address it was not issued to.
    AddressMismatch,
    /// Genuine token older than the freshness window.
    Stale,
}

fn addr_bytes(addr: SocketAddr) -> [u8; 16] {
    match addr.ip() {
        IpAddr::V4(v4) => v4.to_ipv6_mapped().octets(),
        IpAddr::V6(v6) => v6.octets(),
    }
}

fn mac_over(key: &[u8], body: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(body);
    mac.finalize().into_bytes().into()
}

/// Issues a token for `claimed` at `now_ms`. Pure function of its inputs, so
/// identical inputs yield identical tokens.
pub fn issue_retry(key: &[u8], claimed: SocketAddr, now_ms: f64) -> Vec<u8> {
    let issued_at_ms = now_ms.max(0.0) as u64;
    let mut body = Vec::with_capacity(TOKEN_WIRE_LEN);
    body.extend_from_slice(&addr_bytes(claimed));
    body.extend_from_slice(&claimed.port().to_be_bytes());
    body.extend_from_slice(&issued_at_ms.to_be_bytes());
    let tag = mac_over(key, &body);
    body.extend_from_slice(&tag);
    body
}

/// Validates `token` as presented from `source` at `now_ms`. Checks run in
/// MAC, address, freshness order; accepts when the MAC verifies, the claimed
/// address and port equal `source`, and `now_ms - issued_at_ms <= freshness_ms`.
pub fn validate_token(
    key: &[u8],
    token: &[u8],
    source: SocketAddr,
    now_ms: f64,
    freshness_ms: u64,
) -> Result<RetryToken, TokenReject> {
    if token.len() != TOKEN_WIRE_LEN {
        return Err(TokenReject::BadMac);
    }
    let (body, tag) = token.split_at(TOKEN_WIRE_LEN - 32);
    // Comparison is not constant time; adequate for a model implementation.
    if tag != mac_over(key, body) {
        return Err(TokenReject::BadMac);
    }
    let mut ip = [0u8; 16];
    ip.copy_from_slice(&body[..16]);
    let port = u16::from_be_bytes([body[16], body[17]]);
    let issued_at_ms = u64::from_be_bytes(body[18..26].try_into().unwrap());
    if ip != addr_bytes(source) || port != source.port() {
        return Err(TokenReject::AddressMismatch);
    }
    let now = now_ms.max(0.0) as u64;
    if now.saturating_sub(issued_at_ms) > freshness_ms {
        return Err(TokenReject::Stale);
    }
    let v6 = Ipv6Addr::from(ip);
    let claimed_ip = match v6.to_ipv4_mapped() {
        Some(v4) => IpAddr::V4(v4),
        None => IpAddr::V6(v6),
    };
    Ok(RetryToken {
        claimed: SocketAddr::new(claimed_ip, port),
        issued_at_ms,
    })
}

//! Connection-establishment acceleration for a QUIC-style transport through a
//! SOCKS5 UDP relay that resolves domain names on the client's behalf.
//!
//! The crate is organized around a handful of sans-I/O protocol engines that
//! can be driven either by real sockets or by the deterministic in-process
//! network simulator in [`netsim`]:
//!
//! * [`socks`] — RFC 1928 subset: method negotiation, UDP ASSOCIATE, and the
//!   UDP request header with the domain-name address form.
//! * [`miniquic`] — a miniature QUIC-like protocol: stateless retry with
//!   address-validation tokens, a two-flight handshake deriving forward-secure
//!   keys, and connection migration with path validation.
//! * [`dnskit`] — minimal DNS codec, stub resolver, and the authoritative
//!   responder used to discover which resolver serves a client.
//! * [`proxy`] — the relay daemon: caches initial handshake messages, resolves
//!   names, replays stateless retries, and relays until clients migrate away.
//! * [`endpoint`] — client session and demo server, plus the timing harness.
//! * [`netsim`] — deterministic event-driven virtual network with logical time.
//! * [`latmodel`] — analytical latency model and empirical CDF statistics.
//! * [`scenarios`] — prebuilt simulator topologies wiring the actors together.
//!
//! See the `examples/` directory for runnable demonstrations of each
//! capability, and the `qsk` binary for the command-line tools.

pub mod dnskit;
pub mod endpoint;
pub mod latmodel;
pub mod miniquic;
pub mod netsim;
pub mod proxy;
pub mod scenarios;
pub mod socks;

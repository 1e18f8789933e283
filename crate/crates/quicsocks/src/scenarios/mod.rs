//! Canned simulation scenarios.
//!
//! These wire the protocol engines into [`crate::netsim`] actors and run
//! complete handshakes on deterministic topologies. They power the latency
//! comparisons and the packet-trace assertions in the test suite, and the
//! examples reuse them to print reproducible numbers.

mod actors;
mod discovery;
mod handshake;

pub use actors::{
    ClientActor, ClientPlan, ForwardingResolverActor, ProxyActor, ResolverActor, ServerActor,
    CLIENT_DNS_PORT, CLIENT_QUIC_PORT, DNS_PORT, PROXY_DNS_PORT, PROXY_UPSTREAM_PORT, RELAY_PORT,
    SERVER_PORT,
};
pub use discovery::{run_discovery, DiscoveryReport, ProbeOutcome, AUTHORITY_ZONE};
pub use handshake::{
    run_handshake, table_reference, HandshakeReport, HandshakeScenario, APP_PAYLOAD, TARGET,
};

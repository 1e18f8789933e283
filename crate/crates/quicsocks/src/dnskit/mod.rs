//! DNS, sized for this crate: a single-question A/AAAA codec, a retrying
//! stub resolver (sans-I/O core with a blocking wrapper), and an
//! authoritative fixture responder whose query log doubles as the resolver
//! discovery mechanism
//!
//! Discovery works by resolving `<random-label>.<zone>` through whatever
//! resolver the client is configured with; the responder authoritative for
//! `<zone>` records who actually asked, and [`pair_probe`] matches that
//! observation back to the probe by its unique label.

mod authority;
mod discovery;
mod resolver;
mod udp;
mod wire;

pub use authority::{
    pair_probe, probe_name, random_label, AuthorityServer, ObservedQuery, ResolverObservation,
    Zone, ZoneError, ZoneRecord, PROBE_LABEL_LEN,
};
pub use discovery::{discover_resolver, DiscoveryError};
pub use resolver::{
    resolve, Resolution, ResolveError, StubResolver, TTL_CLAMP_MAX_S, TTL_CLAMP_MIN_S,
};
pub use udp::{serve_udp, AuthorityHandle};
pub use wire::{
    query, response, validate_name, Answer, DnsError, DnsMessage, QType, Question, Rcode,
    DNS_CLASS_IN,
};

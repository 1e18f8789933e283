//! Zone fixtures, the authoritative responder, and resolver discovery.
//!
//! The responder answers queries from a fixture zone and logs every query's
//! source address. Discovery rides on that log: a client resolves a
//! random-label name under the responder's zone through its configured
//! resolver, and whatever address the responder saw asking for that exact
//! label is the resolver actually doing the client's lookups.

use std::net::{IpAddr, SocketAddr};

use rand::Rng;
use serde::Serialize;

use super::wire::{response, validate_name, Answer, DnsMessage, QType, Rcode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ZoneError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneRecord {
    pub name: String,
    pub ttl_s: u32,
    pub addr: IpAddr,
}

/// Fixture zone: flat list of address records, looked up by exact name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Zone {
    records: Vec<ZoneRecord>,
}

impl Zone {
    pub fn new() -> Self {
        Zone::default()
    }

    pub fn with(mut self, name: &str, ttl_s: u32, addr: IpAddr) -> Self {
        validate_name(name).expect("zone record name");
        self.records.push(ZoneRecord {
            name: name.to_ascii_lowercase(),
            ttl_s,
            addr,
        });
        self
    }

    /// Parses "name type ttl address" lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Zone, ZoneError> {
        let syntax = |line: usize, msg: String| ZoneError::Syntax { line, msg };
        let mut zone = Zone::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let [name, rtype, ttl, addr] = fields[..] else {
                return Err(syntax(
                    line,
                    format!("expected 4 fields (name type ttl address), found {}", fields.len()),
                ));
            };
            validate_name(name).map_err(|e| syntax(line, format!("bad name: {e}")))?;
            let ttl_s: u32 = ttl
                .parse()
                .map_err(|_| syntax(line, format!("bad ttl {ttl:?}")))?;
            let addr: IpAddr = addr
                .parse()
                .map_err(|_| syntax(line, format!("bad address {addr:?}")))?;
            let family_ok = match rtype.to_ascii_uppercase().as_str() {
                "A" => addr.is_ipv4(),
                "AAAA" => addr.is_ipv6(),
                other => return Err(syntax(line, format!("unknown record type {other:?}"))),
            };
            if !family_ok {
                return Err(syntax(
                    line,
                    format!("record type {rtype} does not match address {addr}"),
                ));
            }
            zone.records.push(ZoneRecord {
                name: name.to_ascii_lowercase(),
                ttl_s,
                addr,
            });
        }
        Ok(zone)
    }

    pub fn lookup(&self, name: &str, qtype: QType) -> Vec<&ZoneRecord> {
        self.records
            .iter()
            .filter(|r| r.name == name && qtype.matches(&r.addr))
            .collect()
    }

    /// Whether any record exists under this exact name, any family.
    pub fn has_name(&self, name: &str) -> bool {
        self.records.iter().any(|r| r.name == name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// One query as seen by the responder: who asked, for what, and when.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedQuery {
    pub name: String,
    pub source: SocketAddr,
    pub ts_ms: f64,
}

/// A completed discovery pairing: the resolver observed answering for a
/// probe name, next to the resolver the client thinks it is using.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolverObservation {
    pub queried_name: String,
    pub resolver: SocketAddr,
    pub configured_resolver: SocketAddr,
    pub ts_ms: f64,
}

/// Authoritative responder over a fixture zone. Names under the authority
/// zone that have no fixture record get a synthesized answer, so random
/// probe labels always resolve; everything else is NXDOMAIN.
pub struct AuthorityServer {
    zone: Zone,
    authority_zone: Option<String>,
    synth_addr: IpAddr,
    synth_ttl_s: u32,
    observations: Vec<ObservedQuery>,
}

impl AuthorityServer {
    pub fn new(zone: Zone) -> Self {
        AuthorityServer {
            zone,
            authority_zone: None,
            synth_addr: IpAddr::from([127, 0, 0, 1]),
            synth_ttl_s: 60,
            observations: Vec::new(),
        }
    }

    /// Declares `authority_zone` as this responder's delegated zone and the
    /// address synthesized for otherwise-unknown names under it.
    pub fn with_authority(zone: Zone, authority_zone: &str, synth_addr: IpAddr) -> Self {
        validate_name(authority_zone).expect("authority zone name");
        AuthorityServer {
            zone,
            authority_zone: Some(authority_zone.to_ascii_lowercase()),
            synth_addr,
            synth_ttl_s: 60,
            observations: Vec::new(),
        }
    }

    fn in_authority(&self, name: &str) -> bool {
        match &self.authority_zone {
            None => false,
            Some(zone) => name == zone || name.ends_with(&format!(".{zone}")),
        }
    }

    /// Handles one datagram; `None` means drop (undecodable or not a query).
    pub fn handle(&mut self, from: SocketAddr, bytes: &[u8], now_ms: f64) -> Option<Vec<u8>> {
        let msg = DnsMessage::decode(bytes).ok()?;
        if msg.response {
            return None;
        }
        let name = msg.question.name.clone();
        let qtype = msg.question.qtype;
        self.observations.push(ObservedQuery {
            name: name.clone(),
            source: from,
            ts_ms: now_ms,
        });
        let records = self.zone.lookup(&name, qtype);
        let reply = if !records.is_empty() {
            let answers = records
                .iter()
                .map(|r| Answer {
                    name: name.clone(),
                    ttl_s: r.ttl_s,
                    addr: r.addr,
                })
                .collect();
            response(&msg, Rcode::NoError, answers)
        } else if self.zone.has_name(&name) {
            // Name exists in the other family only: no data, not NXDOMAIN.
            response(&msg, Rcode::NoError, Vec::new())
        } else if self.in_authority(&name) {
            let answers = if qtype.matches(&self.synth_addr) {
                vec![Answer {
                    name: name.clone(),
                    ttl_s: self.synth_ttl_s,
                    addr: self.synth_addr,
                }]
            } else {
                Vec::new()
            };
            response(&msg, Rcode::NoError, answers)
        } else {
            response(&msg, Rcode::NxDomain, Vec::new())
        };
        Some(reply.encode().expect("response from validated parts"))
    }

    pub fn observations(&self) -> &[ObservedQuery] {
        &self.observations
    }

    /// One JSON object per observed query, in arrival order.
    pub fn observations_json_lines(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            name: &'a str,
            resolver_ip: String,
            resolver_port: u16,
            ts_ms: f64,
        }
        let mut out = String::new();
        for obs in &self.observations {
            let line = Line {
                name: &obs.name,
                resolver_ip: obs.source.ip().to_string(),
                resolver_port: obs.source.port(),
                ts_ms: obs.ts_ms,
            };
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

const LABEL_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
pub const PROBE_LABEL_LEN: usize = 16;

/// 16 characters from [a-z0-9]; collisions are negligible across a run.
pub fn random_label(rng: &mut impl Rng) -> String {
    (0..PROBE_LABEL_LEN)
        .map(|_| LABEL_ALPHABET[rng.gen_range(0..LABEL_ALPHABET.len())] as char)
        .collect()
}

/// A fresh probe name under the authority zone.
pub fn probe_name(authority_zone: &str, rng: &mut impl Rng) -> String {
    format!("{}.{}", random_label(rng), authority_zone)
}

/// Pairs a probe with the responder's log: the query source seen for this
/// exact name is the resolver serving the client. `None` means no iterative
/// query reached the responder (cache hit or loss), i.e. discovery timeout.
pub fn pair_probe(
    probe: &str,
    configured_resolver: SocketAddr,
    observed: &[ObservedQuery],
) -> Option<ResolverObservation> {
    let probe = probe.to_ascii_lowercase();
    observed.iter().find(|o| o.name == probe).map(|o| ResolverObservation {
        queried_name: o.name.clone(),
        resolver: o.source,
        configured_resolver,
        ts_ms: o.ts_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnskit::wire::query;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeSet;

    fn peer() -> SocketAddr {
        "10.5.5.5:5353".parse().unwrap()
    }

    #[test]
    fn zone_parse_round_trip() {
        let zone = Zone::parse(
            "# fixture\n\
             example.test A 120 10.1.2.3   # primary\n\
             example.test AAAA 120 fd00::7\n\
             \n\
             other.test A 30 10.9.9.9\n",
        )
        .unwrap();
        assert_eq!(zone.len(), 3);
        assert_eq!(zone.lookup("example.test", QType::A).len(), 1);
        assert_eq!(zone.lookup("example.test", QType::Aaaa).len(), 1);
        assert_eq!(zone.lookup("other.test", QType::Aaaa).len(), 0);
        assert!(zone.has_name("other.test"));
        assert!(!zone.has_name("missing.test"));
    }

    #[test]
    fn zone_parse_errors_name_the_line() {
        let err = Zone::parse("example.test A 120 10.0.0.1\nbroken A ten 10.0.0.1\n").unwrap_err();
        assert_eq!(
            err,
            ZoneError::Syntax {
                line: 2,
                msg: "bad ttl \"ten\"".into()
            }
        );
        assert!(matches!(
            Zone::parse("a.b MX 5 10.0.0.1").unwrap_err(),
            ZoneError::Syntax { line: 1, .. }
        ));
        assert!(matches!(
            Zone::parse("a.b A 5 fd00::1").unwrap_err(),
            ZoneError::Syntax { line: 1, .. }
        ));
        assert!(matches!(
            Zone::parse("a.b A 5").unwrap_err(),
            ZoneError::Syntax { line: 1, .. }
        ));
    }

    #[test]
    fn fixture_records_answered_and_unknown_names_refused() {
        let zone = Zone::new().with("web.test", 90, IpAddr::from([10, 0, 0, 8]));
        let mut server = AuthorityServer::new(zone);
        let reply = server
            .handle(peer(), &query(7, "web.test", QType::A).encode().unwrap(), 1.0)
            .unwrap();
        let msg = DnsMessage::decode(&reply).unwrap();
        assert_eq!(msg.id, 7);
        assert!(msg.response);
        assert_eq!(msg.rcode, Rcode::NoError);
        assert_eq!(msg.answers[0].addr, IpAddr::from([10, 0, 0, 8]));

        let reply = server
            .handle(peer(), &query(8, "nope.test", QType::A).encode().unwrap(), 2.0)
            .unwrap();
        assert_eq!(DnsMessage::decode(&reply).unwrap().rcode, Rcode::NxDomain);

        // Wrong family for a known name: NODATA, not NXDOMAIN.
        let reply = server
            .handle(peer(), &query(9, "web.test", QType::Aaaa).encode().unwrap(), 3.0)
            .unwrap();
        let msg = DnsMessage::decode(&reply).unwrap();
        assert_eq!(msg.rcode, Rcode::NoError);
        assert!(msg.answers.is_empty());
    }

    #[test]
    fn authority_zone_synthesizes_probe_answers() {
        let mut server =
            AuthorityServer::with_authority(Zone::new(), "probe.test", IpAddr::from([10, 0, 0, 1]));
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let name = probe_name("probe.test", &mut rng);
        let reply = server
            .handle(peer(), &query(1, &name, QType::A).encode().unwrap(), 5.0)
            .unwrap();
        let msg = DnsMessage::decode(&reply).unwrap();
        assert_eq!(msg.rcode, Rcode::NoError);
        assert_eq!(msg.answers[0].addr, IpAddr::from([10, 0, 0, 1]));
        // Outside the zone: still NXDOMAIN.
        let reply = server
            .handle(peer(), &query(2, "other.zone", QType::A).encode().unwrap(), 6.0)
            .unwrap();
        assert_eq!(DnsMessage::decode(&reply).unwrap().rcode, Rcode::NxDomain);
        assert_eq!(server.observations().len(), 2);
        assert_eq!(server.observations()[0].name, name);
        assert_eq!(server.observations()[0].source, peer());
        assert_eq!(server.observations()[0].ts_ms, 5.0);
    }

    #[test]
    fn responses_and_garbage_not_logged() {
        let mut server = AuthorityServer::new(Zone::new());
        assert!(server.handle(peer(), b"short", 0.0).is_none());
        let req = query(1, "a.b", QType::A);
        let resp = response(&req, Rcode::NoError, Vec::new());
        assert!(server.handle(peer(), &resp.encode().unwrap(), 0.0).is_none());
        assert!(server.observations().is_empty());
    }

    #[test]
    fn concurrent_probes_pair_by_label() {
        let mut server =
            AuthorityServer::with_authority(Zone::new(), "probe.test", IpAddr::from([10, 0, 0, 1]));
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let name_a = probe_name("probe.test", &mut rng);
        let name_b = probe_name("probe.test", &mut rng);
        let resolver_a: SocketAddr = "10.8.0.1:40000".parse().unwrap();
        let resolver_b: SocketAddr = "10.8.0.2:40001".parse().unwrap();
        // Reversed arrival order relative to the probes.
        server.handle(resolver_b, &query(2, &name_b, QType::A).encode().unwrap(), 1.0);
        server.handle(resolver_a, &query(1, &name_a, QType::A).encode().unwrap(), 2.0);
        let configured: SocketAddr = "10.0.0.53:53".parse().unwrap();
        let obs_a = pair_probe(&name_a, configured, server.observations()).unwrap();
        let obs_b = pair_probe(&name_b, configured, server.observations()).unwrap();
        assert_eq!(obs_a.resolver, resolver_a);
        assert_eq!(obs_b.resolver, resolver_b);
        assert_eq!(obs_a.configured_resolver, configured);
        // A label that never reached the responder: discovery timeout.
        let name_c = probe_name("probe.test", &mut rng);
        assert!(pair_probe(&name_c, configured, server.observations()).is_none());
    }

    #[test]
    fn observation_log_exports_json_lines() {
        let mut server =
            AuthorityServer::with_authority(Zone::new(), "probe.test", IpAddr::from([10, 0, 0, 1]));
        server.handle(peer(), &query(1, "x.probe.test", QType::A).encode().unwrap(), 2.5);
        let log = server.observations_json_lines();
        let parsed: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(parsed["name"], "x.probe.test");
        assert_eq!(parsed["resolver_ip"], "10.5.5.5");
        assert_eq!(parsed["resolver_port"], 5353);
        assert_eq!(parsed["ts_ms"], 2.5);
    }

    #[test]
    fn random_labels_unique_and_well_formed() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut seen = BTreeSet::new();
        for _ in 0..10_000 {
            let label = random_label(&mut rng);
            assert_eq!(label.len(), PROBE_LABEL_LEN);
            assert!(label
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()));
            assert!(seen.insert(label), "collision across 10k draws");
        }
    }
}

//! The proxy core, free of sockets: feed it control bytes and datagrams,
//! drain [`ProxyAction`]s telling the shell what to send where.
//!
//! A client association is authenticated by source IP alone: any port on
//! the control connection's IP may use the relay, which is what makes NATed
//! clients workable. Each relay caches the client's initial packet until
//! the server answers, so a stateless retry can be replayed from here
//! without involving the client. The proxy reads packet types and the SOCKS
//! envelope, never handshake contents: it cannot derive session keys.

use std::collections::{BTreeMap, VecDeque};
use std::net::{IpAddr, SocketAddr};

use serde::Serialize;

use crate::dnskit::{validate_name, QType, ResolveError, StubResolver};
use crate::miniquic::{decode_packet, encode_packet, peek_type, ConnectionId, PacketType};
use crate::socks::{
    decode_udp_header, encode_reply, encode_udp_packet, DomainName, NegotiationStatus,
    ServerNegotiator, SocksAddress, REPLY_HOST_UNREACHABLE, REPLY_NETWORK_UNREACHABLE,
};

/// When the client learns the resolved server address: a dedicated
/// zero-payload datagram right after the forward, or implicitly from the
/// first relayed response's encapsulation header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NotifyMode {
    Early,
    OnFirstResponse,
}

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    /// Relay address advertised in association replies.
    pub relay_advertise: SocketAddr,
    pub upstream_dns: SocketAddr,
    pub notify: NotifyMode,
    pub idle_timeout_s: f64,
    pub max_relays: usize,
    pub dns_timeout_ms: f64,
    pub dns_retries: u32,
    /// Resolve A records when true, AAAA otherwise; ties the forwarded
    /// address family to the upstream socket's.
    pub prefer_v4: bool,
    pub seed: u64,
}

impl ProxyConfig {
    pub fn new(relay_advertise: SocketAddr, upstream_dns: SocketAddr) -> Self {
        ProxyConfig {
            relay_advertise,
            upstream_dns,
            notify: NotifyMode::Early,
            idle_timeout_s: 30.0,
            max_relays: 4096,
            dns_timeout_ms: 1_000.0,
            dns_retries: 2,
            prefer_v4: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct AssocId(u64);

/// What the shell must do next, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum ProxyAction {
    /// Send from the client-facing relay socket.
    RelaySend { to: SocketAddr, bytes: Vec<u8> },
    /// Send from the server-facing socket.
    UpstreamSend { to: SocketAddr, bytes: Vec<u8> },
    /// Send from the resolver-facing socket.
    DnsSend { to: SocketAddr, bytes: Vec<u8> },
    /// Write to an association's control stream.
    ControlSend { assoc: AssocId, bytes: Vec<u8> },
    /// Close an association's control stream.
    ControlClose { assoc: AssocId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RelayState {
    Resolving,
    Forwarded,
    RetryReplayed,
    Relaying,
    Drained,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProxyMetrics {
    pub relays_created: u64,
    pub dns_timeouts: u64,
    pub retries_replayed: u64,
    pub dropped_auth: u64,
    pub dropped_malformed: u64,
    pub dropped_table_full: u64,
    pub dropped_unmatched: u64,
    pub relays_reaped: u64,
}

struct Association {
    client_ip: IpAddr,
    negotiator: Option<ServerNegotiator>,
    negotiated: bool,
}

struct Relay {
    client_scid: ConnectionId,
    server_name: String,
    port: u16,
    resolved: Option<SocketAddr>,
    cached_initial: Vec<u8>,
    state: RelayState,
    last_activity_ms: f64,
    last_client_addr: SocketAddr,
}

type RelayKey = (AssocId, ConnectionId);

pub struct ProxyEngine {
    cfg: ProxyConfig,
    resolver: StubResolver,
    assocs: BTreeMap<AssocId, Association>,
    next_assoc: u64,
    relays: BTreeMap<RelayKey, Relay>,
    dns_to_relay: BTreeMap<u16, RelayKey>,
    actions: VecDeque<ProxyAction>,
    metrics: ProxyMetrics,
}

impl ProxyEngine {
    pub fn new(cfg: ProxyConfig) -> Self {
        let resolver = StubResolver::new(
            cfg.upstream_dns,
            cfg.dns_timeout_ms,
            cfg.dns_retries,
            cfg.seed,
        );
        ProxyEngine {
            cfg,
            resolver,
            assocs: BTreeMap::new(),
            next_assoc: 0,
            relays: BTreeMap::new(),
            dns_to_relay: BTreeMap::new(),
            actions: VecDeque::new(),
            metrics: ProxyMetrics::default(),
        }
    }

    fn alloc_assoc(&mut self, assoc: Association) -> AssocId {
        let id = AssocId(self.next_assoc);
        self.next_assoc += 1;
        self.assocs.insert(id, assoc);
        id
    }

    /// A control connection arrived; SOCKS negotiation runs over
    /// [`Self::on_control_bytes`].
    pub fn on_control_open(&mut self, peer: SocketAddr) -> AssocId {
        self.alloc_assoc(Association {
            client_ip: peer.ip(),
            negotiator: Some(ServerNegotiator::new(self.cfg.relay_advertise)),
            negotiated: false,
        })
    }

    /// Registers an already-negotiated association, as a warm start or a
    /// stand-in for the control channel where none exists.
    pub fn preregister_association(&mut self, client_ip: IpAddr) -> AssocId {
        self.alloc_assoc(Association {
            client_ip,
            negotiator: None,
            negotiated: true,
        })
    }

    pub fn on_control_bytes(&mut self, assoc: AssocId, bytes: &[u8]) {
        let Some(entry) = self.assocs.get_mut(&assoc) else {
            return;
        };
        let Some(negotiator) = entry.negotiator.as_mut() else {
            return;
        };
        match negotiator.on_bytes(bytes) {
            Ok((out, status)) => {
                if !out.is_empty() {
                    self.actions.push_back(ProxyAction::ControlSend { assoc, bytes: out });
                }
                if let NegotiationStatus::Complete(_declared) = status {
                    // The declared address is allowed to be all-zeros and is
                    // ignored either way; source IP is the credential.
                    entry.negotiated = true;
                    entry.negotiator = None;
                }
            }
            Err((out, _err)) => {
                if !out.is_empty() {
                    self.actions.push_back(ProxyAction::ControlSend { assoc, bytes: out });
                }
                self.actions.push_back(ProxyAction::ControlClose { assoc });
                self.drop_association(assoc);
            }
        }
    }

    pub fn on_control_closed(&mut self, assoc: AssocId) {
        self.drop_association(assoc);
    }

    fn drop_association(&mut self, assoc: AssocId) {
        self.assocs.remove(&assoc);
        let keys: Vec<RelayKey> = self
            .relays
            .keys()
            .filter(|(a, _)| *a == assoc)
            .copied()
            .collect();
        for key in keys {
            self.remove_relay(key);
        }
    }

    fn remove_relay(&mut self, key: RelayKey) {
        self.relays.remove(&key);
        self.dns_to_relay.retain(|_, v| *v != key);
    }

    /// Datagram on the client-facing relay socket.
    pub fn on_relay_datagram(&mut self, from: SocketAddr, bytes: &[u8], now_ms: f64) {
        // Newest association wins when one client IP holds several; an
        // association mid-teardown must not swallow a successor's packets.
        let Some(assoc) = self
            .assocs
            .iter()
            .rev()
            .find(|(_, a)| a.negotiated && a.client_ip == from.ip())
            .map(|(&id, _)| id)
        else {
            self.metrics.dropped_auth += 1;
            return;
        };
        let Ok((header, payload)) = decode_udp_header(bytes) else {
            self.metrics.dropped_malformed += 1;
            return;
        };
        if payload.is_empty() {
            self.metrics.dropped_malformed += 1;
            return;
        }
        match header.dst {
            SocksAddress::Domain(ref name, port) => {
                self.on_domain_initial(assoc, name.clone(), port, from, payload, now_ms)
            }
            ref addr => {
                let to = addr.socket_addr().expect("v4/v6 always concrete");
                // The client already knows the server address; forward as-is
                // and refresh whichever relay this path belongs to.
                self.actions.push_back(ProxyAction::UpstreamSend {
                    to,
                    bytes: payload.to_vec(),
                });
                for ((a, _), relay) in self.relays.iter_mut() {
                    if *a == assoc && relay.resolved == Some(to) {
                        relay.last_activity_ms = now_ms;
                        relay.last_client_addr = from;
                    }
                }
            }
        }
    }

    fn on_domain_initial(
        &mut self,
        assoc: AssocId,
        name: DomainName,
        port: u16,
        from: SocketAddr,
        payload: &[u8],
        now_ms: f64,
    ) {
        if peek_type(payload) != Ok(PacketType::Initial) {
            self.metrics.dropped_malformed += 1;
            return;
        }
        let Ok(packet) = decode_packet(payload) else {
            self.metrics.dropped_malformed += 1;
            return;
        };
        let (Some(dcid), Some(scid)) = (packet.dcid, packet.scid) else {
            self.metrics.dropped_malformed += 1;
            return;
        };
        let server_name = match std::str::from_utf8(name.as_bytes()) {
            Ok(s) if validate_name(s).is_ok() => s.to_ascii_lowercase(),
            _ => {
                self.metrics.dropped_malformed += 1;
                return;
            }
        };
        let key = (assoc, dcid);
        if let Some(relay) = self.relays.get_mut(&key) {
            relay.last_activity_ms = now_ms;
            relay.last_client_addr = from;
            match relay.state {
                // Client retransmit while we wait on DNS: refresh the cache,
                // never a second query.
                RelayState::Resolving => relay.cached_initial = payload.to_vec(),
                _ => {
                    if let Some(resolved) = relay.resolved {
                        self.actions.push_back(ProxyAction::UpstreamSend {
                            to: resolved,
                            bytes: payload.to_vec(),
                        });
                    }
                }
            }
            return;
        }
        if self.relays.len() >= self.cfg.max_relays {
            self.metrics.dropped_table_full += 1;
            return;
        }
        let qtype = if self.cfg.prefer_v4 { QType::A } else { QType::Aaaa };
        let id = match self.resolver.start_query(&server_name, qtype, now_ms) {
            Ok(id) => id,
            Err(_) => {
                self.metrics.dropped_malformed += 1;
                return;
            }
        };
        self.dns_to_relay.insert(id, key);
        self.relays.insert(
            key,
            Relay {
                client_scid: scid,
                server_name,
                port,
                resolved: None,
                cached_initial: payload.to_vec(),
                state: RelayState::Resolving,
                last_activity_ms: now_ms,
                last_client_addr: from,
            },
        );
        self.metrics.relays_created += 1;
        self.drain_resolver(now_ms);
    }

    /// Datagram on the server-facing socket.
    pub fn on_upstream_datagram(&mut self, from: SocketAddr, bytes: &[u8], now_ms: f64) {
        let Ok(packet) = decode_packet(bytes) else {
            self.metrics.dropped_malformed += 1;
            return;
        };
        let Some(dcid) = packet.dcid else {
            self.metrics.dropped_malformed += 1;
            return;
        };
        // Server-to-client packets carry the client's chosen cid; that plus
        // the source address pins the relay.
        let Some(relay) = self
            .relays
            .values_mut()
            .find(|r| r.resolved == Some(from) && r.client_scid == dcid)
        else {
            self.metrics.dropped_unmatched += 1;
            return;
        };
        relay.last_activity_ms = now_ms;
        if packet.ptype == PacketType::Retry {
            if relay.state != RelayState::Forwarded {
                // A retry after traffic has flowed is a protocol violation.
                self.metrics.dropped_malformed += 1;
                return;
            }
            let Ok(mut cached) = decode_packet(&relay.cached_initial) else {
                self.metrics.dropped_malformed += 1;
                return;
            };
            cached.token = packet.token;
            let replay = encode_packet(&cached).expect("re-encoding a decoded packet");
            let to = relay.resolved.expect("forwarded implies resolved");
            relay.state = RelayState::RetryReplayed;
            self.metrics.retries_replayed += 1;
            self.actions.push_back(ProxyAction::UpstreamSend { to, bytes: replay });
            return;
        }
        let encapsulated = encode_udp_packet(&SocksAddress::from(from), bytes);
        relay.state = RelayState::Relaying;
        relay.cached_initial = Vec::new();
        let to = relay.last_client_addr;
        self.actions.push_back(ProxyAction::RelaySend {
            to,
            bytes: encapsulated,
        });
    }

    /// Datagram on the resolver-facing socket.
    pub fn on_dns_datagram(&mut self, from: SocketAddr, bytes: &[u8], now_ms: f64) {
        self.resolver.on_datagram(from, bytes);
        self.drain_resolver(now_ms);
    }

    /// Clock-driven work: DNS retransmits and expiries, idle relay reaping.
    pub fn on_tick(&mut self, now_ms: f64) {
        self.resolver.on_tick(now_ms);
        self.drain_resolver(now_ms);
        let idle_ms = self.cfg.idle_timeout_s * 1e3;
        let expired: Vec<RelayKey> = self
            .relays
            .iter()
            .filter(|(_, r)| now_ms - r.last_activity_ms > idle_ms)
            .map(|(&k, _)| k)
            .collect();
        for key in expired {
            self.remove_relay(key);
            self.metrics.relays_reaped += 1;
        }
    }

    /// Earliest moment `on_tick` has pending work.
    pub fn next_wake_ms(&self) -> Option<f64> {
        let idle = self
            .relays
            .values()
            .map(|r| r.last_activity_ms + self.cfg.idle_timeout_s * 1e3)
            .min_by(|a, b| a.total_cmp(b));
        match (self.resolver.next_wake_ms(), idle) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn drain_resolver(&mut self, _now_ms: f64) {
        while let Some((to, bytes)) = self.resolver.poll_transmit() {
            self.actions.push_back(ProxyAction::DnsSend { to, bytes });
        }
        while let Some((id, outcome)) = self.resolver.poll_result() {
            let Some(key) = self.dns_to_relay.remove(&id) else {
                continue;
            };
            let Some(relay) = self.relays.get_mut(&key) else {
                continue;
            };
            if relay.state != RelayState::Resolving {
                continue;
            }
            let resolved = match &outcome {
                Ok(res) => res
                    .preferred(self.cfg.prefer_v4)
                    .map(|ip| SocketAddr::new(ip, relay.port)),
                Err(_) => None,
            };
            match resolved {
                Some(resolved) => {
                    relay.resolved = Some(resolved);
                    relay.state = RelayState::Forwarded;
                    self.actions.push_back(ProxyAction::UpstreamSend {
                        to: resolved,
                        bytes: relay.cached_initial.clone(),
                    });
                    if self.cfg.notify == NotifyMode::Early {
                        self.actions.push_back(ProxyAction::RelaySend {
                            to: relay.last_client_addr,
                            bytes: encode_udp_packet(&SocksAddress::from(resolved), &[]),
                        });
                    }
                }
                None => {
                    // Nothing to forward; report the failure as a reply on
                    // the control channel, naming the domain that failed.
                    let code = match outcome {
                        Err(ResolveError::Timeout) => {
                            self.metrics.dns_timeouts += 1;
                            REPLY_NETWORK_UNREACHABLE
                        }
                        _ => REPLY_HOST_UNREACHABLE,
                    };
                    relay.state = RelayState::Drained;
                    let name = DomainName::new(relay.server_name.as_bytes().to_vec())
                        .expect("validated at creation");
                    let dst = SocksAddress::Domain(name, relay.port);
                    self.actions.push_back(ProxyAction::ControlSend {
                        assoc: key.0,
                        bytes: encode_reply(code, &dst),
                    });
                    self.remove_relay(key);
                }
            }
        }
    }

    pub fn poll_action(&mut self) -> Option<ProxyAction> {
        self.actions.pop_front()
    }

    pub fn metrics(&self) -> ProxyMetrics {
        self.metrics
    }

    pub fn metrics_json(&self) -> String {
        serde_json::to_string(&self.metrics).expect("plain counters")
    }

    pub fn relay_count(&self) -> usize {
        self.relays.len()
    }

    pub fn association_count(&self) -> usize {
        self.assocs.len()
    }

    pub fn relay_state(&self, assoc: AssocId, dcid: ConnectionId) -> Option<RelayState> {
        self.relays.get(&(assoc, dcid)).map(|r| r.state)
    }

    pub fn relay_resolved(&self, assoc: AssocId, dcid: ConnectionId) -> Option<SocketAddr> {
        self.relays.get(&(assoc, dcid)).and_then(|r| r.resolved)
    }
}

//! The protocol engines dressed as simulator actors.
//!
//! Each actor owns one sans-I/O engine and translates between simulator
//! datagrams and engine calls. Hosts have one address; roles that need
//! several sockets in real life are told apart by port here.

use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};

use crate::dnskit::{AuthorityServer, ObservedQuery, QType, Resolution, StubResolver};
use crate::miniquic::{
    ClientConfig, ConnEvent, Connection, PathId, ServerConfig, ServerEngine, ServerEvent,
    ServerStats,
};
use crate::netsim::{classify, Actor, Ctx};
use crate::proxy::{AssocId, NotifyMode, ProxyAction, ProxyConfig, ProxyEngine, ProxyMetrics};
use crate::socks::{
    decode_udp_header, encode_udp_packet, ClientNegotiator, DomainName, NegotiationStatus,
    SocksAddress,
};

/// Client QUIC traffic, plain or SOCKS-encapsulated.
pub const CLIENT_QUIC_PORT: u16 = 5000;
/// The client's stub-resolver socket.
pub const CLIENT_DNS_PORT: u16 = 5300;
/// The proxy's client-facing relay socket.
pub const RELAY_PORT: u16 = 1080;
/// The proxy's server-facing socket.
pub const PROXY_UPSTREAM_PORT: u16 = 51080;
/// The proxy's resolver-facing socket.
pub const PROXY_DNS_PORT: u16 = 53530;
/// Resolvers and authoritative responders listen here.
pub const DNS_PORT: u16 = 53;
/// The demo server's QUIC port.
pub const SERVER_PORT: u16 = 4433;

/// [`ServerEngine`] on one simulated socket.
pub struct ServerActor {
    engine: ServerEngine,
    addr: SocketAddr,
    /// Connection-table size right after each RETRY left, for the
    /// statelessness assertion.
    pub conn_count_at_retry: Vec<usize>,
    /// Logical completion time of each handshake.
    pub handshake_times: Vec<f64>,
}

impl ServerActor {
    pub fn new(ip: IpAddr, retry: bool, seed: u64) -> Self {
        ServerActor {
            engine: ServerEngine::new(ServerConfig {
                retry,
                ..ServerConfig::new(seed)
            }),
            addr: SocketAddr::new(ip, SERVER_PORT),
            conn_count_at_retry: Vec::new(),
            handshake_times: Vec::new(),
        }
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> ServerStats {
        self.engine.stats()
    }

    pub fn connection_count(&self) -> usize {
        self.engine.connection_count()
    }

    fn pump(&mut self, ctx: &mut Ctx<'_>) {
        while let Some(tx) = self.engine.poll_transmit() {
            let is_retry = classify(&tx.bytes) == "retry";
            ctx.send(self.addr, tx.to, tx.bytes);
            if is_retry {
                self.conn_count_at_retry.push(self.engine.connection_count());
            }
        }
        while let Some(event) = self.engine.poll_event() {
            if matches!(event, ServerEvent::HandshakeComplete { .. }) {
                self.handshake_times.push(ctx.now_ms());
            }
        }
    }
}

impl Actor for ServerActor {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, _local: SocketAddr, from: SocketAddr, bytes: &[u8]) {
        self.engine.on_datagram(from, bytes, ctx.now_ms());
        self.pump(ctx);
    }
}

/// [`AuthorityServer`] on one simulated socket: answers instantly, logs
/// every query source. Doubles as the recursive-resolver stand-in when the
/// zone holds the records clients ask about.
pub struct ResolverActor {
    server: AuthorityServer,
}

impl ResolverActor {
    pub fn new(server: AuthorityServer) -> Self {
        ResolverActor { server }
    }

    pub fn observations(&self) -> &[ObservedQuery] {
        self.server.observations()
    }
}

impl Actor for ResolverActor {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, local: SocketAddr, from: SocketAddr, bytes: &[u8]) {
        let now = ctx.now_ms();
        if let Some(reply) = self.server.handle(from, bytes, now) {
            ctx.send(local, from, reply);
        }
    }
}

/// A recursive resolver that holds nothing itself: every query goes to the
/// configured upstream, so the upstream's log shows this resolver's address
/// as the query source. Queries are matched to clients by DNS id.
pub struct ForwardingResolverActor {
    addr: SocketAddr,
    upstream: SocketAddr,
    pending: BTreeMap<u16, SocketAddr>,
}

impl ForwardingResolverActor {
    pub fn new(ip: IpAddr, upstream: SocketAddr) -> Self {
        ForwardingResolverActor {
            addr: SocketAddr::new(ip, DNS_PORT),
            upstream,
            pending: BTreeMap::new(),
        }
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Actor for ForwardingResolverActor {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, _local: SocketAddr, from: SocketAddr, bytes: &[u8]) {
        if bytes.len() < 2 {
            return;
        }
        let id = u16::from_be_bytes([bytes[0], bytes[1]]);
        if from == self.upstream {
            if let Some(client) = self.pending.remove(&id) {
                ctx.send(self.addr, client, bytes.to_vec());
            }
        } else {
            self.pending.insert(id, from);
            ctx.send(self.addr, self.upstream, bytes.to_vec());
        }
    }
}

/// [`ProxyEngine`] across three simulated sockets. The control channel has
/// no TCP in the simulator, so associations are negotiated in memory via
/// [`ProxyActor::preregister`] before the run; control output is captured
/// for assertions instead of being written anywhere.
pub struct ProxyActor {
    engine: ProxyEngine,
    ip: IpAddr,
    /// Control bytes pushed toward each association (failure reports).
    pub control_out: Vec<(AssocId, Vec<u8>)>,
    /// Associations the engine asked to close.
    pub closed: Vec<AssocId>,
}

impl ProxyActor {
    pub fn new(ip: IpAddr, resolver: SocketAddr, notify: NotifyMode, seed: u64) -> Self {
        let mut cfg = ProxyConfig::new(SocketAddr::new(ip, RELAY_PORT), resolver);
        cfg.notify = notify;
        cfg.seed = seed;
        ProxyActor {
            engine: ProxyEngine::new(cfg),
            ip,
            control_out: Vec::new(),
            closed: Vec::new(),
        }
    }

    pub fn relay_addr(&self) -> SocketAddr {
        SocketAddr::new(self.ip, RELAY_PORT)
    }

    pub fn metrics(&self) -> ProxyMetrics {
        self.engine.metrics()
    }

    /// Runs the SOCKS negotiation in memory against a fresh engine. Must be
    /// called before the simulation starts, while no other traffic can be
    /// queued.
    pub fn preregister(&mut self, client: SocketAddr) -> AssocId {
        let assoc = self.engine.on_control_open(client);
        let (mut negotiator, greeting) = ClientNegotiator::new();
        let mut outbound = Some(greeting);
        while let Some(bytes) = outbound.take() {
            self.engine.on_control_bytes(assoc, &bytes);
            while let Some(action) = self.engine.poll_action() {
                match action {
                    ProxyAction::ControlSend { assoc: a, bytes } if a == assoc => {
                        let (reply, status) =
                            negotiator.on_bytes(&bytes).expect("in-memory negotiation");
                        if !reply.is_empty() {
                            outbound = Some(reply);
                        }
                        if let NegotiationStatus::Complete(bound) = status {
                            assert_eq!(bound.port(), RELAY_PORT);
                        }
                    }
                    other => panic!("unexpected action during preregistration: {other:?}"),
                }
            }
        }
        assoc
    }

    fn pump(&mut self, ctx: &mut Ctx<'_>) {
        while let Some(action) = self.engine.poll_action() {
            match action {
                ProxyAction::RelaySend { to, bytes } => {
                    ctx.send(SocketAddr::new(self.ip, RELAY_PORT), to, bytes);
                }
                ProxyAction::UpstreamSend { to, bytes } => {
                    ctx.send(SocketAddr::new(self.ip, PROXY_UPSTREAM_PORT), to, bytes);
                }
                ProxyAction::DnsSend { to, bytes } => {
                    ctx.send(SocketAddr::new(self.ip, PROXY_DNS_PORT), to, bytes);
                }
                ProxyAction::ControlSend { assoc, bytes } => {
                    self.control_out.push((assoc, bytes));
                }
                ProxyAction::ControlClose { assoc } => {
                    self.closed.push(assoc);
                    self.engine.on_control_closed(assoc);
                }
            }
        }
    }
}

impl Actor for ProxyActor {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, local: SocketAddr, from: SocketAddr, bytes: &[u8]) {
        let now = ctx.now_ms();
        match local.port() {
            RELAY_PORT => self.engine.on_relay_datagram(from, bytes, now),
            PROXY_UPSTREAM_PORT => self.engine.on_upstream_datagram(from, bytes, now),
            PROXY_DNS_PORT => self.engine.on_dns_datagram(from, bytes, now),
            _ => {}
        }
        self.pump(ctx);
    }
}

/// How the simulated client reaches its target.
#[derive(Debug, Clone, Copy)]
pub enum ClientPlan {
    /// Resolve through the configured resolver, then handshake directly.
    StatusQuo,
    /// Hand the name to the relay; react to the address notification.
    Proposal { migration: bool, probe_early: bool },
}

/// A single-connection client: optional stub resolution, one handshake,
/// optional migration, one echoed application payload.
pub struct ClientActor {
    plan: ClientPlan,
    quic_addr: SocketAddr,
    dns_addr: SocketAddr,
    resolver: SocketAddr,
    relay: SocketAddr,
    target: DomainName,
    target_port: u16,
    seed: u64,
    app_payload: Option<Vec<u8>>,
    stub: Option<StubResolver>,
    conn: Option<Connection>,
    server_addr: Option<SocketAddr>,
    probe: Option<PathId>,
    migrate_requested: bool,
    /// When the handshake completed (client FIN sent).
    pub t_connect_ms: Option<f64>,
    /// When the address notification arrived (proposal only).
    pub t_notify_ms: Option<f64>,
    /// When the primary path switched.
    pub t_migrate_ms: Option<f64>,
    /// When our own resolution finished (status quo only).
    pub t_resolved_ms: Option<f64>,
    /// When the echoed payload came back.
    pub t_echo_ms: Option<f64>,
    pub echoed: Option<Vec<u8>>,
    pub resolve_error: Option<String>,
}

impl ClientActor {
    pub fn new(
        plan: ClientPlan,
        ip: IpAddr,
        resolver: SocketAddr,
        relay: SocketAddr,
        target: &str,
        target_port: u16,
        seed: u64,
    ) -> Self {
        ClientActor {
            plan,
            quic_addr: SocketAddr::new(ip, CLIENT_QUIC_PORT),
            dns_addr: SocketAddr::new(ip, CLIENT_DNS_PORT),
            resolver,
            relay,
            target: DomainName::new(target.as_bytes().to_vec()).expect("target name"),
            target_port,
            seed,
            app_payload: None,
            stub: None,
            conn: None,
            server_addr: None,
            probe: None,
            migrate_requested: false,
            t_connect_ms: None,
            t_notify_ms: None,
            t_migrate_ms: None,
            t_resolved_ms: None,
            t_echo_ms: None,
            echoed: None,
            resolve_error: None,
        }
    }

    /// Queues a payload to send once the connection is ready: after
    /// migration when migrating, right after the handshake otherwise.
    pub fn with_app_payload(mut self, payload: &[u8]) -> Self {
        self.app_payload = Some(payload.to_vec());
        self
    }

    pub fn quic_addr(&self) -> SocketAddr {
        self.quic_addr
    }

    pub fn connection(&self) -> Option<&Connection> {
        self.conn.as_ref()
    }

    fn proxied(&self) -> bool {
        matches!(self.plan, ClientPlan::Proposal { .. })
    }

    fn start_handshake(&mut self, remote: SocketAddr, now: f64, ctx: &mut Ctx<'_>) {
        let mut conn = Connection::new(ClientConfig {
            server_name: self.target.clone(),
            remote,
            seed: self.seed,
        });
        conn.start(now);
        self.conn = Some(conn);
        self.flush(ctx);
    }

    fn flush(&mut self, ctx: &mut Ctx<'_>) {
        let proxied = self.proxied();
        let (quic_addr, relay) = (self.quic_addr, self.relay);
        let wrap_dst = match self.server_addr {
            Some(addr) => SocksAddress::from(addr),
            None => SocksAddress::Domain(self.target.clone(), self.target_port),
        };
        let Some(conn) = self.conn.as_mut() else {
            return;
        };
        while let Some(tx) = conn.poll_transmit() {
            if proxied && tx.to == relay {
                ctx.send(quic_addr, relay, encode_udp_packet(&wrap_dst, &tx.bytes));
            } else {
                ctx.send(quic_addr, tx.to, tx.bytes);
            }
        }
    }

    fn on_address_known(&mut self, addr: SocketAddr, ctx: &mut Ctx<'_>) {
        if self.server_addr.is_none() {
            self.server_addr = Some(addr);
            if self.t_notify_ms.is_none() {
                self.t_notify_ms = Some(ctx.now_ms());
            }
        }
        let ClientPlan::Proposal {
            migration: true,
            probe_early,
        } = self.plan
        else {
            return;
        };
        let handshake_done = self.t_connect_ms.is_some();
        let now = ctx.now_ms();
        let Some(conn) = self.conn.as_mut() else {
            return;
        };
        match self.probe {
            None if probe_early || handshake_done => {
                self.probe = conn.probe_path(addr, now).ok();
            }
            // An early probe can race the server's connection setup (a
            // retry delays it); refresh the challenge once the handshake
            // is done and the path still is not validated.
            Some(id) if handshake_done && !self.migrate_requested && !conn.path_validated(id) => {
                let _ = conn.probe_path(addr, now);
            }
            _ => {}
        }
        if handshake_done && !self.migrate_requested {
            if let Some(id) = self.probe {
                let _ = conn.migrate_to(id, now);
                self.migrate_requested = true;
            }
        }
    }

    fn drain_events(&mut self, ctx: &mut Ctx<'_>) {
        loop {
            let Some(event) = self.conn.as_mut().and_then(|c| c.poll_event()) else {
                break;
            };
            let now = ctx.now_ms();
            match event {
                ConnEvent::HandshakeComplete => {
                    self.t_connect_ms = Some(now);
                    match self.plan {
                        ClientPlan::Proposal { migration: true, .. } => {
                            if let Some(addr) = self.server_addr {
                                self.on_address_known(addr, ctx);
                            }
                        }
                        _ => self.send_payload(now),
                    }
                }
                ConnEvent::MigrationComplete { .. } => {
                    self.t_migrate_ms = Some(now);
                    self.send_payload(now);
                }
                ConnEvent::AppData(data) => {
                    self.t_echo_ms = Some(now);
                    self.echoed = Some(data);
                }
                ConnEvent::Retry | ConnEvent::PathValidated { .. } | ConnEvent::Closed(_) => {}
            }
            self.flush(ctx);
        }
    }

    fn send_payload(&mut self, now: f64) {
        if let (Some(payload), Some(conn)) = (self.app_payload.take(), self.conn.as_mut()) {
            let _ = conn.send_app_data(&payload, now);
        }
    }
}

impl Actor for ClientActor {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        let now = ctx.now_ms();
        match self.plan {
            ClientPlan::StatusQuo => {
                let mut stub = StubResolver::new(self.resolver, 1_000.0, 2, self.seed);
                let name = String::from_utf8_lossy(self.target.as_bytes()).into_owned();
                stub.start_query(&name, QType::A, now).expect("valid name");
                while let Some((to, bytes)) = stub.poll_transmit() {
                    ctx.send(self.dns_addr, to, bytes);
                }
                self.stub = Some(stub);
            }
            ClientPlan::Proposal { .. } => {
                self.start_handshake(self.relay, now, ctx);
            }
        }
    }

    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, local: SocketAddr, from: SocketAddr, bytes: &[u8]) {
        let now = ctx.now_ms();
        if local == self.dns_addr {
            let Some(stub) = self.stub.as_mut() else {
                return;
            };
            stub.on_datagram(from, bytes);
            while let Some((to, out)) = stub.poll_transmit() {
                ctx.send(self.dns_addr, to, out);
            }
            if let Some((_, outcome)) = stub.poll_result() {
                match outcome {
                    Ok(Resolution { addrs, .. }) if !addrs.is_empty() => {
                        self.t_resolved_ms = Some(now);
                        let server = SocketAddr::new(addrs[0], self.target_port);
                        self.server_addr = Some(server);
                        self.start_handshake(server, now, ctx);
                    }
                    Ok(_) => self.resolve_error = Some("empty answer".to_owned()),
                    Err(e) => self.resolve_error = Some(e.to_string()),
                }
            }
            return;
        }
        if self.proxied() && from == self.relay {
            let Ok((header, payload)) = decode_udp_header(bytes) else {
                return;
            };
            let Some(addr) = header.dst.socket_addr() else {
                return;
            };
            self.on_address_known(addr, ctx);
            if !payload.is_empty() {
                let payload = payload.to_vec();
                if let Some(conn) = self.conn.as_mut() {
                    conn.on_datagram(addr, &payload, now);
                }
                self.drain_events(ctx);
            }
            self.flush(ctx);
            return;
        }
        if let Some(conn) = self.conn.as_mut() {
            conn.on_datagram(from, bytes, now);
        }
        self.drain_events(ctx);
        self.flush(ctx);
    }
}

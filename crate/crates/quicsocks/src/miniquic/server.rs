//! Server-side engine: many connections behind one socket, stateless retry,
//! and the unvalidated-path send budget.
//!
//! Sans-I/O like the client [`Connection`](super::Connection): datagrams and
//! a clock in, transmits and events out.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::SocketAddr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::conn::{Phase, Transmit};
use super::crypto;
use super::token::{issue_retry, validate_token, TokenReject};
use super::wire::{
    decode_packet, encode_frames, encode_packet, ConnectionId, Frame, Packet, PacketType,
};
use super::{DEFAULT_TOKEN_FRESHNESS_MS, MAX_DATAGRAM_SIZE};

/// Most packets the server may send to an address it has not validated,
/// counted until a PATH_RESPONSE from that address arrives.
pub const UNVALIDATED_SEND_BUDGET: u32 = 3;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Demand address validation: answer tokenless INITIALs with RETRY.
    pub retry: bool,
    /// Token freshness window.
    pub freshness_ms: u64,
    /// Answer APPDATA with an echo of the same bytes.
    pub echo: bool,
    /// Seeds the token key and all per-connection randomness.
    pub seed: u64,
}

impl ServerConfig {
    pub fn new(seed: u64) -> Self {
        ServerConfig {
            retry: true,
            freshness_ms: DEFAULT_TOKEN_FRESHNESS_MS,
            echo: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerEvent {
    /// A connection was created for a validated (or retry-off) INITIAL.
    Accepted { conn: ConnectionId },
    /// The client FIN verified; application data may flow.
    HandshakeComplete { conn: ConnectionId },
    /// The client FIN did not verify; the connection is closed.
    HandshakeFailed { conn: ConnectionId },
    AppData {
        conn: ConnectionId,
        from: SocketAddr,
        data: Vec<u8>,
    },
    /// An address answered our PATH_CHALLENGE correctly.
    PathValidated { conn: ConnectionId, addr: SocketAddr },
}

/// Counters for everything the engine drops or suppresses. Token rejections
/// are deliberately silent on the wire; they only show up here.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub retries_sent: u64,
    pub tokens_rejected_bad_mac: u64,
    pub tokens_rejected_address_mismatch: u64,
    pub tokens_rejected_stale: u64,
    pub duplicate_initials: u64,
    pub malformed_dropped: u64,
    pub unknown_conn_dropped: u64,
    pub stale_pn_dropped: u64,
    pub budget_suppressed: u64,
    pub oversize_dropped: u64,
}

struct ServerConn {
    scid: ConnectionId,
    client_cid: ConnectionId,
    handshake_remote: SocketAddr,
    phase: Phase,
    forward_secure_key: [u8; 32],
    expected_client_fin: [u8; 32],
    /// Cached first flight, re-sent if the handshake INITIAL is duplicated.
    first_flight: Vec<u8>,
    next_pn: u32,
    /// Highest packet number seen, one window per packet type: the FIN and
    /// a direct-path probe can cross in flight when they travel different
    /// paths.
    highest_rx_handshake_pn: Option<u32>,
    highest_rx_one_rtt_pn: Option<u32>,
    validated: BTreeSet<SocketAddr>,
    pending_challenge: BTreeMap<SocketAddr, [u8; 8]>,
    unvalidated_sent: BTreeMap<SocketAddr, u32>,
}

pub struct ServerEngine {
    cfg: ServerConfig,
    token_key: [u8; 32],
    rng: ChaCha20Rng,
    /// Connections keyed by the server-chosen CID, which is the DCID of
    /// post-handshake client packets.
    conns: BTreeMap<ConnectionId, ServerConn>,
    /// Client CID -> server CID, for INITIAL dedupe and for ONE_RTT packets
    /// sent before the client has adopted the server CID (early probes).
    by_client_cid: BTreeMap<ConnectionId, ConnectionId>,
    transmits: VecDeque<Transmit>,
    events: VecDeque<ServerEvent>,
    stats: ServerStats,
    max_unvalidated_burst: u32,
}

impl ServerEngine {
    pub fn new(cfg: ServerConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let mut token_key = [0u8; 32];
        rng.fill_bytes(&mut token_key);
        ServerEngine {
            cfg,
            token_key,
            rng,
            conns: BTreeMap::new(),
            by_client_cid: BTreeMap::new(),
            transmits: VecDeque::new(),
            events: VecDeque::new(),
            stats: ServerStats::default(),
            max_unvalidated_burst: 0,
        }
    }

    /// The server-lifetime token secret; exposed so tests can mint tokens.
    pub fn token_key(&self) -> &[u8; 32] {
        &self.token_key
    }

    /// Per-connection state store size. The statelessness property is
    /// asserted against this: it must not change while a tokenless INITIAL
    /// is answered with RETRY.
    pub fn connection_count(&self) -> usize {
        self.conns.len()
    }

    pub fn stats(&self) -> ServerStats {
        self.stats
    }

    /// Highest number of packets ever in flight to one unvalidated address.
    pub fn max_unvalidated_burst(&self) -> u32 {
        self.max_unvalidated_burst
    }

    pub fn phase(&self, conn: &ConnectionId) -> Option<Phase> {
        self.conns.get(conn).map(|c| c.phase)
    }

    pub fn forward_secure_key(&self, conn: &ConnectionId) -> Option<[u8; 32]> {
        self.conns.get(conn).map(|c| c.forward_secure_key)
    }

    pub fn is_validated(&self, conn: &ConnectionId, addr: SocketAddr) -> bool {
        self.conns
            .get(conn)
            .map(|c| c.validated.contains(&addr))
            .unwrap_or(false)
    }

    pub fn poll_transmit(&mut self) -> Option<Transmit> {
        self.transmits.pop_front()
    }

    pub fn poll_event(&mut self) -> Option<ServerEvent> {
        self.events.pop_front()
    }

    pub fn on_datagram(&mut self, from: SocketAddr, buf: &[u8], now_ms: f64) {
        let packet = match decode_packet(buf) {
            Ok(p) => p,
            Err(_) => {
                self.stats.malformed_dropped += 1;
                return;
            }
        };
        match packet.ptype {
            PacketType::Initial => self.on_initial(packet, from, now_ms),
            PacketType::Handshake => self.on_client_fin(packet),
            PacketType::OneRtt => self.on_one_rtt(packet, from),
            PacketType::Retry => {
                self.stats.malformed_dropped += 1;
            }
        }
    }

    fn on_initial(&mut self, packet: Packet, from: SocketAddr, now_ms: f64) {
        let Some(client_cid) = packet.scid else {
            self.stats.malformed_dropped += 1;
            return;
        };
        let Some(client_random) = initial_client_random(&packet) else {
            self.stats.malformed_dropped += 1;
            return;
        };
        if packet.token.is_empty() {
            if self.cfg.retry {
                // Stateless: nothing below touches the connection store or
                // the engine rng, and the token is a pure function of inputs.
                let retry = Packet {
                    ptype: PacketType::Retry,
                    dcid: Some(client_cid),
                    scid: None,
                    token: issue_retry(&self.token_key, from, now_ms),
                    packet_number: 0,
                    payload: Vec::new(),
                };
                self.stats.retries_sent += 1;
                self.queue_unbudgeted(from, &retry);
                return;
            }
        } else {
            match validate_token(&self.token_key, &packet.token, from, now_ms, self.cfg.freshness_ms)
            {
                Ok(_) => {}
                Err(reject) => {
                    // Silent drop: answering would hand attackers an oracle
                    // and a reflector.
                    match reject {
                        TokenReject::BadMac => self.stats.tokens_rejected_bad_mac += 1,
                        TokenReject::AddressMismatch => {
                            self.stats.tokens_rejected_address_mismatch += 1
                        }
                        TokenReject::Stale => self.stats.tokens_rejected_stale += 1,
                    }
                    return;
                }
            }
        }
        if let Some(scid) = self.by_client_cid.get(&client_cid).copied() {
            self.stats.duplicate_initials += 1;
            let conn = &self.conns[&scid];
            if conn.handshake_remote == from {
                let flight = conn.first_flight.clone();
                self.transmits.push_back(Transmit { to: from, bytes: flight });
            }
            return;
        }
        let scid = ConnectionId::random(&mut self.rng);
        let mut server_random = [0u8; 32];
        self.rng.fill_bytes(&mut server_random);
        let mut transcript = packet.payload.clone();
        let sh_bytes = encode_frames(&[Frame::ServerHello { random: server_random }]);
        transcript.extend_from_slice(&sh_bytes);
        let key = crypto::derive_forward_secure_key(&client_random, &server_random);
        let server_fin = crypto::transcript_mac(&key, &transcript);
        let sfin_bytes = encode_frames(&[Frame::Fin { mac: server_fin }]);
        transcript.extend_from_slice(&sfin_bytes);
        let expected_client_fin = crypto::transcript_mac(&key, &transcript);
        let mut payload = sh_bytes;
        payload.extend_from_slice(&sfin_bytes);
        let flight = Packet {
            ptype: PacketType::Handshake,
            dcid: Some(client_cid),
            scid: Some(scid),
            token: Vec::new(),
            packet_number: 0,
            payload,
        };
        let flight_bytes = encode_packet(&flight).expect("internally built packets encode");
        let mut validated = BTreeSet::new();
        // The handshake address is validated: by the token when retry is on,
        // implicitly by the handshake round trip otherwise.
        validated.insert(from);
        self.conns.insert(
            scid,
            ServerConn {
                scid,
                client_cid,
                handshake_remote: from,
                phase: Phase::HandshakeKeysReady,
                forward_secure_key: key,
                expected_client_fin,
                first_flight: flight_bytes.clone(),
                next_pn: 1,
                highest_rx_handshake_pn: Some(packet.packet_number),
                highest_rx_one_rtt_pn: None,
                validated,
                pending_challenge: BTreeMap::new(),
                unvalidated_sent: BTreeMap::new(),
            },
        );
        self.by_client_cid.insert(client_cid, scid);
        self.events.push_back(ServerEvent::Accepted { conn: scid });
        self.transmits.push_back(Transmit { to: from, bytes: flight_bytes });
    }

    fn on_client_fin(&mut self, packet: Packet) {
        let Some(scid) = packet.dcid else {
            self.stats.malformed_dropped += 1;
            return;
        };
        let Some(conn) = self.conns.get_mut(&scid) else {
            self.stats.unknown_conn_dropped += 1;
            return;
        };
        if conn.phase == Phase::Closed {
            return;
        }
        if !accept_pn(&mut conn.highest_rx_handshake_pn, packet.packet_number) {
            self.stats.stale_pn_dropped += 1;
            return;
        }
        let Ok(frames) = packet.frames() else {
            self.stats.malformed_dropped += 1;
            return;
        };
        let Some(Frame::Fin { mac }) = frames
            .into_iter()
            .find(|f| matches!(f, Frame::Fin { .. }))
        else {
            self.stats.malformed_dropped += 1;
            return;
        };
        if conn.phase != Phase::HandshakeKeysReady {
            return;
        }
        if mac == conn.expected_client_fin {
            conn.phase = Phase::ForwardSecure;
            self.events
                .push_back(ServerEvent::HandshakeComplete { conn: scid });
        } else {
            conn.phase = Phase::Closed;
            self.events
                .push_back(ServerEvent::HandshakeFailed { conn: scid });
        }
    }

    fn on_one_rtt(&mut self, packet: Packet, from: SocketAddr) {
        // Route by DCID; fall back to the client CID for packets sent before
        // the client adopted our CID (early path probes).
        let scid = match packet.dcid.filter(|d| self.conns.contains_key(d)) {
            Some(d) => d,
            None => match packet.scid.and_then(|c| self.by_client_cid.get(&c)).copied() {
                Some(s) => s,
                None => {
                    self.stats.unknown_conn_dropped += 1;
                    return;
                }
            },
        };
        let conn = self.conns.get_mut(&scid).expect("routed above");
        if conn.phase == Phase::Closed {
            return;
        }
        if !accept_pn(&mut conn.highest_rx_one_rtt_pn, packet.packet_number) {
            self.stats.stale_pn_dropped += 1;
            return;
        }
        let Ok(frames) = packet.frames() else {
            self.stats.malformed_dropped += 1;
            return;
        };
        let mut reply = Vec::new();
        // A known connection spoken from a new source: challenge that
        // address before trusting it with more than the budget.
        if !conn.validated.contains(&from) && !conn.pending_challenge.contains_key(&from) {
            let mut data = [0u8; 8];
            self.rng.fill_bytes(&mut data);
            conn.pending_challenge.insert(from, data);
            reply.push(Frame::PathChallenge { data });
        }
        let mut acked = false;
        for frame in frames {
            match frame {
                Frame::PathChallenge { data } => {
                    reply.push(Frame::PathResponse { data });
                }
                Frame::PathResponse { data } => {
                    if conn.pending_challenge.get(&from) == Some(&data) {
                        conn.pending_challenge.remove(&from);
                        conn.unvalidated_sent.remove(&from);
                        conn.validated.insert(from);
                        self.events
                            .push_back(ServerEvent::PathValidated { conn: scid, addr: from });
                    }
                    // A wrong echo leaves the address unvalidated.
                }
                Frame::AppData { data } => {
                    if conn.phase.is_forward_secure() {
                        self.events.push_back(ServerEvent::AppData {
                            conn: scid,
                            from,
                            data: data.clone(),
                        });
                        if self.cfg.echo {
                            reply.push(Frame::AppData { data });
                        }
                        acked = true;
                    } else {
                        self.stats.malformed_dropped += 1;
                    }
                }
                Frame::Ping => acked = true,
                Frame::Ack { .. } => {}
                Frame::ClientHello { .. } | Frame::ServerHello { .. } | Frame::Fin { .. } => {
                    self.stats.malformed_dropped += 1;
                }
            }
        }
        if acked {
            reply.push(Frame::Ack {
                largest: packet.packet_number,
            });
        }
        if !reply.is_empty() {
            let pn = conn.next_pn;
            conn.next_pn += 1;
            let out = Packet {
                ptype: PacketType::OneRtt,
                dcid: Some(conn.client_cid),
                scid: Some(conn.scid),
                token: Vec::new(),
                packet_number: pn,
                payload: encode_frames(&reply),
            };
            self.queue_budgeted(scid, from, &out);
        }
    }

    /// Send path for stateless responses (RETRY), which are exempt from the
    /// per-connection budget because no connection exists.
    fn queue_unbudgeted(&mut self, to: SocketAddr, packet: &Packet) {
        let bytes = encode_packet(packet).expect("internally built packets encode");
        if bytes.len() > MAX_DATAGRAM_SIZE {
            self.stats.oversize_dropped += 1;
            return;
        }
        self.transmits.push_back(Transmit { to, bytes });
    }

    /// Send path for per-connection packets: counts sends to unvalidated
    /// addresses and suppresses anything past the budget.
    fn queue_budgeted(&mut self, scid: ConnectionId, to: SocketAddr, packet: &Packet) {
        let conn = self.conns.get_mut(&scid).expect("caller routed the connection");
        if !conn.validated.contains(&to) {
            let sent = conn.unvalidated_sent.entry(to).or_insert(0);
            if *sent >= UNVALIDATED_SEND_BUDGET {
                self.stats.budget_suppressed += 1;
                return;
            }
            *sent += 1;
            self.max_unvalidated_burst = self.max_unvalidated_burst.max(*sent);
        }
        let bytes = encode_packet(packet).expect("internally built packets encode");
        if bytes.len() > MAX_DATAGRAM_SIZE {
            self.stats.oversize_dropped += 1;
            return;
        }
        self.transmits.push_back(Transmit { to, bytes });
    }
}

fn initial_client_random(packet: &Packet) -> Option<[u8; 32]> {
    let frames = packet.frames().ok()?;
    frames.iter().find_map(|f| match f {
        Frame::ClientHello { random, .. } => Some(*random),
        _ => None,
    })
}

fn accept_pn(highest: &mut Option<u32>, pn: u32) -> bool {
    if highest.map_or(false, |h| pn <= h) {
        return false;
    }
    *highest = Some(pn);
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miniquic::conn::{ClientConfig, ConnEvent, Connection};
    use crate::socks::DomainName;
    use std::str::FromStr;

    const CLIENT: &str = "10.0.0.2:5000";
    const SERVER: &str = "10.0.2.1:4433";

    fn addr(s: &str) -> SocketAddr {
        s.parse().unwrap()
    }

    fn new_client(seed: u64) -> Connection {
        Connection::new(ClientConfig {
            server_name: DomainName::from_str("example.com").unwrap(),
            remote: addr(SERVER),
            seed,
        })
    }

    /// Shuttle datagrams between one client and the engine until quiescent.
    fn pump(client: &mut Connection, server: &mut ServerEngine, now_ms: f64) {
        loop {
            let mut moved = false;
            while let Some(t) = client.poll_transmit() {
                server.on_datagram(addr(CLIENT), &t.bytes, now_ms);
                moved = true;
            }
            while let Some(t) = server.poll_transmit() {
                assert_eq!(t.to, addr(CLIENT));
                client.on_datagram(addr(SERVER), &t.bytes, now_ms);
                moved = true;
            }
            if !moved {
                break;
            }
        }
    }

    fn events(server: &mut ServerEngine) -> Vec<ServerEvent> {
        std::iter::from_fn(|| server.poll_event()).collect()
    }

    #[test]
    fn tokenless_initial_yields_retry_and_no_state() {
        let mut server = ServerEngine::new(ServerConfig::new(3));
        let mut client = new_client(4);
        client.start(0.0);
        let initial = client.poll_transmit().unwrap();
        server.on_datagram(addr(CLIENT), &initial.bytes, 0.0);
        assert_eq!(server.connection_count(), 0, "retry allocates no state");
        assert_eq!(server.stats().retries_sent, 1);
        assert!(events(&mut server).is_empty());
        let retry = server.poll_transmit().unwrap();
        let packet = decode_packet(&retry.bytes).unwrap();
        assert_eq!(packet.ptype, PacketType::Retry);
        // The token names the observed source.
        let token = validate_token(server.token_key(), &packet.token, addr(CLIENT), 1.0, 30_000)
            .unwrap();
        assert_eq!(token.claimed, addr(CLIENT));
    }

    #[test]
    fn full_handshake_with_retry_agrees_on_keys() {
        let mut server = ServerEngine::new(ServerConfig::new(3));
        let mut client = new_client(4);
        client.start(0.0);
        pump(&mut client, &mut server, 0.0);
        assert!(client.phase().is_forward_secure());
        assert_eq!(client.retry_count(), 1);
        let evs = events(&mut server);
        let conn = evs
            .iter()
            .find_map(|e| match e {
                ServerEvent::Accepted { conn } => Some(*conn),
                _ => None,
            })
            .unwrap();
        assert!(evs.contains(&ServerEvent::HandshakeComplete { conn }));
        assert_eq!(server.phase(&conn), Some(Phase::ForwardSecure));
        assert_eq!(
            server.forward_secure_key(&conn),
            client.forward_secure_key(),
            "both sides derive the same forward-secure key"
        );
        assert_eq!(server.connection_count(), 1);
    }

    #[test]
    fn replayed_initial_preserves_clienthello_bytes() {
        let mut server = ServerEngine::new(ServerConfig::new(3));
        let mut client = new_client(4);
        client.start(0.0);
        let original = client.poll_transmit().unwrap().bytes;
        server.on_datagram(addr(CLIENT), &original, 0.0);
        let retry = server.poll_transmit().unwrap().bytes;
        client.on_datagram(addr(SERVER), &retry, 10.0);
        let replay = client.poll_transmit().unwrap().bytes;
        let original = decode_packet(&original).unwrap();
        let replay = decode_packet(&replay).unwrap();
        assert_eq!(replay.payload, original.payload, "clienthello bytes identical");
        assert!(original.token.is_empty());
        assert!(!replay.token.is_empty());
        server.on_datagram(addr(CLIENT), &encode_packet(&replay).unwrap(), 10.0);
        assert_eq!(server.connection_count(), 1, "token-bearing replay accepted");
    }

    #[test]
    fn tampered_or_misaddressed_tokens_are_dropped_silently() {
        let mut server = ServerEngine::new(ServerConfig::new(3));
        let mut client = new_client(4);
        client.start(0.0);
        let initial = client.poll_transmit().unwrap().bytes;
        server.on_datagram(addr(CLIENT), &initial, 0.0);
        let retry = server.poll_transmit().unwrap().bytes;
        client.on_datagram(addr(SERVER), &retry, 1.0);
        let replay = client.poll_transmit().unwrap().bytes;

        // Flip one token byte.
        let mut packet = decode_packet(&replay).unwrap();
        packet.token[0] ^= 0xFF;
        server.on_datagram(addr(CLIENT), &encode_packet(&packet).unwrap(), 2.0);
        assert_eq!(server.connection_count(), 0);
        assert_eq!(server.stats().tokens_rejected_bad_mac, 1);
        assert!(server.poll_transmit().is_none(), "rejection is silent");

        // Genuine token from the wrong source.
        server.on_datagram(addr("10.0.0.9:5000"), &replay, 2.0);
        assert_eq!(server.connection_count(), 0);
        assert_eq!(server.stats().tokens_rejected_address_mismatch, 1);

        // Genuine token, too old.
        server.on_datagram(addr(CLIENT), &replay, 40_000.0);
        assert_eq!(server.stats().tokens_rejected_stale, 1);
        assert_eq!(server.connection_count(), 0);
    }

    #[test]
    fn retry_off_answers_initial_directly() {
        let mut server = ServerEngine::new(ServerConfig {
            retry: false,
            ..ServerConfig::new(5)
        });
        let mut client = new_client(6);
        client.start(0.0);
        pump(&mut client, &mut server, 0.0);
        assert!(client.phase().is_forward_secure());
        assert_eq!(client.retry_count(), 0);
        assert_eq!(server.stats().retries_sent, 0);
        assert_eq!(server.connection_count(), 1);
    }

    #[test]
    fn echo_round_trip_carries_ack() {
        let mut server = ServerEngine::new(ServerConfig::new(5));
        let mut client = new_client(6);
        client.start(0.0);
        pump(&mut client, &mut server, 0.0);
        while client.poll_event().is_some() {}
        client.send_app_data(b"hello around", 100.0).unwrap();
        pump(&mut client, &mut server, 160.0);
        let got: Vec<_> = std::iter::from_fn(|| client.poll_event()).collect();
        assert!(got.contains(&ConnEvent::AppData(b"hello around".to_vec())));
        assert_eq!(client.rtt().latest_ms(), Some(60.0), "echo ack samples rtt");
    }

    #[test]
    fn duplicate_initial_re_sends_cached_flight_only_to_same_source() {
        let mut server = ServerEngine::new(ServerConfig {
            retry: false,
            ..ServerConfig::new(5)
        });
        let mut client = new_client(6);
        client.start(0.0);
        let initial = client.poll_transmit().unwrap().bytes;
        server.on_datagram(addr(CLIENT), &initial, 0.0);
        let first = server.poll_transmit().unwrap().bytes;
        server.on_datagram(addr(CLIENT), &initial, 5.0);
        assert_eq!(server.stats().duplicate_initials, 1);
        assert_eq!(server.connection_count(), 1, "no second connection");
        let again = server.poll_transmit().unwrap().bytes;
        assert_eq!(first, again, "cached flight replayed");
        // Same client CID from another address gets nothing.
        server.on_datagram(addr("10.0.9.9:1"), &initial, 6.0);
        assert!(server.poll_transmit().is_none());
    }

    #[test]
    fn new_source_is_challenged_and_budget_capped() {
        let mut server = ServerEngine::new(ServerConfig {
            retry: false,
            ..ServerConfig::new(5)
        });
        let mut client = new_client(6);
        client.start(0.0);
        pump(&mut client, &mut server, 0.0);
        let rebound = addr("10.0.7.7:7000");
        // The same client speaks from a new address but never answers the
        // server's challenge.
        for i in 0..5 {
            client.send_app_data(format!("n{i}").as_bytes(), 10.0).unwrap();
            let t = client.poll_transmit().unwrap();
            server.on_datagram(rebound, &t.bytes, 10.0);
        }
        let mut to_rebound = 0;
        let mut challenged = false;
        while let Some(t) = server.poll_transmit() {
            if t.to == rebound {
                to_rebound += 1;
                let packet = decode_packet(&t.bytes).unwrap();
                if packet
                    .frames()
                    .unwrap()
                    .iter()
                    .any(|f| matches!(f, Frame::PathChallenge { .. }))
                {
                    challenged = true;
                }
            }
        }
        assert!(challenged, "server challenges the new source");
        assert_eq!(to_rebound as u32, UNVALIDATED_SEND_BUDGET);
        assert_eq!(server.stats().budget_suppressed, 2);
        assert_eq!(server.max_unvalidated_burst(), UNVALIDATED_SEND_BUDGET);
    }

    #[test]
    fn path_response_validates_rebound_address() {
        let mut server = ServerEngine::new(ServerConfig {
            retry: false,
            ..ServerConfig::new(5)
        });
        let mut client = new_client(6);
        client.start(0.0);
        pump(&mut client, &mut server, 0.0);
        while client.poll_event().is_some() {}
        let rebound = addr("10.0.7.7:7000");
        client.send_app_data(b"moved", 10.0).unwrap();
        let t = client.poll_transmit().unwrap();
        server.on_datagram(rebound, &t.bytes, 10.0);
        // Feed the server's challenge to the client; its response validates
        // the rebound address.
        let challenge = server.poll_transmit().unwrap();
        assert_eq!(challenge.to, rebound);
        client.on_datagram(addr(SERVER), &challenge.bytes, 20.0);
        let response = client.poll_transmit().unwrap();
        server.on_datagram(rebound, &response.bytes, 30.0);
        let evs = events(&mut server);
        let conn = *server.conns.keys().next().unwrap();
        assert!(evs.contains(&ServerEvent::PathValidated { conn, addr: rebound }));
        assert!(server.is_validated(&conn, rebound));
    }
}

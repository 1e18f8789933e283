//! Client connection state machine.
//!
//! Sans-I/O: callers feed datagrams plus a clock reading and drain queued
//! transmits and events. The same machine runs under the deterministic
//! simulator and over real sockets.

use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::crypto;
use super::rtt::RttEstimator;
use super::wire::{decode_packet, encode_frames, encode_packet, ConnectionId, Frame, Packet, PacketType};
use super::MAX_DATAGRAM_SIZE;
use crate::socks::DomainName;

/// Connection lifecycle. The ordering is meaningful: migration transitions
/// are reachable only at `ForwardSecure` or later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Idle,
    InitialSent,
    /// A RETRY was accepted and the initial flight replayed with its token.
    RetryReceived,
    /// Keys derived but the peer's FIN not yet verified; a server dwells
    /// here between its first flight and the client FIN, a client passes
    /// through atomically.
    HandshakeKeysReady,
    ForwardSecure,
    /// Migration requested, new path not yet validated.
    Migrating,
    EstablishedNewPath,
    Closed,
}

impl Phase {
    /// Whether forward-secure keys are established and usable.
    pub fn is_forward_secure(self) -> bool {
        matches!(
            self,
            Phase::ForwardSecure | Phase::Migrating | Phase::EstablishedNewPath
        )
    }
}

/// Identifies one network path (a remote address) of a connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathId(pub u32);

/// One datagram to put on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmit {
    pub to: SocketAddr,
    pub bytes: Vec<u8>,
}

/// Terminal connection errors; also returned from send attempts in states
/// that cannot carry data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ConnectionError {
    #[error("handshake authentication failure")]
    HandshakeAuthFailure,
    #[error("protocol violation: {0}")]
    ProtocolViolation(&'static str),
    #[error("connection is not established yet")]
    NotEstablished,
    #[error("connection is closed")]
    ConnectionClosed,
}

/// Why a migration request was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MigrateError {
    #[error("migration before forward-secure keys")]
    TooEarly,
    #[error("unknown path")]
    UnknownPath,
    #[error("connection is closed")]
    ConnectionClosed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConnEvent {
    /// A valid RETRY arrived; the initial flight was replayed with its token.
    Retry,
    /// Server FIN verified, client FIN sent, forward-secure keys in use.
    HandshakeComplete,
    /// A PATH_RESPONSE matched an outstanding challenge.
    PathValidated { path: PathId, rtt_ms: f64 },
    /// The primary path switched; the RTT estimator was reset.
    MigrationComplete { old: PathId, new: PathId },
    /// Application payload from the peer.
    AppData(Vec<u8>),
    Closed(ConnectionError),
}

/// Drop counters; none of these close the connection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub malformed_dropped: u64,
    pub stale_pn_dropped: u64,
    pub oversize_dropped: u64,
}

pub struct ClientConfig {
    pub server_name: DomainName,
    /// Where the first flight goes: the server itself, or a relay standing
    /// in for it.
    pub remote: SocketAddr,
    /// Seeds all randomness (connection IDs, client random, challenges).
    pub seed: u64,
}

#[derive(Debug)]
struct PathState {
    remote: SocketAddr,
    validated: bool,
    /// Outstanding (challenge, send time) pairs; a re-probe keeps the old
    /// ones so a response already in flight still validates.
    challenges: Vec<([u8; 8], f64)>,
}

pub struct Connection {
    server_name: DomainName,
    scid: ConnectionId,
    /// Destination CID: random until the server's CID is adopted from its
    /// first flight.
    dcid: ConnectionId,
    client_random: [u8; 32],
    phase: Phase,
    transcript: Vec<u8>,
    forward_secure_key: Option<[u8; 32]>,
    /// The initial flight, kept so a RETRY can be answered by replaying it
    /// bytewise with only the token spliced in.
    initial_packet: Option<Packet>,
    initial_sent_at: f64,
    retry_count: u32,
    paths: Vec<PathState>,
    primary: PathId,
    pending_migration: Option<PathId>,
    next_pn: u32,
    /// Highest packet number seen, one window per packet type: handshake
    /// and short-header packets can cross in flight when they travel
    /// different paths.
    highest_rx_handshake_pn: Option<u32>,
    highest_rx_one_rtt_pn: Option<u32>,
    /// APPDATA packets awaiting ACK: pn -> (send time, path at send time).
    outstanding: BTreeMap<u32, (f64, PathId)>,
    rtt: RttEstimator,
    stats: ClientStats,
    transmits: VecDeque<Transmit>,
    events: VecDeque<ConnEvent>,
    rng: ChaCha20Rng,
}

impl Connection {
    pub fn new(cfg: ClientConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let scid = ConnectionId::random(&mut rng);
        let dcid = ConnectionId::random(&mut rng);
        let mut client_random = [0u8; 32];
        rng.fill_bytes(&mut client_random);
        Connection {
            server_name: cfg.server_name,
            scid,
            dcid,
            client_random,
            phase: Phase::Idle,
            transcript: Vec::new(),
            forward_secure_key: None,
            initial_packet: None,
            initial_sent_at: 0.0,
            retry_count: 0,
            paths: vec![PathState {
                remote: cfg.remote,
                validated: true,
                challenges: Vec::new(),
            }],
            primary: PathId(0),
            pending_migration: None,
            next_pn: 0,
            highest_rx_handshake_pn: None,
            highest_rx_one_rtt_pn: None,
            outstanding: BTreeMap::new(),
            rtt: RttEstimator::new(),
            stats: ClientStats::default(),
            transmits: VecDeque::new(),
            events: VecDeque::new(),
            rng,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn scid(&self) -> ConnectionId {
        self.scid
    }

    pub fn server_name(&self) -> &DomainName {
        &self.server_name
    }

    pub fn forward_secure_key(&self) -> Option<[u8; 32]> {
        self.forward_secure_key
    }

    pub fn rtt(&self) -> &RttEstimator {
        &self.rtt
    }

    pub fn retry_count(&self) -> u32 {
        self.retry_count
    }

    pub fn stats(&self) -> ClientStats {
        self.stats
    }

    pub fn primary_path(&self) -> PathId {
        self.primary
    }

    pub fn path_remote(&self, path: PathId) -> Option<SocketAddr> {
        self.paths.get(path.0 as usize).map(|p| p.remote)
    }

    pub fn path_validated(&self, path: PathId) -> bool {
        self.paths
            .get(path.0 as usize)
            .map(|p| p.validated)
            .unwrap_or(false)
    }

    pub fn poll_transmit(&mut self) -> Option<Transmit> {
        self.transmits.pop_front()
    }

    pub fn poll_event(&mut self) -> Option<ConnEvent> {
        self.events.pop_front()
    }

    /// Sends the initial flight. No-op unless the connection is `Idle`.
    pub fn start(&mut self, now_ms: f64) {
        if self.phase != Phase::Idle {
            return;
        }
        let hello = Frame::ClientHello {
            random: self.client_random,
            server_name: self.server_name.clone(),
        };
        let payload = encode_frames(std::slice::from_ref(&hello));
        self.transcript.extend_from_slice(&payload);
        let packet = Packet {
            ptype: PacketType::Initial,
            dcid: Some(self.dcid),
            scid: Some(self.scid),
            token: Vec::new(),
            packet_number: self.alloc_pn(),
            payload,
        };
        self.initial_packet = Some(packet.clone());
        self.initial_sent_at = now_ms;
        let to = self.remote_of(self.primary);
        self.queue_packet(to, &packet);
        self.phase = Phase::InitialSent;
    }

    /// Sends one APPDATA frame on the primary path. Returns the packet
    /// number carrying it.
    pub fn send_app_data(&mut self, data: &[u8], now_ms: f64) -> Result<u32, ConnectionError> {
        if self.phase == Phase::Closed {
            return Err(ConnectionError::ConnectionClosed);
        }
        if !self.phase.is_forward_secure() {
            return Err(ConnectionError::NotEstablished);
        }
        let pn = self.alloc_pn();
        let to = self.remote_of(self.primary);
        let packet = self.one_rtt(pn, vec![Frame::AppData { data: data.to_vec() }]);
        self.outstanding.insert(pn, (now_ms, self.primary));
        self.queue_packet(to, &packet);
        Ok(pn)
    }

    /// Registers (or re-probes) a path to `remote` and sends a
    /// PATH_CHALLENGE on it. Probing is allowed before the handshake
    /// finishes; switching is not.
    pub fn probe_path(&mut self, remote: SocketAddr, now_ms: f64) -> Result<PathId, MigrateError> {
        if self.phase == Phase::Closed {
            return Err(MigrateError::ConnectionClosed);
        }
        if self.phase == Phase::Idle {
            return Err(MigrateError::TooEarly);
        }
        let id = match self.paths.iter().position(|p| p.remote == remote) {
            Some(i) => PathId(i as u32),
            None => {
                self.paths.push(PathState {
                    remote,
                    validated: false,
                    challenges: Vec::new(),
                });
                PathId(self.paths.len() as u32 - 1)
            }
        };
        if !self.paths[id.0 as usize].validated {
            let mut data = [0u8; 8];
            self.rng.fill_bytes(&mut data);
            let path = &mut self.paths[id.0 as usize];
            // Bounded by the oldest still plausibly in flight.
            if path.challenges.len() >= 4 {
                path.challenges.remove(0);
            }
            path.challenges.push((data, now_ms));
            let pn = self.alloc_pn();
            let packet = self.one_rtt(pn, vec![Frame::PathChallenge { data }]);
            self.queue_packet(remote, &packet);
        }
        Ok(id)
    }

    /// Switches the primary path to `path` once it is validated. Only
    /// reachable with forward-secure keys; before the switch completes, data
    /// keeps flowing on the old path.
    pub fn migrate_to(&mut self, path: PathId, _now_ms: f64) -> Result<(), MigrateError> {
        if self.phase == Phase::Closed {
            return Err(MigrateError::ConnectionClosed);
        }
        if !self.phase.is_forward_secure() {
            return Err(MigrateError::TooEarly);
        }
        let state = self
            .paths
            .get(path.0 as usize)
            .ok_or(MigrateError::UnknownPath)?;
        if path == self.primary {
            return Ok(());
        }
        if state.validated {
            self.switch_primary(path);
        } else {
            self.pending_migration = Some(path);
            self.phase = Phase::Migrating;
        }
        Ok(())
    }

    pub fn on_datagram(&mut self, from: SocketAddr, buf: &[u8], now_ms: f64) {
        if matches!(self.phase, Phase::Idle | Phase::Closed) {
            return;
        }
        let packet = match decode_packet(buf) {
            Ok(p) => p,
            Err(_) => {
                self.stats.malformed_dropped += 1;
                return;
            }
        };
        if packet.dcid != Some(self.scid) {
            self.stats.malformed_dropped += 1;
            return;
        }
        match packet.ptype {
            PacketType::Retry => self.on_retry(packet, now_ms),
            PacketType::Handshake => {
                if self.accept_pn(PacketType::Handshake, packet.packet_number) {
                    self.on_handshake(packet, now_ms);
                }
            }
            PacketType::OneRtt => {
                if self.accept_pn(PacketType::OneRtt, packet.packet_number) {
                    self.on_one_rtt(packet, from, now_ms);
                }
            }
            PacketType::Initial => {
                self.stats.malformed_dropped += 1;
            }
        }
    }

    fn on_retry(&mut self, packet: Packet, now_ms: f64) {
        if !matches!(self.phase, Phase::InitialSent | Phase::RetryReceived) {
            return;
        }
        if self.retry_count > 0 {
            self.close(ConnectionError::ProtocolViolation("second retry"));
            return;
        }
        // Replay the cached initial flight bytewise, splicing in the token.
        // The token is opaque: it is echoed, never parsed.
        let mut replay = self
            .initial_packet
            .clone()
            .expect("initial packet exists past Idle");
        replay.token = packet.token;
        self.retry_count += 1;
        self.initial_sent_at = now_ms;
        let to = self.remote_of(self.primary);
        self.queue_packet(to, &replay);
        self.phase = Phase::RetryReceived;
        self.events.push_back(ConnEvent::Retry);
    }

    fn on_handshake(&mut self, packet: Packet, now_ms: f64) {
        if !matches!(self.phase, Phase::InitialSent | Phase::RetryReceived) {
            return;
        }
        let Some(server_scid) = packet.scid else {
            self.stats.malformed_dropped += 1;
            return;
        };
        let Ok(frames) = packet.frames() else {
            self.stats.malformed_dropped += 1;
            return;
        };
        let mut server_random = None;
        let mut server_fin = None;
        for f in frames {
            match f {
                Frame::ServerHello { random } => server_random = Some(random),
                Frame::Fin { mac } => server_fin = Some(mac),
                _ => {}
            }
        }
        let (Some(server_random), Some(server_fin)) = (server_random, server_fin) else {
            self.stats.malformed_dropped += 1;
            return;
        };
        self.transcript
            .extend_from_slice(&encode_frames(&[Frame::ServerHello {
                random: server_random,
            }]));
        let key = crypto::derive_forward_secure_key(&self.client_random, &server_random);
        self.phase = Phase::HandshakeKeysReady;
        let expected = crypto::transcript_mac(&key, &self.transcript);
        if expected != server_fin {
            self.close(ConnectionError::HandshakeAuthFailure);
            return;
        }
        self.forward_secure_key = Some(key);
        self.dcid = server_scid;
        self.transcript
            .extend_from_slice(&encode_frames(&[Frame::Fin { mac: server_fin }]));
        let client_fin = crypto::transcript_mac(&key, &self.transcript);
        self.transcript
            .extend_from_slice(&encode_frames(&[Frame::Fin { mac: client_fin }]));
        self.rtt.on_sample(now_ms - self.initial_sent_at);
        let pn = self.alloc_pn();
        let fin_packet = Packet {
            ptype: PacketType::Handshake,
            dcid: Some(self.dcid),
            scid: Some(self.scid),
            token: Vec::new(),
            packet_number: pn,
            payload: encode_frames(&[Frame::Fin { mac: client_fin }]),
        };
        let to = self.remote_of(self.primary);
        self.queue_packet(to, &fin_packet);
        self.phase = Phase::ForwardSecure;
        self.events.push_back(ConnEvent::HandshakeComplete);
    }

    fn on_one_rtt(&mut self, packet: Packet, from: SocketAddr, now_ms: f64) {
        let Ok(frames) = packet.frames() else {
            self.stats.malformed_dropped += 1;
            return;
        };
        for frame in frames {
            match frame {
                Frame::PathChallenge { data } => {
                    // The peer is validating our address; echo regardless of
                    // our own path bookkeeping.
                    let pn = self.alloc_pn();
                    let reply = self.one_rtt(pn, vec![Frame::PathResponse { data }]);
                    self.queue_packet(from, &reply);
                }
                Frame::PathResponse { data } => self.on_path_response(from, data, now_ms),
                Frame::Ack { largest } => {
                    if let Some((sent_at, path)) = self.outstanding.remove(&largest) {
                        if path == self.primary {
                            self.rtt.on_sample(now_ms - sent_at);
                        }
                    }
                }
                Frame::AppData { data } => {
                    if self.phase.is_forward_secure() {
                        self.events.push_back(ConnEvent::AppData(data));
                    } else {
                        self.stats.malformed_dropped += 1;
                    }
                }
                Frame::Ping => {
                    let pn = self.alloc_pn();
                    let reply = self.one_rtt(
                        pn,
                        vec![Frame::Ack {
                            largest: packet.packet_number,
                        }],
                    );
                    self.queue_packet(from, &reply);
                }
                Frame::ClientHello { .. } | Frame::ServerHello { .. } | Frame::Fin { .. } => {
                    self.stats.malformed_dropped += 1;
                }
            }
        }
    }

    fn on_path_response(&mut self, from: SocketAddr, data: [u8; 8], now_ms: f64) {
        let Some((idx, sent_at)) = self.paths.iter().enumerate().find_map(|(i, p)| {
            if p.remote != from {
                return None;
            }
            let (_, sent_at) = p.challenges.iter().find(|(c, _)| *c == data)?;
            Some((i, *sent_at))
        }) else {
            // Wrong echo or unknown path: the path stays unvalidated.
            return;
        };
        let path = PathId(idx as u32);
        let state = &mut self.paths[idx];
        state.validated = true;
        state.challenges.clear();
        let rtt_ms = now_ms - sent_at;
        self.events.push_back(ConnEvent::PathValidated { path, rtt_ms });
        if self.pending_migration == Some(path) {
            self.switch_primary(path);
        }
    }

    fn switch_primary(&mut self, path: PathId) {
        let old = self.primary;
        self.primary = path;
        self.pending_migration = None;
        // Nothing learned on the old path predicts the new one.
        self.rtt.reset();
        self.phase = Phase::EstablishedNewPath;
        self.events
            .push_back(ConnEvent::MigrationComplete { old, new: path });
    }

    fn close(&mut self, err: ConnectionError) {
        self.phase = Phase::Closed;
        self.events.push_back(ConnEvent::Closed(err));
    }

    fn alloc_pn(&mut self) -> u32 {
        let pn = self.next_pn;
        self.next_pn += 1;
        pn
    }

    /// Drops duplicates and reordered-behind packets: packet numbers are
    /// strictly increasing per sender within each packet type. RETRY is
    /// exempt (it is stateless and carries no meaningful number).
    fn accept_pn(&mut self, ptype: PacketType, pn: u32) -> bool {
        let highest = match ptype {
            PacketType::Handshake => &mut self.highest_rx_handshake_pn,
            _ => &mut self.highest_rx_one_rtt_pn,
        };
        if highest.map_or(false, |h| pn <= h) {
            self.stats.stale_pn_dropped += 1;
            return false;
        }
        *highest = Some(pn);
        true
    }

    fn remote_of(&self, path: PathId) -> SocketAddr {
        self.paths[path.0 as usize].remote
    }

    fn one_rtt(&self, pn: u32, frames: Vec<Frame>) -> Packet {
        Packet {
            ptype: PacketType::OneRtt,
            dcid: Some(self.dcid),
            scid: Some(self.scid),
            token: Vec::new(),
            packet_number: pn,
            payload: encode_frames(&frames),
        }
    }

    fn queue_packet(&mut self, to: SocketAddr, packet: &Packet) {
        let bytes = encode_packet(packet).expect("internally built packets encode");
        if bytes.len() > MAX_DATAGRAM_SIZE {
            log::warn!("dropping oversize datagram ({} bytes)", bytes.len());
            self.stats.oversize_dropped += 1;
            return;
        }
        self.transmits.push_back(Transmit { to, bytes });
    }
}

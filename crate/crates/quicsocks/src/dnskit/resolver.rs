//! Stub resolver: sans-I/O core plus a blocking wrapper over a UDP socket.
//!
//! One attempt per timeout window, `1 + retries` attempts total, each retry
//! resending the identical query bytes. A response is accepted only if it
//! comes from the configured upstream and its id matches an in-flight
//! query. TTLs are clamped to [1, 300] seconds before use.

use std::collections::{BTreeMap, VecDeque};
use std::net::{IpAddr, SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::wire::{query, DnsError, DnsMessage, QType, Rcode};

pub const TTL_CLAMP_MIN_S: u32 = 1;
pub const TTL_CLAMP_MAX_S: u32 = 300;

#[derive(Debug, thiserror::Error)]
pub enum ResolveError {
    #[error("no response after all attempts")]
    Timeout,
    #[error("name does not exist")]
    NxDomain,
    #[error("upstream failure {0:?}")]
    Upstream(Rcode),
    #[error("response carried no usable address records")]
    NoRecords,
    #[error("malformed response: {0}")]
    Decode(DnsError),
    #[error("invalid name: {0}")]
    Name(DnsError),
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub addrs: Vec<IpAddr>,
    /// Minimum TTL across the answers, clamped to [1, 300] s.
    pub min_ttl_s: u32,
}

impl Resolution {
    /// First address in the wanted family, falling back to any.
    pub fn preferred(&self, want_v4: bool) -> Option<IpAddr> {
        self.addrs
            .iter()
            .find(|a| a.is_ipv4() == want_v4)
            .or_else(|| self.addrs.first())
            .copied()
    }
}

struct Inflight {
    wire: Vec<u8>,
    attempts_left: u32,
    deadline_ms: f64,
}

/// The I/O-free resolver core. Drive it with datagrams and ticks; it hands
/// back transmits and per-query outcomes.
pub struct StubResolver {
    upstream: SocketAddr,
    timeout_ms: f64,
    retries: u32,
    rng: ChaCha20Rng,
    inflight: BTreeMap<u16, Inflight>,
    transmits: VecDeque<(SocketAddr, Vec<u8>)>,
    results: VecDeque<(u16, Result<Resolution, ResolveError>)>,
}

impl StubResolver {
    pub fn new(upstream: SocketAddr, timeout_ms: f64, retries: u32, seed: u64) -> Self {
        StubResolver {
            upstream,
            timeout_ms,
            retries,
            rng: ChaCha20Rng::seed_from_u64(seed),
            inflight: BTreeMap::new(),
            transmits: VecDeque::new(),
            results: VecDeque::new(),
        }
    }

    /// Queues the first attempt and returns the query id.
    pub fn start_query(
        &mut self,
        name: &str,
        qtype: QType,
        now_ms: f64,
    ) -> Result<u16, ResolveError> {
        let mut id = self.rng.gen::<u16>();
        while self.inflight.contains_key(&id) {
            id = self.rng.gen();
        }
        let wire = query(id, name, qtype).encode().map_err(ResolveError::Name)?;
        self.transmits.push_back((self.upstream, wire.clone()));
        self.inflight.insert(
            id,
            Inflight {
                wire,
                attempts_left: self.retries,
                deadline_ms: now_ms + self.timeout_ms,
            },
        );
        Ok(id)
    }

    pub fn on_datagram(&mut self, from: SocketAddr, bytes: &[u8]) {
        if from != self.upstream {
            return;
        }
        let msg = match DnsMessage::decode(bytes) {
            Ok(msg) => msg,
            Err(err) => {
                // Undecodable, but if the id prefix names one of our queries
                // the upstream answered it with garbage: fail fast.
                if bytes.len() >= 2 {
                    let id = u16::from_be_bytes([bytes[0], bytes[1]]);
                    if self.inflight.remove(&id).is_some() {
                        self.results.push_back((id, Err(ResolveError::Decode(err))));
                    }
                }
                return;
            }
        };
        if !msg.response || !self.inflight.contains_key(&msg.id) {
            return;
        }
        self.inflight.remove(&msg.id);
        let outcome = match msg.rcode {
            Rcode::NxDomain => Err(ResolveError::NxDomain),
            Rcode::NoError => {
                let addrs: Vec<IpAddr> = msg.answers.iter().map(|a| a.addr).collect();
                match msg.answers.iter().map(|a| a.ttl_s).min() {
                    None => Err(ResolveError::NoRecords),
                    Some(ttl) => Ok(Resolution {
                        addrs,
                        min_ttl_s: ttl.clamp(TTL_CLAMP_MIN_S, TTL_CLAMP_MAX_S),
                    }),
                }
            }
            other => Err(ResolveError::Upstream(other)),
        };
        self.results.push_back((msg.id, outcome));
    }

    /// Earliest retransmit or expiry deadline among in-flight queries.
    pub fn next_wake_ms(&self) -> Option<f64> {
        self.inflight
            .values()
            .map(|q| q.deadline_ms)
            .min_by(|a, b| a.total_cmp(b))
    }

    pub fn on_tick(&mut self, now_ms: f64) {
        let due: Vec<u16> = self
            .inflight
            .iter()
            .filter(|(_, q)| q.deadline_ms <= now_ms)
            .map(|(&id, _)| id)
            .collect();
        for id in due {
            let q = self.inflight.get_mut(&id).expect("collected above");
            if q.attempts_left > 0 {
                q.attempts_left -= 1;
                q.deadline_ms = now_ms + self.timeout_ms;
                self.transmits.push_back((self.upstream, q.wire.clone()));
            } else {
                self.inflight.remove(&id);
                self.results.push_back((id, Err(ResolveError::Timeout)));
            }
        }
    }

    pub fn poll_transmit(&mut self) -> Option<(SocketAddr, Vec<u8>)> {
        self.transmits.pop_front()
    }

    pub fn poll_result(&mut self) -> Option<(u16, Result<Resolution, ResolveError>)> {
        self.results.pop_front()
    }

    pub fn in_flight(&self) -> usize {
        self.inflight.len()
    }
}

/// Blocking resolve against `upstream` over a fresh UDP socket.
pub fn resolve(
    name: &str,
    qtype: QType,
    upstream: SocketAddr,
    timeout_ms: u64,
    retries: u32,
) -> Result<Resolution, ResolveError> {
    let bind: SocketAddr = if upstream.is_ipv4() {
        "0.0.0.0:0".parse().unwrap()
    } else {
        "[::]:0".parse().unwrap()
    };
    let socket = UdpSocket::bind(bind)?;
    let start = Instant::now();
    let mut machine = StubResolver::new(upstream, timeout_ms as f64, retries, rand::random());
    let id = machine.start_query(name, qtype, 0.0)?;
    let mut buf = [0u8; 2048];
    loop {
        while let Some((to, bytes)) = machine.poll_transmit() {
            socket.send_to(&bytes, to)?;
        }
        if let Some((got, outcome)) = machine.poll_result() {
            debug_assert_eq!(got, id);
            return outcome;
        }
        let now_ms = start.elapsed().as_secs_f64() * 1e3;
        let wake = machine.next_wake_ms().unwrap_or(now_ms);
        let wait_ms = (wake - now_ms).max(1.0);
        socket.set_read_timeout(Some(Duration::from_secs_f64(wait_ms / 1e3)))?;
        match socket.recv_from(&mut buf) {
            Ok((n, from)) => machine.on_datagram(from, &buf[..n]),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(e) => return Err(e.into()),
        }
        machine.on_tick(start.elapsed().as_secs_f64() * 1e3);
    }
}

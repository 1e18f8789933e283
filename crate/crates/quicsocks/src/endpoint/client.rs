//! Blocking connect paths: direct with our own resolution, or proxied
//! through a SOCKS association with the resolution delegated.
//!
//! The timer starts at the connection request and stops when the client has
//! sent its FIN and holds forward-secure keys; the server's processing of
//! that FIN is not awaited. Warm mode starts the timer after the association
//! already exists, cold mode before it is built, so the difference between
//! the two is the association setup cost.

use std::fmt;
use std::io;
use std::net::{SocketAddr, TcpStream, UdpSocket};
use std::time::{Duration, Instant};

use crate::dnskit::{self, QType, ResolveError};
use crate::miniquic::{ClientConfig, ConnEvent, Connection, ConnectionError, PathId, Transmit};
use crate::socks::{
    decode_udp_header, encode_udp_packet, negotiate_client, DomainName, SocksAddress, SocksError,
    UdpAssociation,
};

const RECV_POLL: Duration = Duration::from_millis(20);
/// After the handshake, how long a pending migration may keep the
/// connection in the driver before we settle for the proxied path.
const MIGRATE_GRACE_MS: f64 = 3_000.0;
/// Unanswered path probes are repeated at this interval.
const REPROBE_INTERVAL_MS: f64 = 1_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Resolve ourselves, handshake on the direct path.
    Default,
    /// Build the association first; the timer covers that setup too.
    Cold,
    /// Association already in place; the timer covers only the handshake.
    Warm,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Default => "default",
            Mode::Cold => "cold",
            Mode::Warm => "warm",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(Mode::Default),
            "cold" => Ok(Mode::Cold),
            "warm" => Ok(Mode::Warm),
            other => Err(format!("unknown mode {other:?} (default|cold|warm)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConnectConfig {
    pub target: DomainName,
    pub target_port: u16,
    /// SOCKS control address; required for cold and warm modes.
    pub proxy: Option<SocketAddr>,
    /// Resolver used in default mode. The proxied modes never touch it.
    pub resolver: SocketAddr,
    pub mode: Mode,
    pub migration: bool,
    pub probe_early: bool,
    pub handshake_timeout_ms: f64,
    pub seed: u64,
}

impl ConnectConfig {
    pub fn new(target: DomainName, target_port: u16, resolver: SocketAddr) -> Self {
        ConnectConfig {
            target,
            target_port,
            proxy: None,
            resolver,
            mode: Mode::Default,
            migration: false,
            probe_early: false,
            handshake_timeout_ms: 10_000.0,
            seed: 0,
        }
    }
}

/// One completed measurement.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TimingRecord {
    pub mode: Mode,
    pub t_connect_ms: f64,
    pub retry_occurred: bool,
    pub migrated: bool,
    pub t_migrate_ms: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConnectError {
    #[error("mode {0} requires a proxy address")]
    ProxyRequired(Mode),
    #[error("resolution failed: {0}")]
    Resolve(#[from] ResolveError),
    #[error("association failed: {0}")]
    Socks(#[from] SocksError),
    #[error("socket error: {0}")]
    Io(#[from] io::Error),
    #[error("handshake did not complete within {timeout_ms} ms")]
    HandshakeTimeout { timeout_ms: f64 },
    #[error("proxy reported resolution failure (reply code {0:#04x})")]
    ProxyReport(u8),
    #[error("connection failed: {0}")]
    Closed(ConnectionError),
    #[error("no echo within {0} ms")]
    EchoTimeout(f64),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("all {0} repetitions failed")]
    AllRepetitionsFailed(usize),
}

/// Socket plumbing below a [`Connection`]: SOCKS encapsulation toward the
/// relay, raw datagrams everywhere else.
struct Driver {
    socket: UdpSocket,
    epoch: Instant,
    relay_addr: Option<SocketAddr>,
    /// Wrapped destination before the proxy tells us the concrete address.
    target: SocksAddress,
    /// Concrete server address once known (notification or first response).
    server_addr: Option<SocketAddr>,
}

impl Driver {
    fn now_ms(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1e3
    }

    fn flush(&mut self, conn: &mut Connection) -> io::Result<()> {
        while let Some(tx) = conn.poll_transmit() {
            self.send_one(&tx)?;
        }
        Ok(())
    }

    fn send_one(&mut self, tx: &Transmit) -> io::Result<()> {
        match self.relay_addr {
            Some(relay) if tx.to == relay => {
                let dst = match self.server_addr {
                    Some(addr) => SocksAddress::from(addr),
                    None => self.target.clone(),
                };
                let wrapped = encode_udp_packet(&dst, &tx.bytes);
                self.socket.send_to(&wrapped, relay)?;
            }
            _ => {
                self.socket.send_to(&tx.bytes, tx.to)?;
            }
        }
        Ok(())
    }

    /// Receives at most one datagram and feeds it to the connection.
    /// Relay traffic is decapsulated; a zero-payload datagram is the
    /// address notification and carries nothing to feed.
    fn recv_step(&mut self, conn: &mut Connection) -> io::Result<()> {
        let mut buf = [0u8; 2048];
        match self.socket.recv_from(&mut buf) {
            Ok((n, from)) => {
                if Some(from) == self.relay_addr {
                    if let Ok((header, payload)) = decode_udp_header(&buf[..n]) {
                        if let Some(addr) = header.dst.socket_addr() {
                            if self.server_addr.is_none() {
                                self.server_addr = Some(addr);
                            }
                            if !payload.is_empty() {
                                conn.on_datagram(addr, payload, self.now_ms());
                            }
                        }
                    }
                } else {
                    conn.on_datagram(from, &buf[..n], self.now_ms());
                }
                Ok(())
            }
            Err(ref e)
                if e.kind() == io::ErrorKind::WouldBlock
                    || e.kind() == io::ErrorKind::TimedOut =>
            {
                Ok(())
            }
            Err(e) => Err(e),
        }
    }
}

/// A connection past its handshake, ready for application data.
pub struct Established {
    conn: Connection,
    driver: Driver,
    /// Keeps the control stream open; the proxy tears relays down with it.
    _assoc: Option<UdpAssociation>,
}

impl Established {
    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    /// The remote address of the current primary path.
    pub fn current_remote(&self) -> SocketAddr {
        self.conn
            .path_remote(self.conn.primary_path())
            .expect("primary path always has a remote")
    }

    /// True once traffic flows on the direct path rather than via a relay.
    pub fn is_direct(&self) -> bool {
        match self.driver.relay_addr {
            Some(relay) => self.current_remote() != relay,
            None => true,
        }
    }

    /// The concrete server address, once it is known.
    pub fn server_addr(&self) -> Option<SocketAddr> {
        self.driver.server_addr
    }

    /// Sends `payload` and waits for the peer's echo.
    pub fn echo_roundtrip(
        &mut self,
        payload: &[u8],
        timeout_ms: f64,
    ) -> Result<Vec<u8>, ConnectError> {
        let start = self.driver.now_ms();
        self.conn
            .send_app_data(payload, start)
            .map_err(ConnectError::Closed)?;
        self.driver.flush(&mut self.conn)?;
        loop {
            while let Some(event) = self.conn.poll_event() {
                match event {
                    ConnEvent::AppData(data) => return Ok(data),
                    ConnEvent::Closed(e) => return Err(ConnectError::Closed(e)),
                    _ => {}
                }
            }
            if self.driver.now_ms() - start > timeout_ms {
                return Err(ConnectError::EchoTimeout(timeout_ms));
            }
            self.driver.recv_step(&mut self.conn)?;
            self.driver.flush(&mut self.conn)?;
        }
    }
}

/// Connects per `config` and reports how long it took.
pub fn connect(config: &ConnectConfig) -> Result<(Established, TimingRecord), ConnectError> {
    match config.mode {
        Mode::Default => connect_direct(config),
        Mode::Cold => {
            let proxy = config.proxy.ok_or(ConnectError::ProxyRequired(Mode::Cold))?;
            let t0 = Instant::now();
            let mut assoc = associate(proxy)?;
            let (conn, driver, record) = connect_proxied(config, &mut assoc, t0)?;
            Ok((
                Established {
                    conn,
                    driver,
                    _assoc: Some(assoc),
                },
                record,
            ))
        }
        Mode::Warm => {
            let proxy = config.proxy.ok_or(ConnectError::ProxyRequired(Mode::Warm))?;
            let mut assoc = associate(proxy)?;
            let t0 = Instant::now();
            let (conn, driver, record) = connect_proxied(config, &mut assoc, t0)?;
            Ok((
                Established {
                    conn,
                    driver,
                    _assoc: Some(assoc),
                },
                record,
            ))
        }
    }
}

fn associate(proxy: SocketAddr) -> Result<UdpAssociation, ConnectError> {
    let control = TcpStream::connect(proxy)?;
    Ok(negotiate_client(control)?)
}

fn bind_like(addr: SocketAddr) -> io::Result<UdpSocket> {
    let bind: SocketAddr = if addr.is_ipv4() {
        "0.0.0.0:0".parse().unwrap()
    } else {
        "[::]:0".parse().unwrap()
    };
    let socket = UdpSocket::bind(bind)?;
    socket.set_read_timeout(Some(RECV_POLL))?;
    Ok(socket)
}

fn connect_direct(config: &ConnectConfig) -> Result<(Established, TimingRecord), ConnectError> {
    let t0 = Instant::now();
    let name = String::from_utf8_lossy(config.target.as_bytes()).into_owned();
    let want_v4 = config.resolver.is_ipv4();
    let qtype = if want_v4 { QType::A } else { QType::Aaaa };
    let resolution = dnskit::resolve(&name, qtype, config.resolver, 1_000, 2)?;
    let ip = resolution
        .preferred(want_v4)
        .ok_or(ConnectError::Resolve(ResolveError::NoRecords))?;
    let server = SocketAddr::new(ip, config.target_port);

    let socket = bind_like(server)?;
    let mut driver = Driver {
        socket,
        epoch: t0,
        relay_addr: None,
        target: SocksAddress::from(server),
        server_addr: Some(server),
    };
    let mut conn = Connection::new(ClientConfig {
        server_name: config.target.clone(),
        remote: server,
        seed: config.seed,
    });
    let record = drive(config, &mut conn, &mut driver, None)?;
    Ok((
        Established {
            conn,
            driver,
            _assoc: None,
        },
        record,
    ))
}

fn connect_proxied(
    config: &ConnectConfig,
    assoc: &mut UdpAssociation,
    t0: Instant,
) -> Result<(Connection, Driver, TimingRecord), ConnectError> {
    let relay = assoc.relay_addr();
    let socket = bind_like(relay)?;
    let mut driver = Driver {
        socket,
        epoch: t0,
        relay_addr: Some(relay),
        target: SocksAddress::Domain(config.target.clone(), config.target_port),
        server_addr: None,
    };
    let mut conn = Connection::new(ClientConfig {
        server_name: config.target.clone(),
        remote: relay,
        seed: config.seed,
    });
    let record = drive(config, &mut conn, &mut driver, Some(assoc))?;
    Ok((conn, driver, record))
}

/// Runs the handshake (and, when asked, the migration) to completion.
fn drive(
    config: &ConnectConfig,
    conn: &mut Connection,
    driver: &mut Driver,
    mut control: Option<&mut UdpAssociation>,
) -> Result<TimingRecord, ConnectError> {
    let want_migration = config.migration && driver.relay_addr.is_some();
    conn.start(driver.now_ms());
    driver.flush(conn)?;

    let mut t_connect: Option<f64> = None;
    let mut t_migrate: Option<f64> = None;
    let mut probe: Option<(PathId, f64)> = None;
    let mut migrate_requested = false;

    loop {
        while let Some(event) = conn.poll_event() {
            match event {
                ConnEvent::HandshakeComplete => t_connect = Some(driver.now_ms()),
                ConnEvent::MigrationComplete { .. } => t_migrate = Some(driver.now_ms()),
                ConnEvent::Closed(e) => return Err(ConnectError::Closed(e)),
                ConnEvent::Retry | ConnEvent::PathValidated { .. } | ConnEvent::AppData(_) => {}
            }
        }

        if want_migration && t_migrate.is_none() {
            if let Some(server) = driver.server_addr {
                let now = driver.now_ms();
                match probe {
                    None if config.probe_early || t_connect.is_some() => {
                        if let Ok(id) = conn.probe_path(server, now) {
                            probe = Some((id, now));
                        }
                    }
                    // An early probe can race the server's connection setup
                    // (a retry delays it); refresh the challenge once the
                    // handshake is done and the path still is not validated.
                    Some((id, sent_at))
                        if !conn.path_validated(id)
                            && ((t_connect.is_some() && !migrate_requested)
                                || now - sent_at > REPROBE_INTERVAL_MS) =>
                    {
                        let _ = conn.probe_path(server, now);
                        probe = Some((id, now));
                    }
                    _ => {}
                }
                if let (Some((id, _)), true, false) = (probe, t_connect.is_some(), migrate_requested)
                {
                    // Soft failure: if the switch is refused we stay proxied.
                    let _ = conn.migrate_to(id, now);
                    migrate_requested = true;
                }
            }
        }

        driver.flush(conn)?;

        if let Some(tc) = t_connect {
            let migration_settled = !want_migration
                || t_migrate.is_some()
                || driver.now_ms() - tc > MIGRATE_GRACE_MS;
            if migration_settled {
                return Ok(TimingRecord {
                    mode: config.mode,
                    t_connect_ms: tc,
                    retry_occurred: conn.retry_count() > 0,
                    migrated: t_migrate.is_some(),
                    t_migrate_ms: t_migrate,
                });
            }
        } else if driver.now_ms() > config.handshake_timeout_ms {
            return Err(ConnectError::HandshakeTimeout {
                timeout_ms: config.handshake_timeout_ms,
            });
        }

        if let Some(assoc) = control.as_deref_mut() {
            let report = assoc.drain_control();
            if report.len() >= 2 && report[1] != 0 {
                return Err(ConnectError::ProxyReport(report[1]));
            }
        }

        driver.recv_step(conn)?;
    }
}

/// Summary over the successful repetitions of one suite run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SuiteSummary {
    pub mode: Mode,
    pub completed: usize,
    pub failed: usize,
    pub min_ms: f64,
    pub median_ms: f64,
}

/// Runs `repetitions` sequential connects and summarizes them. Failures are
/// counted and excluded from the summary. Warm mode builds one association
/// up front and reuses it for every repetition.
pub fn run_timing_suite(
    config: &ConnectConfig,
    repetitions: usize,
) -> Result<(Vec<TimingRecord>, SuiteSummary), ConnectError> {
    if repetitions == 0 {
        return Err(ConnectError::NoRepetitions);
    }
    let mut shared_assoc = match config.mode {
        Mode::Warm => {
            let proxy = config.proxy.ok_or(ConnectError::ProxyRequired(Mode::Warm))?;
            Some(associate(proxy)?)
        }
        _ => None,
    };

    let mut records = Vec::with_capacity(repetitions);
    let mut failed = 0usize;
    for rep in 0..repetitions {
        let mut rep_config = config.clone();
        rep_config.seed = config.seed.wrapping_add(rep as u64);
        let outcome = match shared_assoc.as_mut() {
            Some(assoc) => {
                let t0 = Instant::now();
                connect_proxied(&rep_config, assoc, t0).map(|(_, _, record)| record)
            }
            None => connect(&rep_config).map(|(_, record)| record),
        };
        match outcome {
            Ok(record) => records.push(record),
            Err(_) => failed += 1,
        }
    }

    if records.is_empty() {
        return Err(ConnectError::AllRepetitionsFailed(repetitions));
    }
    let mut times: Vec<f64> = records.iter().map(|r| r.t_connect_ms).collect();
    times.sort_by(|a, b| a.total_cmp(b));
    let min_ms = times[0];
    let median_ms = if times.len() % 2 == 1 {
        times[times.len() / 2]
    } else {
        (times[times.len() / 2 - 1] + times[times.len() / 2]) / 2.0
    };
    let summary = SuiteSummary {
        mode: config.mode,
        completed: records.len(),
        failed,
        min_ms,
        median_ms,
    };
    Ok((records, summary))
}

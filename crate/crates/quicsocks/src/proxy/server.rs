//! Socket-and-thread shell around [`ProxyEngine`].
//!
//! Four entry points feed the engine: the TCP control listener, the
//! client-facing relay socket, the server-facing upstream socket, and the
//! resolver-facing DNS socket. Every entry point locks the engine, feeds it
//! one event, drains the resulting actions into a local list, releases the
//! lock, then performs the sends. Sockets run with short read timeouts so
//! shutdown is prompt.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::engine::{AssocId, NotifyMode, ProxyAction, ProxyConfig, ProxyEngine, ProxyMetrics};

const POLL_INTERVAL: Duration = Duration::from_millis(25);

/// Configuration for a running proxy process.
#[derive(Debug, Clone)]
pub struct ProxyServer {
    pub listen_control: SocketAddr,
    pub listen_relay: SocketAddr,
    pub upstream_dns: SocketAddr,
    pub notify: NotifyMode,
    pub idle_timeout_s: f64,
    pub max_relays: usize,
    pub metrics_file: Option<PathBuf>,
}

impl ProxyServer {
    pub fn new(listen_control: SocketAddr, listen_relay: SocketAddr, upstream_dns: SocketAddr) -> Self {
        ProxyServer {
            listen_control,
            listen_relay,
            upstream_dns,
            notify: NotifyMode::Early,
            idle_timeout_s: 30.0,
            max_relays: 4096,
            metrics_file: None,
        }
    }

    /// Binds all sockets and starts the worker threads.
    pub fn start(self) -> std::io::Result<ProxyHandle> {
        let control_listener = TcpListener::bind(self.listen_control)?;
        control_listener.set_nonblocking(true)?;
        let relay = Arc::new(UdpSocket::bind(self.listen_relay)?);
        let upstream = Arc::new(UdpSocket::bind(unspecified_like(self.listen_relay))?);
        let dns = Arc::new(UdpSocket::bind(unspecified_like(self.upstream_dns))?);
        for socket in [&relay, &upstream, &dns] {
            socket.set_read_timeout(Some(POLL_INTERVAL))?;
        }
        let control_addr = control_listener.local_addr()?;
        let relay_addr = relay.local_addr()?;

        let mut cfg = ProxyConfig::new(relay_addr, self.upstream_dns);
        cfg.notify = self.notify;
        cfg.idle_timeout_s = self.idle_timeout_s;
        cfg.max_relays = self.max_relays;
        cfg.seed = rand::random();

        let shared = Arc::new(Shared {
            engine: Mutex::new(ProxyEngine::new(cfg)),
            controls: Mutex::new(BTreeMap::new()),
            relay,
            upstream,
            dns,
            stop: AtomicBool::new(false),
            dump_metrics: Arc::new(AtomicBool::new(false)),
            epoch: Instant::now(),
            metrics_file: self.metrics_file,
        });

        let mut threads = Vec::new();
        {
            let shared = shared.clone();
            threads.push(std::thread::spawn(move || accept_loop(shared, control_listener)));
        }
        for which in [Port::Relay, Port::Upstream, Port::Dns] {
            let shared = shared.clone();
            threads.push(std::thread::spawn(move || udp_loop(shared, which)));
        }
        {
            let shared = shared.clone();
            threads.push(std::thread::spawn(move || ticker_loop(shared)));
        }
        Ok(ProxyHandle {
            control_addr,
            relay_addr,
            shared,
            threads,
        })
    }
}

fn unspecified_like(addr: SocketAddr) -> SocketAddr {
    if addr.is_ipv4() {
        "0.0.0.0:0".parse().unwrap()
    } else {
        "[::]:0".parse().unwrap()
    }
}

struct Shared {
    engine: Mutex<ProxyEngine>,
    controls: Mutex<BTreeMap<AssocId, TcpStream>>,
    relay: Arc<UdpSocket>,
    upstream: Arc<UdpSocket>,
    dns: Arc<UdpSocket>,
    stop: AtomicBool,
    dump_metrics: Arc<AtomicBool>,
    epoch: Instant,
    metrics_file: Option<PathBuf>,
}

impl Shared {
    fn now_ms(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1e3
    }

    /// Runs `feed` under the engine lock, then performs the queued actions.
    fn with_engine(&self, feed: impl FnOnce(&mut ProxyEngine)) {
        let mut actions = Vec::new();
        {
            let mut engine = self.engine.lock().expect("engine lock");
            feed(&mut engine);
            while let Some(action) = engine.poll_action() {
                actions.push(action);
            }
        }
        for action in actions {
            self.perform(action);
        }
    }

    fn perform(&self, action: ProxyAction) {
        match action {
            ProxyAction::RelaySend { to, bytes } => {
                let _ = self.relay.send_to(&bytes, to);
            }
            ProxyAction::UpstreamSend { to, bytes } => {
                let _ = self.upstream.send_to(&bytes, to);
            }
            ProxyAction::DnsSend { to, bytes } => {
                let _ = self.dns.send_to(&bytes, to);
            }
            ProxyAction::ControlSend { assoc, bytes } => {
                let mut controls = self.controls.lock().expect("controls lock");
                if let Some(stream) = controls.get_mut(&assoc) {
                    let _ = stream.write_all(&bytes);
                }
            }
            ProxyAction::ControlClose { assoc } => {
                let mut controls = self.controls.lock().expect("controls lock");
                if let Some(stream) = controls.remove(&assoc) {
                    let _ = stream.shutdown(Shutdown::Both);
                }
            }
        }
    }

    fn write_metrics(&self) {
        if let Some(path) = &self.metrics_file {
            let json = self.engine.lock().expect("engine lock").metrics_json();
            let _ = std::fs::write(path, json + "\n");
        }
    }
}

fn accept_loop(shared: Arc<Shared>, listener: TcpListener) {
    while !shared.stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let assoc = {
                    let mut engine = shared.engine.lock().expect("engine lock");
                    engine.on_control_open(peer)
                };
                let writer = match stream.try_clone() {
                    Ok(clone) => clone,
                    Err(_) => continue,
                };
                shared.controls.lock().expect("controls lock").insert(assoc, writer);
                let shared = shared.clone();
                std::thread::spawn(move || control_reader(shared, assoc, stream));
            }
            Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(POLL_INTERVAL);
            }
            Err(_) => break,
        }
    }
}

fn control_reader(shared: Arc<Shared>, assoc: AssocId, mut stream: TcpStream) {
    let _ = stream.set_read_timeout(Some(POLL_INTERVAL));
    let mut buf = [0u8; 1024];
    loop {
        if shared.stop.load(Ordering::Relaxed) {
            return;
        }
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                let chunk = buf[..n].to_vec();
                shared.with_engine(|engine| engine.on_control_bytes(assoc, &chunk));
            }
            Err(ref e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(_) => break,
        }
    }
    shared.controls.lock().expect("controls lock").remove(&assoc);
    shared.with_engine(|engine| engine.on_control_closed(assoc));
}

#[derive(Clone, Copy)]
enum Port {
    Relay,
    Upstream,
    Dns,
}

fn udp_loop(shared: Arc<Shared>, which: Port) {
    let socket = match which {
        Port::Relay => shared.relay.clone(),
        Port::Upstream => shared.upstream.clone(),
        Port::Dns => shared.dns.clone(),
    };
    let mut buf = [0u8; 2048];
    while !shared.stop.load(Ordering::Relaxed) {
        match socket.recv_from(&mut buf) {
            Ok((n, from)) => {
                let now = shared.now_ms();
                let bytes = &buf[..n];
                shared.with_engine(|engine| match which {
                    Port::Relay => engine.on_relay_datagram(from, bytes, now),
                    Port::Upstream => engine.on_upstream_datagram(from, bytes, now),
                    Port::Dns => engine.on_dns_datagram(from, bytes, now),
                });
            }
            Err(ref e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(_) => break,
        }
    }
}

fn ticker_loop(shared: Arc<Shared>) {
    let mut last_metrics = Instant::now();
    while !shared.stop.load(Ordering::Relaxed) {
        std::thread::sleep(POLL_INTERVAL);
        let now = shared.now_ms();
        shared.with_engine(|engine| engine.on_tick(now));
        if shared.dump_metrics.swap(false, Ordering::Relaxed) {
            shared.write_metrics();
        }
        if shared.metrics_file.is_some() && last_metrics.elapsed() >= Duration::from_secs(1) {
            shared.write_metrics();
            last_metrics = Instant::now();
        }
    }
}

/// A running proxy. Dropping the handle leaks the threads; call
/// [`ProxyHandle::shutdown`] to stop them.
pub struct ProxyHandle {
    control_addr: SocketAddr,
    relay_addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl ProxyHandle {
    pub fn control_addr(&self) -> SocketAddr {
        self.control_addr
    }

    pub fn relay_addr(&self) -> SocketAddr {
        self.relay_addr
    }

    pub fn metrics(&self) -> ProxyMetrics {
        self.shared.engine.lock().expect("engine lock").metrics()
    }

    /// Flag checked by the ticker; a signal handler can set it safely.
    pub fn dump_flag(&self) -> Arc<AtomicBool> {
        self.shared.dump_metrics.clone()
    }

    pub fn write_metrics_now(&self) {
        self.shared.write_metrics();
    }

    pub fn shutdown(self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        {
            let mut controls = self.shared.controls.lock().expect("controls lock");
            for (_, stream) in std::mem::take(&mut *controls) {
                let _ = stream.shutdown(Shutdown::Both);
            }
        }
        for thread in self.threads {
            let _ = thread.join();
        }
        self.shared.write_metrics();
    }
}

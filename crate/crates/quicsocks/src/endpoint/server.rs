//! Demo server: one UDP socket multiplexing a [`ServerEngine`].

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::miniquic::{ServerConfig, ServerEngine, ServerEvent, ServerStats};

const POLL_INTERVAL: Duration = Duration::from_millis(25);

/// Binds `listen` and serves handshakes until the handle is shut down.
/// With `retry` on, every fresh connection is asked for a token round trip
/// first. Application data is echoed back.
pub fn serve(listen: SocketAddr, retry: bool, seed: u64) -> std::io::Result<ServerHandle> {
    let socket = UdpSocket::bind(listen)?;
    socket.set_read_timeout(Some(POLL_INTERVAL))?;
    let local_addr = socket.local_addr()?;
    let shared = Arc::new(ServerShared {
        engine: Mutex::new(ServerEngine::new(ServerConfig {
            retry,
            ..ServerConfig::new(seed)
        })),
        handshakes_completed: AtomicU64::new(0),
        stop: AtomicBool::new(false),
    });
    let thread = {
        let shared = shared.clone();
        std::thread::spawn(move || run_loop(shared, socket))
    };
    Ok(ServerHandle {
        local_addr,
        shared,
        thread: Some(thread),
    })
}

struct ServerShared {
    engine: Mutex<ServerEngine>,
    handshakes_completed: AtomicU64,
    stop: AtomicBool,
}

fn run_loop(shared: Arc<ServerShared>, socket: UdpSocket) {
    let epoch = Instant::now();
    let mut buf = [0u8; 2048];
    while !shared.stop.load(Ordering::Relaxed) {
        let (n, from) = match socket.recv_from(&mut buf) {
            Ok(pair) => pair,
            Err(ref e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                continue;
            }
            Err(_) => break,
        };
        let now_ms = epoch.elapsed().as_secs_f64() * 1e3;
        let mut engine = shared.engine.lock().expect("engine lock");
        engine.on_datagram(from, &buf[..n], now_ms);
        while let Some(tx) = engine.poll_transmit() {
            let _ = socket.send_to(&tx.bytes, tx.to);
        }
        while let Some(event) = engine.poll_event() {
            if matches!(event, ServerEvent::HandshakeComplete { .. }) {
                shared.handshakes_completed.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
}

/// A running demo server.
pub struct ServerHandle {
    local_addr: SocketAddr,
    shared: Arc<ServerShared>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn handshakes_completed(&self) -> u64 {
        self.shared.handshakes_completed.load(Ordering::Relaxed)
    }

    pub fn connection_count(&self) -> usize {
        self.shared.engine.lock().expect("engine lock").connection_count()
    }

    pub fn stats(&self) -> ServerStats {
        self.shared.engine.lock().expect("engine lock").stats()
    }

    pub fn shutdown(mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

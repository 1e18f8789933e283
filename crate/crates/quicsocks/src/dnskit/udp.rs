//! Blocking UDP shell around [`AuthorityServer`], for fixtures that need a
//! resolver on a real socket.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::authority::{AuthorityServer, ObservedQuery};

const POLL_INTERVAL: Duration = Duration::from_millis(25);

/// Serves `authority` on a socket bound to `bind` until the handle is
/// dropped or shut down.
pub fn serve_udp(authority: AuthorityServer, bind: SocketAddr) -> std::io::Result<AuthorityHandle> {
    let socket = UdpSocket::bind(bind)?;
    socket.set_read_timeout(Some(POLL_INTERVAL))?;
    let local_addr = socket.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let authority = Arc::new(Mutex::new(authority));
    let thread = {
        let stop = stop.clone();
        let authority = authority.clone();
        std::thread::spawn(move || {
            let started = Instant::now();
            let mut buf = [0u8; 2048];
            while !stop.load(Ordering::Relaxed) {
                let (n, from) = match socket.recv_from(&mut buf) {
                    Ok(pair) => pair,
                    Err(_) => continue,
                };
                let now_ms = started.elapsed().as_secs_f64() * 1_000.0;
                let reply = {
                    let mut authority = authority.lock().expect("authority lock");
                    authority.handle(from, &buf[..n], now_ms)
                };
                if let Some(reply) = reply {
                    let _ = socket.send_to(&reply, from);
                }
            }
        })
    };
    Ok(AuthorityHandle {
        local_addr,
        stop,
        authority,
        thread: Some(thread),
    })
}

pub struct AuthorityHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    authority: Arc<Mutex<AuthorityServer>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl AuthorityHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn observations(&self) -> Vec<ObservedQuery> {
        self.authority.lock().expect("authority lock").observations().to_vec()
    }

    /// The query log in its interchange format, one JSON object per line.
    pub fn observations_json_lines(&self) -> String {
        self.authority.lock().expect("authority lock").observations_json_lines()
    }

    pub fn shutdown(mut self) {
        self.stop_thread();
    }

    fn stop_thread(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for AuthorityHandle {
    fn drop(&mut self) {
        self.stop_thread();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnskit::{resolve, QType, Zone};

    #[test]
    fn answers_over_a_real_socket() {
        let zone = Zone::new().with("fixture.example", 60, "192.0.2.9".parse().unwrap());
        let handle =
            serve_udp(AuthorityServer::new(zone), "127.0.0.1:0".parse().unwrap()).unwrap();
        let resolution =
            resolve("fixture.example", QType::A, handle.local_addr(), 1_000, 2).unwrap();
        assert_eq!(resolution.addrs, vec!["192.0.2.9".parse::<std::net::IpAddr>().unwrap()]);
        assert_eq!(handle.observations().len(), 1);
        handle.shutdown();
    }
}

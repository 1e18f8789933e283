//! Resolver discovery: learn which resolver actually serves a client by
//! querying a fresh random name and reading the authoritative log.
//!
//! Whoever asks the responder for that exact name is the resolver in the
//! client's path. The probe's answer content is irrelevant; a resolution
//! failure still counts if the query was observed.

use std::net::SocketAddr;
use std::time::{Duration, Instant};

use super::authority::{pair_probe, probe_name, ObservedQuery, ResolverObservation};
use super::resolver::ResolveError;
use super::wire::QType;

#[derive(Debug, thiserror::Error)]
pub enum DiscoveryError {
    /// No iterative query for the probe reached the responder: either the
    /// resolver answered from cache or the probe was lost.
    #[error("no query for the probe reached the responder within {0} ms")]
    Timeout(u64),
    /// The probe failed AND the responder saw nothing; the resolve error
    /// is the better diagnostic then.
    #[error("probe resolution failed: {0}")]
    Resolve(ResolveError),
}

/// Probes `<random>.<authority_zone>` through `configured_resolver` and
/// pairs the probe against the responder's observation log, polled via
/// `observations` until `deadline_ms` runs out.
pub fn discover_resolver(
    authority_zone: &str,
    configured_resolver: SocketAddr,
    mut observations: impl FnMut() -> Vec<ObservedQuery>,
    deadline_ms: u64,
) -> Result<ResolverObservation, DiscoveryError> {
    let probe = probe_name(authority_zone, &mut rand::thread_rng());
    let resolve_outcome = super::resolve(&probe, QType::A, configured_resolver, 1_000, 2);
    let deadline = Instant::now() + Duration::from_millis(deadline_ms);
    loop {
        if let Some(obs) = pair_probe(&probe, configured_resolver, &observations()) {
            return Ok(obs);
        }
        if Instant::now() >= deadline {
            break;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    match resolve_outcome {
        Err(e) => Err(DiscoveryError::Resolve(e)),
        Ok(_) => Err(DiscoveryError::Timeout(deadline_ms)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnskit::{AuthorityServer, Zone};
    use std::net::UdpSocket;
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::{Arc, Mutex};

    struct LiveAuthority {
        addr: SocketAddr,
        server: Arc<Mutex<AuthorityServer>>,
        stop: Arc<AtomicBool>,
        thread: Option<std::thread::JoinHandle<()>>,
    }

    impl LiveAuthority {
        fn spawn(server: AuthorityServer) -> LiveAuthority {
            let socket = UdpSocket::bind("127.0.0.1:0").unwrap();
            socket
                .set_read_timeout(Some(Duration::from_millis(20)))
                .unwrap();
            let addr = socket.local_addr().unwrap();
            let server = Arc::new(Mutex::new(server));
            let stop = Arc::new(AtomicBool::new(false));
            let thread = {
                let server = server.clone();
                let stop = stop.clone();
                std::thread::spawn(move || {
                    let mut buf = [0u8; 2048];
                    while !stop.load(Ordering::Relaxed) {
                        if let Ok((n, from)) = socket.recv_from(&mut buf) {
                            let reply = server.lock().unwrap().handle(from, &buf[..n], 0.0);
                            if let Some(reply) = reply {
                                let _ = socket.send_to(&reply, from);
                            }
                        }
                    }
                })
            };
            LiveAuthority {
                addr,
                server,
                stop,
                thread: Some(thread),
            }
        }

        fn observations(&self) -> impl FnMut() -> Vec<ObservedQuery> + '_ {
            move || self.server.lock().unwrap().observations().to_vec()
        }
    }

    impl Drop for LiveAuthority {
        fn drop(&mut self) {
            self.stop.store(true, Ordering::Relaxed);
            if let Some(thread) = self.thread.take() {
                let _ = thread.join();
            }
        }
    }

    /// One socket in, same socket out: what the authority sees as the query
    /// source is this forwarder's own address.
    fn spawn_forwarder(
        upstream: SocketAddr,
        stop: Arc<AtomicBool>,
    ) -> (SocketAddr, std::thread::JoinHandle<()>) {
        let socket = UdpSocket::bind("127.0.0.1:0").unwrap();
        socket
            .set_read_timeout(Some(Duration::from_millis(20)))
            .unwrap();
        let addr = socket.local_addr().unwrap();
        let thread = std::thread::spawn(move || {
            let mut buf = [0u8; 2048];
            let mut waiting: Option<SocketAddr> = None;
            while !stop.load(Ordering::Relaxed) {
                if let Ok((n, from)) = socket.recv_from(&mut buf) {
                    if from == upstream {
                        if let Some(client) = waiting.take() {
                            let _ = socket.send_to(&buf[..n], client);
                        }
                    } else {
                        waiting = Some(from);
                        let _ = socket.send_to(&buf[..n], upstream);
                    }
                }
            }
        });
        (addr, thread)
    }

    #[test]
    fn direct_client_is_its_own_resolver() {
        let authority =
            LiveAuthority::spawn(AuthorityServer::with_authority(
                Zone::new(),
                "probe.test",
                [127, 0, 0, 1].into(),
            ));
        let obs =
            discover_resolver("probe.test", authority.addr, authority.observations(), 2_000)
                .unwrap();
        assert_eq!(obs.resolver.ip(), authority.addr.ip());
        assert_eq!(obs.configured_resolver, authority.addr);
        assert!(obs.queried_name.ends_with(".probe.test"));
    }

    #[test]
    fn interposed_forwarder_is_reported() {
        let authority =
            LiveAuthority::spawn(AuthorityServer::with_authority(
                Zone::new(),
                "probe.test",
                [127, 0, 0, 1].into(),
            ));
        let stop = Arc::new(AtomicBool::new(false));
        let (forwarder_addr, thread) = spawn_forwarder(authority.addr, stop.clone());

        let obs =
            discover_resolver("probe.test", forwarder_addr, authority.observations(), 2_000)
                .unwrap();
        assert_eq!(obs.resolver, forwarder_addr);
        assert_eq!(obs.configured_resolver, forwarder_addr);

        stop.store(true, Ordering::Relaxed);
        thread.join().unwrap();
    }

    #[test]
    fn sequential_probes_pair_distinctly() {
        let authority =
            LiveAuthority::spawn(AuthorityServer::with_authority(
                Zone::new(),
                "probe.test",
                [127, 0, 0, 1].into(),
            ));
        let first =
            discover_resolver("probe.test", authority.addr, authority.observations(), 2_000)
                .unwrap();
        let second =
            discover_resolver("probe.test", authority.addr, authority.observations(), 2_000)
                .unwrap();
        assert_ne!(first.queried_name, second.queried_name);
        assert_eq!(authority.server.lock().unwrap().observations().len(), 2);
    }

    #[test]
    fn cache_only_resolver_times_out() {
        // The resolver the client talks to synthesizes answers itself, so
        // nothing ever reaches the responder whose log we watch.
        let watched =
            LiveAuthority::spawn(AuthorityServer::with_authority(
                Zone::new(),
                "probe.test",
                [127, 0, 0, 1].into(),
            ));
        let cache_like =
            LiveAuthority::spawn(AuthorityServer::with_authority(
                Zone::new(),
                "probe.test",
                [127, 0, 0, 1].into(),
            ));
        let err = discover_resolver(
            "probe.test",
            cache_like.addr,
            watched.observations(),
            200,
        )
        .unwrap_err();
        assert!(matches!(err, DiscoveryError::Timeout(200)));
    }
}

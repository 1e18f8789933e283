//! Resolver discovery run in the simulator.
//!
//! A client resolves random-label probe names through the resolver it was
//! configured with; the authoritative responder for the probe zone logs who
//! actually asked. Pairing each probe label against that log names the
//! resolver doing the client's lookups, which the configuration alone
//! cannot reveal once forwarders are involved.

use std::net::SocketAddr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::dnskit::{
    pair_probe, probe_name, AuthorityServer, QType, ResolverObservation, StubResolver, Zone,
};
use crate::netsim::{Actor, Ctx, Sim, Topology};

use super::actors::{ForwardingResolverActor, ResolverActor, CLIENT_DNS_PORT, DNS_PORT};

/// The zone delegated to the logging responder.
pub const AUTHORITY_ZONE: &str = "probes.example";

/// What one probe produced: resolution outcome, then the log pairing.
#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub name: String,
    pub resolved: bool,
    pub paired: Option<ResolverObservation>,
}

/// A whole discovery session.
pub struct DiscoveryReport {
    pub outcomes: Vec<ProbeOutcome>,
    /// The resolver the client was configured with.
    pub configured: SocketAddr,
    /// The last forwarder before the authority; what pairing should name.
    pub last_hop: SocketAddr,
}

impl DiscoveryReport {
    /// Probes whose pairing exists and names the last hop exactly.
    pub fn correctly_paired(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| {
                o.paired
                    .as_ref()
                    .is_some_and(|p| p.resolver == self.last_hop && p.queried_name == o.name)
            })
            .count()
    }
}

/// Issues `count` probes strictly one after another, each through a fresh
/// stub query against the configured resolver.
struct ProbeClientActor {
    dns_addr: SocketAddr,
    configured: SocketAddr,
    remaining: usize,
    rng: ChaCha20Rng,
    stub: Option<StubResolver>,
    current: Option<String>,
    results: Vec<(String, bool)>,
    seed: u64,
}

impl ProbeClientActor {
    fn new(dns_addr: SocketAddr, configured: SocketAddr, count: usize, seed: u64) -> Self {
        ProbeClientActor {
            dns_addr,
            configured,
            remaining: count,
            rng: ChaCha20Rng::seed_from_u64(seed),
            stub: None,
            current: None,
            results: Vec::new(),
            seed,
        }
    }

    fn next_probe(&mut self, ctx: &mut Ctx<'_>) {
        if self.remaining == 0 {
            self.stub = None;
            self.current = None;
            return;
        }
        self.remaining -= 1;
        let name = probe_name(AUTHORITY_ZONE, &mut self.rng);
        let mut stub = StubResolver::new(
            self.configured,
            1_000.0,
            2,
            self.seed.wrapping_add(self.results.len() as u64),
        );
        stub.start_query(&name, QType::A, ctx.now_ms())
            .expect("probe names are valid");
        while let Some((to, bytes)) = stub.poll_transmit() {
            ctx.send(self.dns_addr, to, bytes);
        }
        self.current = Some(name);
        self.stub = Some(stub);
    }
}

impl Actor for ProbeClientActor {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        self.next_probe(ctx);
    }

    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, _local: SocketAddr, from: SocketAddr, bytes: &[u8]) {
        let Some(stub) = self.stub.as_mut() else {
            return;
        };
        stub.on_datagram(from, bytes);
        while let Some((to, out)) = stub.poll_transmit() {
            ctx.send(self.dns_addr, to, out);
        }
        if let Some((_, outcome)) = stub.poll_result() {
            let name = self.current.take().expect("a probe was outstanding");
            self.results.push((name, outcome.is_ok()));
            self.next_probe(ctx);
        }
    }
}

/// Runs `count` sequential probes through `hops` chained forwarders and
/// pairs every probe against the authority's log.
pub fn run_discovery(count: usize, hops: usize, seed: u64) -> DiscoveryReport {
    assert!(hops >= 1, "at least one forwarder");
    let mut topology = Topology::new().host("client").host("authority");
    for i in 0..hops {
        topology = topology.host(&format!("fwd{i}"));
    }
    topology = topology.link("client", "fwd0", 5.0, 5.0);
    for i in 1..hops {
        topology = topology.link(&format!("fwd{}", i - 1), &format!("fwd{i}"), 2.0, 2.0);
    }
    topology = topology.link(&format!("fwd{}", hops - 1), "authority", 3.0, 3.0);
    let mut sim = Sim::new(&topology, seed).expect("valid topology");

    let client_ip = sim.ip_of("client").expect("client host");
    let authority_ip = sim.ip_of("authority").expect("authority host");
    let authority_addr = SocketAddr::new(authority_ip, DNS_PORT);
    // Synthesized answers point at the authority itself; the probes only
    // care that resolution succeeds.
    let responder = AuthorityServer::with_authority(Zone::new(), AUTHORITY_ZONE, authority_ip);
    sim.add_actor("authority", Box::new(ResolverActor::new(responder)))
        .expect("authority actor");

    let mut next_upstream = authority_addr;
    let mut hop_addrs = vec![SocketAddr::new(client_ip, 0); hops];
    for i in (0..hops).rev() {
        let name = format!("fwd{i}");
        let ip = sim.ip_of(&name).expect("forwarder host");
        let fwd = ForwardingResolverActor::new(ip, next_upstream);
        hop_addrs[i] = fwd.addr();
        next_upstream = fwd.addr();
        sim.add_actor(&name, Box::new(fwd)).expect("forwarder actor");
    }
    let configured = hop_addrs[0];
    let last_hop = hop_addrs[hops - 1];

    let client = ProbeClientActor::new(
        SocketAddr::new(client_ip, CLIENT_DNS_PORT),
        configured,
        count,
        seed,
    );
    sim.add_actor("client", Box::new(client)).expect("client actor");

    let run = sim.run_until_quiescent(600_000.0);
    assert!(run.quiescent, "discovery run left events pending");

    let client: &ProbeClientActor = sim.actor("client").expect("client back out");
    let authority: &ResolverActor = sim.actor("authority").expect("authority back out");
    let observed = authority.observations();
    let outcomes = client
        .results
        .iter()
        .map(|(name, resolved)| ProbeOutcome {
            name: name.clone(),
            resolved: *resolved,
            paired: pair_probe(name, configured, observed),
        })
        .collect();
    DiscoveryReport {
        outcomes,
        configured,
        last_hop,
    }
}

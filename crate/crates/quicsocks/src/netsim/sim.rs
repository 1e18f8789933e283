//! Single-threaded discrete-event simulator.
//!
//! Time is logical, kept internally in integer nanoseconds so delivery times
//! are exact: delivery = send + configured one-way delay, no float drift.
//! Events with equal timestamps fire in insertion order. One actor per host;
//! an actor owns every port on its address.

use std::any::Any;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::net::{IpAddr, SocketAddr};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::topology::{ms_to_ns, Resolved, Topology, TopologyError};
use super::trace::{classify, DeliveryStatus, Trace, TraceRecord};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("no host named {0:?}")]
    UnknownHost(String),
    #[error("host {0:?} already has an actor")]
    DuplicateActor(String),
}

/// Protocol code plugged into the simulator. Callbacks run sequentially on
/// one thread, so implementations need no synchronization; anything they
/// want to do later must go through timers, not threads.
pub trait Actor: Any {
    /// Runs once before any datagram flows.
    fn on_start(&mut self, _ctx: &mut Ctx<'_>) {}
    /// A datagram arrived: `local` is the address it was sent to, `from` the
    /// source address the sender claimed.
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, local: SocketAddr, from: SocketAddr, bytes: &[u8]);
    fn on_timer(&mut self, _ctx: &mut Ctx<'_>, _key: u64) {}
}

/// The simulator face an actor sees while handling an event.
pub struct Ctx<'a> {
    core: &'a mut SimCore,
}

impl Ctx<'_> {
    pub fn now_ms(&self) -> f64 {
        self.core.now_ms()
    }

    /// Sends a datagram. `from` is recorded as the source address verbatim:
    /// like real UDP, the simulator does not stop an actor from claiming an
    /// address that is not its own. Honesty is asserted over traces.
    pub fn send(&mut self, from: SocketAddr, to: SocketAddr, bytes: Vec<u8>) {
        self.core.send(from, to, bytes);
    }

    /// Arms a one-shot timer; `key` comes back in `on_timer`. Times in the
    /// past fire immediately (at the current time).
    pub fn set_timer(&mut self, at_ms: f64, key: u64) {
        self.core.set_timer(at_ms, key);
    }
}

#[derive(Debug)]
enum EventKind {
    Deliver {
        host: usize,
        local: SocketAddr,
        from: SocketAddr,
        bytes: Vec<u8>,
    },
    Timer {
        host: usize,
        key: u64,
    },
}

struct Queued {
    at_ns: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.at_ns, self.seq) == (other.at_ns, other.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want earliest (time, seq).
        (other.at_ns, other.seq).cmp(&(self.at_ns, self.seq))
    }
}

struct SimCore {
    resolved: Resolved,
    queue: BinaryHeap<Queued>,
    seq: u64,
    now_ns: u64,
    trace: Trace,
    link_rngs: Vec<ChaCha20Rng>,
    current_host: usize,
}

impl SimCore {
    fn now_ms(&self) -> f64 {
        self.now_ns as f64 / 1e6
    }

    fn push(&mut self, at_ns: u64, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Queued { at_ns, seq, kind });
    }

    fn send(&mut self, from: SocketAddr, to: SocketAddr, bytes: Vec<u8>) {
        let tag = classify(&bytes);
        let record = |status| TraceRecord {
            t_ms: self.now_ns as f64 / 1e6,
            src: from,
            dst: to,
            len: bytes.len(),
            tag,
            status,
            bytes: bytes.clone(),
        };
        let Some(&dst_host) = self.resolved.ip_to_host.get(&to.ip()) else {
            self.trace.push(record(DeliveryStatus::Unreachable));
            return;
        };
        let Some(&(link, src_is_a)) = self.resolved.adj.get(&(self.current_host, dst_host))
        else {
            self.trace.push(record(DeliveryStatus::Unreachable));
            return;
        };
        let profile = &self.resolved.links[link];
        if profile.loss > 0.0 && self.link_rngs[link].gen::<f64>() < profile.loss {
            self.trace.push(record(DeliveryStatus::Lost));
            return;
        }
        let delay_ns = if src_is_a {
            profile.delay_ab_ns
        } else {
            profile.delay_ba_ns
        };
        let at_ns = self.now_ns + delay_ns;
        self.trace.push(record(DeliveryStatus::Delivered {
            arrive_ms: at_ns as f64 / 1e6,
        }));
        self.push(
            at_ns,
            EventKind::Deliver {
                host: dst_host,
                local: to,
                from,
                bytes,
            },
        );
    }

    fn set_timer(&mut self, at_ms: f64, key: u64) {
        let at_ns = ms_to_ns(at_ms).max(self.now_ns);
        let host = self.current_host;
        self.push(at_ns, EventKind::Timer { host, key });
    }
}

/// Outcome of a run: whether the event queue drained, and what remains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunReport {
    pub quiescent: bool,
    pub pending_events: usize,
    pub now_ms: f64,
}

pub struct Sim {
    core: SimCore,
    actors: Vec<Option<Box<dyn Actor>>>,
    host_index: BTreeMap<String, usize>,
    started: bool,
}

impl Sim {
    /// Validates the topology and builds the network. Identical topologies,
    /// seeds, and actor behavior yield byte-identical traces.
    pub fn new(topology: &Topology, seed: u64) -> Result<Self, TopologyError> {
        let resolved = topology.resolve()?;
        let link_rngs = (0..resolved.links.len())
            .map(|i| {
                // Stream per link, decorrelated from the global seed.
                ChaCha20Rng::seed_from_u64(
                    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                )
            })
            .collect();
        let host_index = resolved
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let actors = resolved.names.iter().map(|_| None).collect();
        Ok(Sim {
            core: SimCore {
                resolved,
                queue: BinaryHeap::new(),
                seq: 0,
                now_ns: 0,
                trace: Trace::default(),
                link_rngs,
                current_host: 0,
            },
            actors,
            host_index,
            started: false,
        })
    }

    pub fn ip_of(&self, host: &str) -> Option<IpAddr> {
        self.host_index
            .get(host)
            .map(|&i| self.core.resolved.ips[i])
    }

    /// Installs the (single) actor for a host.
    pub fn add_actor(&mut self, host: &str, actor: Box<dyn Actor>) -> Result<(), SimError> {
        let &idx = self
            .host_index
            .get(host)
            .ok_or_else(|| SimError::UnknownHost(host.to_string()))?;
        if self.actors[idx].is_some() {
            return Err(SimError::DuplicateActor(host.to_string()));
        }
        self.actors[idx] = Some(actor);
        Ok(())
    }

    /// Borrows a host's actor back out, typed; for post-run inspection.
    pub fn actor<T: Actor>(&self, host: &str) -> Option<&T> {
        let &idx = self.host_index.get(host)?;
        let actor = self.actors[idx].as_deref()?;
        (actor as &dyn Any).downcast_ref::<T>()
    }

    pub fn trace(&self) -> &Trace {
        &self.core.trace
    }

    pub fn now_ms(&self) -> f64 {
        self.core.now_ms()
    }

    /// Runs until no events remain. Equivalent to an unbounded deadline.
    pub fn run(&mut self) -> RunReport {
        self.run_until_quiescent(f64::INFINITY)
    }

    /// Drives the event loop until the queue drains or the next event lies
    /// beyond `deadline_ms`. Hitting the deadline leaves those events
    /// pending and is reported; the trace is complete either way.
    pub fn run_until_quiescent(&mut self, deadline_ms: f64) -> RunReport {
        let deadline_ns = ms_to_ns(deadline_ms);
        if !self.started {
            self.started = true;
            for host in 0..self.actors.len() {
                self.with_actor(host, |actor, ctx| actor.on_start(ctx));
            }
        }
        loop {
            match self.core.queue.peek() {
                None => {
                    return RunReport {
                        quiescent: true,
                        pending_events: 0,
                        now_ms: self.core.now_ms(),
                    }
                }
                Some(head) if head.at_ns > deadline_ns => {
                    return RunReport {
                        quiescent: false,
                        pending_events: self.core.queue.len(),
                        now_ms: self.core.now_ms(),
                    }
                }
                Some(_) => {}
            }
            let ev = self.core.queue.pop().expect("peeked above");
            self.core.now_ns = ev.at_ns;
            match ev.kind {
                EventKind::Deliver {
                    host,
                    local,
                    from,
                    bytes,
                } => self.with_actor(host, |actor, ctx| {
                    actor.on_datagram(ctx, local, from, &bytes)
                }),
                EventKind::Timer { host, key } => {
                    self.with_actor(host, |actor, ctx| actor.on_timer(ctx, key))
                }
            }
        }
    }

    fn with_actor(&mut self, host: usize, f: impl FnOnce(&mut dyn Actor, &mut Ctx<'_>)) {
        // Taken out for the duration of the callback so the actor can use
        // the full simulator context without aliasing itself.
        let Some(mut actor) = self.actors[host].take() else {
            return;
        };
        self.core.current_host = host;
        let mut ctx = Ctx { core: &mut self.core };
        f(actor.as_mut(), &mut ctx);
        self.actors[host] = Some(actor);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sock(ip: IpAddr, port: u16) -> SocketAddr {
        SocketAddr::new(ip, port)
    }

    /// Sends one ping at start, echoes everything back, records times.
    struct Pinger {
        me: SocketAddr,
        peer: SocketAddr,
        send_at_start: bool,
        heard_at: Vec<f64>,
    }

    impl Pinger {
        fn new(me: SocketAddr, peer: SocketAddr, send_at_start: bool) -> Self {
            Pinger {
                me,
                peer,
                send_at_start,
                heard_at: Vec::new(),
            }
        }
    }

    impl Actor for Pinger {
        fn on_start(&mut self, ctx: &mut Ctx<'_>) {
            if self.send_at_start {
                ctx.send(self.me, self.peer, b"ping".to_vec());
            }
        }
        fn on_datagram(
            &mut self,
            ctx: &mut Ctx<'_>,
            _local: SocketAddr,
            from: SocketAddr,
            bytes: &[u8],
        ) {
            self.heard_at.push(ctx.now_ms());
            if bytes == b"ping" {
                ctx.send(self.me, from, b"pong".to_vec());
            }
        }
    }

    fn two_hosts(delay_ab: f64, delay_ba: f64, loss: f64) -> (Sim, SocketAddr, SocketAddr) {
        let topo = Topology::new()
            .host_at("a", "10.0.0.1")
            .host_at("b", "10.0.0.2")
            .lossy_link("a", "b", delay_ab, delay_ba, loss);
        let sim = Sim::new(&topo, 7).unwrap();
        let a = sock(sim.ip_of("a").unwrap(), 1000);
        let b = sock(sim.ip_of("b").unwrap(), 2000);
        (sim, a, b)
    }

    #[test]
    fn delivery_times_are_exact() {
        let (mut sim, a, b) = two_hosts(15.0, 10.0, 0.0);
        sim.add_actor("a", Box::new(Pinger::new(a, b, true))).unwrap();
        sim.add_actor("b", Box::new(Pinger::new(b, a, false))).unwrap();
        let report = sim.run();
        assert!(report.quiescent);
        assert_eq!(report.now_ms, 25.0);
        assert_eq!(sim.actor::<Pinger>("b").unwrap().heard_at, vec![15.0]);
        assert_eq!(sim.actor::<Pinger>("a").unwrap().heard_at, vec![25.0]);
        let records = sim.trace().records();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].status, DeliveryStatus::Delivered { arrive_ms: 15.0 });
        assert_eq!(records[1].t_ms, 15.0);
        assert_eq!(records[1].status, DeliveryStatus::Delivered { arrive_ms: 25.0 });
        assert_eq!(records[1].bytes, b"pong");
    }

    /// Sends `count` datagrams at start, all at the same instant.
    struct Burst {
        me: SocketAddr,
        peer: SocketAddr,
        count: usize,
    }
    impl Actor for Burst {
        fn on_start(&mut self, ctx: &mut Ctx<'_>) {
            for i in 0..self.count {
                ctx.send(self.me, self.peer, vec![i as u8]);
            }
        }
        fn on_datagram(&mut self, _: &mut Ctx<'_>, _: SocketAddr, _: SocketAddr, _: &[u8]) {}
    }

    /// Remembers payloads in arrival order.
    #[derive(Default)]
    struct Sink {
        got: Vec<Vec<u8>>,
    }
    impl Actor for Sink {
        fn on_datagram(&mut self, _: &mut Ctx<'_>, _: SocketAddr, _: SocketAddr, bytes: &[u8]) {
            self.got.push(bytes.to_vec());
        }
    }

    #[test]
    fn equal_timestamps_fire_in_send_order() {
        let (mut sim, a, b) = two_hosts(5.0, 5.0, 0.0);
        sim.add_actor("a", Box::new(Burst { me: a, peer: b, count: 50 }))
            .unwrap();
        sim.add_actor("b", Box::<Sink>::default()).unwrap();
        sim.run();
        let got = &sim.actor::<Sink>("b").unwrap().got;
        let expect: Vec<Vec<u8>> = (0..50u8).map(|i| vec![i]).collect();
        assert_eq!(*got, expect);
    }

    #[test]
    fn total_loss_delivers_nothing_but_traces_everything() {
        let (mut sim, a, b) = two_hosts(5.0, 5.0, 1.0);
        sim.add_actor("a", Box::new(Burst { me: a, peer: b, count: 10 }))
            .unwrap();
        sim.add_actor("b", Box::<Sink>::default()).unwrap();
        let report = sim.run();
        assert!(report.quiescent);
        assert!(sim.actor::<Sink>("b").unwrap().got.is_empty());
        assert_eq!(sim.trace().len(), 10, "dropped datagrams still traced");
        assert!(sim
            .trace()
            .records()
            .iter()
            .all(|r| r.status == DeliveryStatus::Lost));
    }

    #[test]
    fn lossy_runs_are_deterministic() {
        let run = || {
            let (mut sim, a, b) = two_hosts(5.0, 5.0, 0.5);
            sim.add_actor("a", Box::new(Burst { me: a, peer: b, count: 100 }))
                .unwrap();
            sim.add_actor("b", Box::<Sink>::default()).unwrap();
            sim.run();
            sim.trace().clone()
        };
        let first = run();
        let second = run();
        assert_eq!(first, second, "same seed, same trace, bytes included");
        let delivered = first.records().iter().filter(|r| r.delivered()).count();
        assert!(delivered > 0 && delivered < 100, "loss 0.5 drops some, not all");
    }

    #[test]
    fn unlinked_pairs_are_unreachable() {
        let topo = Topology::new()
            .host_at("a", "10.0.0.1")
            .host_at("b", "10.0.0.2")
            .host_at("c", "10.0.0.3")
            .link("a", "b", 1.0, 1.0);
        let mut sim = Sim::new(&topo, 1).unwrap();
        let a = sock(sim.ip_of("a").unwrap(), 1);
        let c = sock(sim.ip_of("c").unwrap(), 1);
        sim.add_actor("a", Box::new(Burst { me: a, peer: c, count: 1 }))
            .unwrap();
        sim.add_actor("c", Box::<Sink>::default()).unwrap();
        sim.run();
        assert!(sim.actor::<Sink>("c").unwrap().got.is_empty());
        assert_eq!(sim.trace().records()[0].status, DeliveryStatus::Unreachable);
        // Same for an address that belongs to no host at all.
        let mut sim2 = Sim::new(&topo, 1).unwrap();
        sim2.add_actor(
            "a",
            Box::new(Burst { me: a, peer: "10.255.0.9:1".parse().unwrap(), count: 1 }),
        )
        .unwrap();
        sim2.run();
        assert_eq!(sim2.trace().records()[0].status, DeliveryStatus::Unreachable);
    }

    struct TimerActor {
        fired: Vec<(u64, f64)>,
    }
    impl Actor for TimerActor {
        fn on_start(&mut self, ctx: &mut Ctx<'_>) {
            ctx.set_timer(12.5, 2);
            ctx.set_timer(3.0, 1);
            ctx.set_timer(12.5, 3);
        }
        fn on_datagram(&mut self, _: &mut Ctx<'_>, _: SocketAddr, _: SocketAddr, _: &[u8]) {}
        fn on_timer(&mut self, ctx: &mut Ctx<'_>, key: u64) {
            self.fired.push((key, ctx.now_ms()));
        }
    }

    #[test]
    fn timers_fire_in_time_then_insertion_order() {
        let topo = Topology::new().host("solo");
        let mut sim = Sim::new(&topo, 0).unwrap();
        sim.add_actor("solo", Box::new(TimerActor { fired: Vec::new() }))
            .unwrap();
        let report = sim.run();
        assert!(report.quiescent);
        assert_eq!(
            sim.actor::<TimerActor>("solo").unwrap().fired,
            vec![(1, 3.0), (2, 12.5), (3, 12.5)]
        );
    }

    #[test]
    fn deadline_leaves_events_pending_but_reports_them() {
        let (mut sim, a, b) = two_hosts(50.0, 50.0, 0.0);
        sim.add_actor("a", Box::new(Burst { me: a, peer: b, count: 2 }))
            .unwrap();
        sim.add_actor("b", Box::<Sink>::default()).unwrap();
        let report = sim.run_until_quiescent(10.0);
        assert!(!report.quiescent);
        assert_eq!(report.pending_events, 2);
        assert_eq!(sim.trace().len(), 2, "sends already traced");
        // Resuming with a later deadline delivers them.
        let report = sim.run_until_quiescent(100.0);
        assert!(report.quiescent);
        assert_eq!(sim.actor::<Sink>("b").unwrap().got.len(), 2);
    }

    #[test]
    fn empty_network_empty_trace() {
        let topo = Topology::new().host("a").host("b");
        let mut sim = Sim::new(&topo, 0).unwrap();
        let report = sim.run();
        assert!(report.quiescent);
        assert!(sim.trace().is_empty());
        assert_eq!(report.now_ms, 0.0);
    }

    #[test]
    fn zero_delay_exchanges_complete_at_time_zero() {
        let (mut sim, a, b) = two_hosts(0.0, 0.0, 0.0);
        sim.add_actor("a", Box::new(Pinger::new(a, b, true))).unwrap();
        sim.add_actor("b", Box::new(Pinger::new(b, a, false))).unwrap();
        let report = sim.run();
        assert!(report.quiescent);
        assert_eq!(report.now_ms, 0.0);
        assert_eq!(sim.actor::<Pinger>("a").unwrap().heard_at, vec![0.0]);
    }

    #[test]
    fn actor_registration_errors() {
        let topo = Topology::new().host("a");
        let mut sim = Sim::new(&topo, 0).unwrap();
        assert_eq!(
            sim.add_actor("nope", Box::<Sink>::default()).unwrap_err(),
            SimError::UnknownHost("nope".into())
        );
        sim.add_actor("a", Box::<Sink>::default()).unwrap();
        assert_eq!(
            sim.add_actor("a", Box::<Sink>::default()).unwrap_err(),
            SimError::DuplicateActor("a".into())
        );
    }
}

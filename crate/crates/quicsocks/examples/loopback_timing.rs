//! The whole system on real sockets: resolver fixture, echo server, relay,
//! and the measuring client in its three modes.
//!
//! default resolves first and connects directly; cold builds the relay
//! association inside the timed window; warm reuses one association across
//! repetitions, which is the intended deployment shape.

use quicsocks::dnskit::{serve_udp, AuthorityServer, Zone};
use quicsocks::endpoint::{run_timing_suite, serve, ConnectConfig, Mode};
use quicsocks::proxy::ProxyServer;
use quicsocks::socks::DomainName;

fn main() {
    let zone = Zone::new().with("echo.example", 300, "127.0.0.1".parse().unwrap());
    let dns = serve_udp(AuthorityServer::new(zone), "127.0.0.1:0".parse().unwrap()).unwrap();
    let server = serve("127.0.0.1:0".parse().unwrap(), true, 11).unwrap();
    let proxy = ProxyServer::new(
        "127.0.0.1:0".parse().unwrap(),
        "127.0.0.1:0".parse().unwrap(),
        dns.local_addr(),
    )
    .start()
    .unwrap();

    println!(
        "resolver {}  server {}  relay control {}",
        dns.local_addr(),
        server.local_addr(),
        proxy.control_addr()
    );

    let reps = 40;
    let target = DomainName::new(&b"echo.example"[..]).unwrap();
    let mut config = ConnectConfig::new(target, server.local_addr().port(), dns.local_addr());
    config.proxy = Some(proxy.control_addr());

    println!("\n{:<8} {:>9} {:>8} {:>10} {:>10}", "mode", "completed", "failed", "min", "median");
    for (i, mode) in [Mode::Default, Mode::Cold, Mode::Warm].into_iter().enumerate() {
        config.mode = mode;
        // Seeds drive connection IDs; the server keeps earlier connections,
        // so each suite needs its own range.
        config.seed = (i as u64 + 1) * 10_000;
        let (records, summary) = run_timing_suite(&config, reps).unwrap();
        assert_eq!(records.len(), reps);
        assert_eq!(summary.completed, reps, "{mode} mode had failures");
        println!(
            "{:<8} {:>9} {:>8} {:>8.2}ms {:>8.2}ms",
            mode.as_str(),
            summary.completed,
            summary.failed,
            summary.min_ms,
            summary.median_ms
        );
    }

    println!("\nproxy metrics: {}", serde_json::to_string(&proxy.metrics()).unwrap());
    proxy.shutdown();
    server.shutdown();
    dns.shutdown();
}

//! A zone file on a UDP socket, with the query log dumped on exit.
//!
//!     cargo run --example dns_fixture -- [zone-file] [bind] [seconds]
//!
//! Useful as the upstream for `qsk proxy` or `qsk client` on loopback. The
//! zone format is one record per line: `name type ttl address`, with `#`
//! comments. Without a file it serves a small demo zone.

use quicsocks::dnskit::{serve_udp, AuthorityServer, Zone};

const DEMO_ZONE: &str = "\
# demo fixture
echo.example      A 300 127.0.0.1
target.example    A 300 127.0.0.1
v6.example     AAAA 300 ::1
";

fn main() {
    let mut args = std::env::args().skip(1);
    let zone_text = match args.next() {
        Some(path) => std::fs::read_to_string(&path).expect("zone file"),
        None => DEMO_ZONE.to_owned(),
    };
    let bind = args.next().unwrap_or_else(|| "127.0.0.1:5399".to_owned());
    let seconds: u64 = args.next().map_or(60, |s| s.parse().expect("seconds"));

    let zone = Zone::parse(&zone_text).expect("zone syntax");
    let handle = serve_udp(AuthorityServer::new(zone), bind.parse().expect("bind address"))
        .expect("bind");
    eprintln!("serving on {} for {seconds} s", handle.local_addr());

    std::thread::sleep(std::time::Duration::from_secs(seconds));

    eprintln!("{} queries observed", handle.observations().len());
    print!("{}", handle.observations_json_lines());
    handle.shutdown();
}

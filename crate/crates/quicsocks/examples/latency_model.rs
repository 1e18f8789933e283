//! The closed-form handshake latency model across a few geometries.
//!
//! Status quo resolves first and handshakes on the direct path; the
//! forwarding setup hands the name to a relay that sits near the resolver,
//! so the first flight rides the relay-to-server leg instead. A retry
//! doubles whichever flight the setup uses.

use quicsocks::latmodel::{model_latency, savings, RttTriple, Scenario};

fn main() {
    let geometries = [
        ("reference", 30.0, 30.0, 60.0),
        ("nearby server", 10.0, 8.0, 12.0),
        ("far server", 40.0, 90.0, 180.0),
        ("slow resolver", 120.0, 30.0, 45.0),
    ];

    println!(
        "{:<14} {:>8} {:>8} {:>8} | {:>10} {:>10} {:>10} {:>10}",
        "geometry", "dns", "server", "direct", "sq", "sq+retry", "fwd", "fwd+retry"
    );
    for (label, dns, server, direct) in geometries {
        let triple = RttTriple {
            node_id: label.to_owned(),
            rtt_dns_ms: dns,
            rtt_server_ms: server,
            rtt_direct_ms: direct,
        };
        let cell = |scenario, retry| model_latency(&triple, scenario, retry);
        println!(
            "{label:<14} {dns:>8} {server:>8} {direct:>8} | {:>10} {:>10} {:>10} {:>10}",
            cell(Scenario::StatusQuo, false),
            cell(Scenario::StatusQuo, true),
            cell(Scenario::Proposal, false),
            cell(Scenario::Proposal, true),
        );
    }

    println!();
    let reference = RttTriple {
        node_id: "reference".to_owned(),
        rtt_dns_ms: 30.0,
        rtt_server_ms: 30.0,
        rtt_direct_ms: 60.0,
    };
    let s = savings(&reference);
    println!(
        "reference savings: {} ms without retry ({:.0}%), {} ms with ({:.0}%)",
        s.no_retry_ms,
        100.0 * s.no_retry_fraction,
        s.retry_ms,
        100.0 * s.retry_fraction,
    );

    assert_eq!(model_latency(&reference, Scenario::StatusQuo, false), 90.0);
    assert_eq!(model_latency(&reference, Scenario::StatusQuo, true), 150.0);
    assert_eq!(model_latency(&reference, Scenario::Proposal, false), 60.0);
    assert_eq!(model_latency(&reference, Scenario::Proposal, true), 90.0);
}

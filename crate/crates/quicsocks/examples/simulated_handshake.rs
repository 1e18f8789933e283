//! All four handshake variants on the simulated reference network, checked
//! against the closed-form model.
//!
//! Every link delay is deterministic, so the simulated completion times are
//! exact: resolve-then-connect costs a DNS round trip plus one (or two, with
//! a retry) direct flights, while the forwarding path overlaps resolution
//! with the relay leg.

use quicsocks::latmodel::{model_latency, RttTriple, Scenario};
use quicsocks::scenarios::{run_handshake, table_reference};

fn main() {
    let reference = RttTriple {
        node_id: "reference".to_owned(),
        rtt_dns_ms: 30.0,
        rtt_server_ms: 30.0,
        rtt_direct_ms: 60.0,
    };

    println!(
        "{:<22} {:>10} {:>10} {:>10} {:>9}",
        "variant", "t_resolved", "t_notify", "t_connect", "model"
    );
    for (proposal, retry) in [(false, false), (false, true), (true, false), (true, true)] {
        let report = run_handshake(&table_reference(proposal, retry));
        assert!(report.quiescent, "network still had traffic in flight");

        let scenario = if proposal { Scenario::Proposal } else { Scenario::StatusQuo };
        let predicted = model_latency(&reference, scenario, retry);
        let connected = report.t_connect_ms.expect("handshake completed");
        assert_eq!(connected, predicted, "simulation disagrees with the model");

        let label = format!(
            "{}{}",
            if proposal { "forwarding" } else { "status quo" },
            if retry { " + retry" } else { "" }
        );
        let opt = |v: Option<f64>| v.map_or("-".to_owned(), |ms| format!("{ms}"));
        println!(
            "{label:<22} {:>10} {:>10} {:>10} {predicted:>9}",
            opt(report.t_resolved_ms),
            opt(report.t_notify_ms),
            connected,
        );
    }

    println!("\nall four variants match the model exactly");
}

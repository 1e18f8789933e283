//! Path migration off the relay.
//!
//! Once the relay reports the resolved address, the client can probe the
//! direct path and, after the handshake commits, move its traffic there.
//! Probing early overlaps the validation round trip with the handshake; how
//! much that buys depends on whether the server demanded a retry.

use quicsocks::scenarios::{run_handshake, table_reference};

fn run(retry: bool, probe_early: bool) {
    let mut scenario = table_reference(true, retry);
    scenario.migration = true;
    scenario.probe_early = probe_early;
    let report = run_handshake(&scenario);
    assert!(report.quiescent);

    let t_connect = report.t_connect_ms.expect("handshake completed");
    let t_migrate = report.t_migrate_ms.expect("migration completed");
    assert_eq!(report.primary_remote, Some(report.server_addr), "traffic ends up direct");
    assert!(report.echoed.is_some(), "echo arrived on the new path");

    println!(
        "  retry {}  probe-early {}:  connect {:>5} ms  migrate {:>5} ms  echo {:>5} ms",
        if retry { "on " } else { "off" },
        if probe_early { "on " } else { "off" },
        t_connect,
        t_migrate,
        report.t_echo_ms.unwrap(),
    );
}

fn main() {
    println!("reference geometry, forwarding setup, migration on:");
    for retry in [false, true] {
        for probe_early in [false, true] {
            run(retry, probe_early);
        }
    }
    println!();
    println!("an early probe saves up to half a direct round trip; the");
    println!("validated path then carries the application traffic itself");
}

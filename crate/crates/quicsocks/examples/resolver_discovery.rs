//! Which resolver actually asks the question?
//!
//! Each probe resolves a unique random label under a zone we control, and
//! the authoritative responder logs who asked. Pairing the log entry back
//! to the probe by its label names the final hop of the client's resolver
//! chain, even through forwarders the client never configured.

use quicsocks::scenarios::run_discovery;

fn main() {
    let report = run_discovery(8, 3, 2026);

    println!("configured resolver: {}", report.configured);
    println!("actual last hop:     {}", report.last_hop);
    println!();
    for outcome in &report.outcomes {
        let paired = outcome
            .paired
            .as_ref()
            .map_or("unpaired".to_owned(), |obs| obs.resolver.to_string());
        println!("  {}  resolved {}  paired to {}", outcome.name, outcome.resolved, paired);
    }

    assert_ne!(report.configured, report.last_hop, "the chain hid the real resolver");
    assert_eq!(report.correctly_paired(), report.outcomes.len());
    println!();
    println!(
        "{} of {} probes paired to the true last hop through 3 forwarders",
        report.correctly_paired(),
        report.outcomes.len()
    );
}

//! Statistics over a measurement dataset: threshold fractions and CDFs.
//!
//! The bundled fixture is a 1000-node synthetic population whose relay
//! margins (direct minus relay-leg round trip) fall into fixed bands, so
//! the headline fractions come out the same for every seed.

use quicsocks::latmodel::{dataset_stats, emit_cdf, margin_fixture, write_triples};

fn main() {
    let dataset = margin_fixture(42);

    let mut csv = Vec::new();
    write_triples(&mut csv, &dataset).unwrap();
    println!("dataset: {} nodes, {} bytes as CSV", dataset.len(), csv.len());

    let stats = dataset_stats(&dataset).unwrap();
    println!("\nrelay margin at least:");
    for slice in &stats.margin_at_least {
        println!("  {:>5} ms  {:>5.1}%", slice.threshold_ms, 100.0 * slice.fraction);
    }
    println!("resolver under 10 ms: {:.1}%", 100.0 * stats.fast_dns_fraction);

    println!("\nno-retry handshake saving at least:");
    for slice in &stats.savings_no_retry_at_least {
        println!("  {:>5} ms  {:>5.1}%", slice.threshold_ms, 100.0 * slice.fraction);
    }

    let cdf = emit_cdf(&dataset, "handshake_proposal_no_retry").unwrap();
    println!("\nforwarded-handshake CDF ({} distinct values):", cdf.len());
    for target in [0.1, 0.5, 0.9] {
        let point = cdf.iter().find(|p| p.fraction >= target).unwrap();
        println!("  p{:<2.0} <= {} ms", 100.0 * target, point.value);
    }
    assert_eq!(cdf.last().unwrap().fraction, 1.0);

    let lookup = |slices: &[quicsocks::latmodel::ThresholdFraction], ms: f64| {
        slices.iter().find(|s| s.threshold_ms == ms).unwrap().fraction
    };
    assert_eq!(lookup(&stats.margin_at_least, 5.0), 0.510);
    assert_eq!(lookup(&stats.margin_at_least, 10.0), 0.367);
    assert_eq!(lookup(&stats.margin_at_least, 40.0), 0.072);
    assert_eq!(lookup(&stats.margin_at_least, 50.0), 0.038);
    println!("\nband fractions pinned: 51.0 / 36.7 / 7.2 / 3.8");
}

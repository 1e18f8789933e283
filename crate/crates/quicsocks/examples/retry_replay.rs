//! Watch the relay absorb a stateless retry.
//!
//! The server answers the first flight with a RETRY carrying an address
//! validation token. The relay replays the cached initial packet with the
//! token spliced in, so the client completes in one apparent round trip and
//! never handles the retry itself.

use quicsocks::miniquic::{decode_packet, encode_packet, PacketType};
use quicsocks::scenarios::{run_handshake, table_reference, PROXY_UPSTREAM_PORT};

fn main() {
    let mut scenario = table_reference(true, true);
    scenario.seed = 21;
    let report = run_handshake(&scenario);
    assert!(report.quiescent);

    println!("wire trace (relay leg and client legs):");
    for record in report.trace.records() {
        println!(
            "  {:>6.1} ms  {:>21} -> {:<21} {:<10} {} bytes",
            record.t_ms, record.src, record.dst, record.tag, record.len
        );
    }

    let to_server: Vec<_> = report
        .trace
        .records()
        .iter()
        .filter(|r| r.dst == report.server_addr && r.tag == "initial")
        .collect();
    assert_eq!(to_server.len(), 2, "expected the original initial and one replay");
    let first = decode_packet(&to_server[0].bytes).unwrap();
    let replay = decode_packet(&to_server[1].bytes).unwrap();
    assert!(first.token.is_empty());
    assert!(!replay.token.is_empty());

    let retry = report
        .trace
        .records()
        .iter()
        .find(|r| r.tag == "retry")
        .expect("server sent a retry");
    let retry_packet = decode_packet(&retry.bytes).unwrap();
    assert_eq!(retry_packet.ptype, PacketType::Retry);
    assert_eq!(replay.token, retry_packet.token, "replay carries the retry's token");

    let mut spliced = first.clone();
    spliced.token = retry_packet.token.clone();
    assert_eq!(
        encode_packet(&spliced).unwrap(),
        to_server[1].bytes,
        "replay is the cached initial, byte for byte, plus the token"
    );

    let retries_to_client = report
        .trace
        .records()
        .iter()
        .filter(|r| r.dst.ip() == report.client_addr.ip() && r.tag == "retry")
        .count();
    assert_eq!(retries_to_client, 0);
    assert_eq!(report.client_retry_count, 0);
    assert_eq!(report.proxy_metrics.retries_replayed, 1);

    println!();
    println!("retry token: {} bytes, replayed once by the relay", retry_packet.token.len());
    println!("retries seen by the client: 0");
    println!(
        "handshake done at {} ms; relay port was {}",
        report.t_connect_ms.unwrap(),
        PROXY_UPSTREAM_PORT
    );
}

//! Dataset ingestion and report output.
//!
//! The triple format is one row per node under the exact header
//! `node_id,rtt_dns_ms,rtt_server_ms,rtt_direct_ms`. The raw format takes
//! five ping samples per edge and averages them here.

use std::io;
use std::path::Path;

use super::model::RttTriple;
use super::stats::CdfPoint;
use super::LatModelError;

pub const CSV_HEADER: &str = "node_id,rtt_dns_ms,rtt_server_ms,rtt_direct_ms";
pub const RAW_CSV_HEADER: &str = "node_id,edge,s1_ms,s2_ms,s3_ms,s4_ms,s5_ms";

const EDGES: [&str; 3] = ["dns", "server", "direct"];

fn check_header(got: &csv::StringRecord, expected: &'static str) -> Result<(), LatModelError> {
    let joined = got.iter().collect::<Vec<_>>().join(",");
    if joined != expected {
        return Err(LatModelError::BadHeader {
            expected,
            got: joined,
        });
    }
    Ok(())
}

fn parse_ms(field: &str, row: usize) -> Result<f64, LatModelError> {
    let v: f64 = field.parse().map_err(|_| LatModelError::BadRow {
        row,
        problem: format!("not a number: {field:?}"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(LatModelError::BadRow {
            row,
            problem: format!("milliseconds must be finite and nonnegative, got {v}"),
        });
    }
    Ok(v)
}

/// Reads the triple format. Rows are validated; the first bad one aborts.
pub fn read_triples<R: io::Read>(reader: R) -> Result<Vec<RttTriple>, LatModelError> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, CSV_HEADER)?;
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        if record.len() != 4 {
            return Err(LatModelError::BadRow {
                row,
                problem: format!("expected 4 fields, got {}", record.len()),
            });
        }
        out.push(RttTriple {
            node_id: record[0].to_owned(),
            rtt_dns_ms: parse_ms(&record[1], row)?,
            rtt_server_ms: parse_ms(&record[2], row)?,
            rtt_direct_ms: parse_ms(&record[3], row)?,
        });
    }
    Ok(out)
}

pub fn read_triples_path(path: impl AsRef<Path>) -> Result<Vec<RttTriple>, LatModelError> {
    read_triples(std::fs::File::open(path)?)
}

pub fn write_triples<W: io::Write>(
    writer: W,
    dataset: &[RttTriple],
) -> Result<(), LatModelError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER.split(','))?;
    for t in dataset {
        wtr.write_record([
            t.node_id.as_str(),
            &t.rtt_dns_ms.to_string(),
            &t.rtt_server_ms.to_string(),
            &t.rtt_direct_ms.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_triples_path(
    path: impl AsRef<Path>,
    dataset: &[RttTriple],
) -> Result<(), LatModelError> {
    write_triples(std::fs::File::create(path)?, dataset)
}

/// Reads the raw format: five samples per (node, edge) row, edges `dns`,
/// `server`, `direct`. Nodes come out in first-appearance order with each
/// edge averaged. A node missing an edge, or listing one twice, is an error.
pub fn read_raw_samples<R: io::Read>(reader: R) -> Result<Vec<RttTriple>, LatModelError> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, RAW_CSV_HEADER)?;

    let mut order: Vec<String> = Vec::new();
    let mut edges: std::collections::BTreeMap<String, [Option<f64>; 3]> = Default::default();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        if record.len() != 7 {
            return Err(LatModelError::BadRow {
                row,
                problem: format!("expected 7 fields, got {}", record.len()),
            });
        }
        let node = record[0].to_owned();
        let edge = EDGES.iter().position(|e| *e == &record[1]).ok_or_else(|| {
            LatModelError::BadRow {
                row,
                problem: format!("edge must be one of dns/server/direct, got {:?}", &record[1]),
            }
        })?;
        let mut sum = 0.0;
        for field in 2..7 {
            sum += parse_ms(&record[field], row)?;
        }
        let entry = edges.entry(node.clone()).or_insert_with(|| {
            order.push(node.clone());
            [None; 3]
        });
        if entry[edge].is_some() {
            return Err(LatModelError::BadRow {
                row,
                problem: format!("duplicate edge {:?} for node {node:?}", EDGES[edge]),
            });
        }
        entry[edge] = Some(sum / 5.0);
    }

    let mut out = Vec::with_capacity(order.len());
    for node in order {
        let measured = edges[&node];
        for (i, edge) in EDGES.iter().enumerate() {
            if measured[i].is_none() {
                return Err(LatModelError::IncompleteNode {
                    node_id: node,
                    edge,
                });
            }
        }
        out.push(RttTriple {
            node_id: node,
            rtt_dns_ms: measured[0].unwrap(),
            rtt_server_ms: measured[1].unwrap(),
            rtt_direct_ms: measured[2].unwrap(),
        });
    }
    Ok(out)
}

/// Writes CDF points as `value_ms,cumulative_fraction` rows.
pub fn write_cdf<W: io::Write>(writer: W, points: &[CdfPoint]) -> Result<(), LatModelError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["value_ms", "cumulative_fraction"])?;
    for p in points {
        wtr.write_record([p.value.to_string(), p.fraction.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latmodel::{emit_cdf, margin_fixture};

    #[test]
    fn triples_round_trip() {
        let dataset = margin_fixture(9);
        let mut buf = Vec::new();
        write_triples(&mut buf, &dataset).unwrap();
        let back = read_triples(buf.as_slice()).unwrap();
        assert_eq!(back, dataset);
    }

    #[test]
    fn header_is_validated_exactly() {
        let csv = "node,dns,server,direct\nn1,1,2,3\n";
        assert!(matches!(
            read_triples(csv.as_bytes()),
            Err(LatModelError::BadHeader { .. })
        ));
    }

    #[test]
    fn bad_values_name_their_row() {
        let base = "node_id,rtt_dns_ms,rtt_server_ms,rtt_direct_ms\n";
        for bad in ["n1,x,2,3", "n1,-1,2,3", "n1,nan,2,3", "n1,inf,2,3"] {
            let err = read_triples(format!("{base}{bad}\n").as_bytes()).unwrap_err();
            match err {
                LatModelError::BadRow { row, .. } => assert_eq!(row, 2),
                other => panic!("expected BadRow, got {other:?}"),
            }
        }
    }

    #[test]
    fn raw_samples_average_per_edge() {
        let csv = "node_id,edge,s1_ms,s2_ms,s3_ms,s4_ms,s5_ms\n\
                   n1,dns,10,10,10,10,15\n\
                   n1,server,20,20,20,20,20\n\
                   n1,direct,60,60,60,60,60\n";
        let triples = read_raw_samples(csv.as_bytes()).unwrap();
        assert_eq!(triples.len(), 1);
        assert_eq!(triples[0].rtt_dns_ms, 11.0);
        assert_eq!(triples[0].rtt_server_ms, 20.0);
        assert_eq!(triples[0].rtt_direct_ms, 60.0);
    }

    #[test]
    fn raw_samples_keep_first_appearance_order() {
        let csv = "node_id,edge,s1_ms,s2_ms,s3_ms,s4_ms,s5_ms\n\
                   b,dns,1,1,1,1,1\n\
                   a,dns,1,1,1,1,1\n\
                   b,server,2,2,2,2,2\n\
                   a,server,2,2,2,2,2\n\
                   b,direct,3,3,3,3,3\n\
                   a,direct,3,3,3,3,3\n";
        let triples = read_raw_samples(csv.as_bytes()).unwrap();
        let ids: Vec<&str> = triples.iter().map(|t| t.node_id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
    }

    #[test]
    fn raw_samples_missing_edge_rejected() {
        let csv = "node_id,edge,s1_ms,s2_ms,s3_ms,s4_ms,s5_ms\n\
                   n1,dns,1,1,1,1,1\n\
                   n1,server,2,2,2,2,2\n";
        assert!(matches!(
            read_raw_samples(csv.as_bytes()),
            Err(LatModelError::IncompleteNode { edge: "direct", .. })
        ));
    }

    #[test]
    fn raw_samples_duplicate_edge_rejected() {
        let csv = "node_id,edge,s1_ms,s2_ms,s3_ms,s4_ms,s5_ms\n\
                   n1,dns,1,1,1,1,1\n\
                   n1,dns,1,1,1,1,1\n";
        assert!(matches!(
            read_raw_samples(csv.as_bytes()),
            Err(LatModelError::BadRow { row: 3, .. })
        ));
    }

    #[test]
    fn cdf_output_is_plain_two_column_csv() {
        let dataset = margin_fixture(10);
        let points = emit_cdf(&dataset, "rtt_direct_ms").unwrap();
        let mut buf = Vec::new();
        write_cdf(&mut buf, &points).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("value_ms,cumulative_fraction"));
        assert_eq!(lines.count(), points.len());
        assert!(text.trim_end().ends_with(",1"));
    }
}

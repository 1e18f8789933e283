//! Empirical distribution reports over RTT-triple datasets.
//!
//! The cumulative fractions use the ≤ convention: a point (v, f) says a
//! fraction f of nodes measure at most v. Threshold fractions over the
//! relay margin use ≥, matching "saves at least X ms" statements.

use std::collections::BTreeMap;

use serde::Serialize;

use super::model::{model_latency, RttTriple, Scenario};
use super::LatModelError;

/// Margins (direct minus relay leg) the report slices at, in ms.
pub const MARGIN_THRESHOLDS_MS: [f64; 4] = [5.0, 10.0, 40.0, 50.0];
/// Savings thresholds for the single-flight handshake, in ms.
pub const SAVINGS_THRESHOLDS_NO_RETRY_MS: [f64; 2] = [15.0, 30.0];
/// Savings thresholds when a retry doubles the benefit, in ms.
pub const SAVINGS_THRESHOLDS_RETRY_MS: [f64; 2] = [30.0, 60.0];
/// A resolver answering below this is "close", in ms.
pub const FAST_DNS_BELOW_MS: f64 = 10.0;

/// Everything [`emit_cdf`] can slice a dataset by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    RttDns,
    RttServer,
    RttDirect,
    HandshakeStatusQuoNoRetry,
    HandshakeStatusQuoRetry,
    HandshakeProposalNoRetry,
    HandshakeProposalRetry,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::RttDns,
        Metric::RttServer,
        Metric::RttDirect,
        Metric::HandshakeStatusQuoNoRetry,
        Metric::HandshakeStatusQuoRetry,
        Metric::HandshakeProposalNoRetry,
        Metric::HandshakeProposalRetry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::RttDns => "rtt_dns_ms",
            Metric::RttServer => "rtt_server_ms",
            Metric::RttDirect => "rtt_direct_ms",
            Metric::HandshakeStatusQuoNoRetry => "handshake_status_quo_no_retry",
            Metric::HandshakeStatusQuoRetry => "handshake_status_quo_retry",
            Metric::HandshakeProposalNoRetry => "handshake_proposal_no_retry",
            Metric::HandshakeProposalRetry => "handshake_proposal_retry",
        }
    }

    pub fn parse(name: &str) -> Result<Metric, LatModelError> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| LatModelError::UnknownMetric(name.to_owned()))
    }

    pub fn value(self, triple: &RttTriple) -> f64 {
        match self {
            Metric::RttDns => triple.rtt_dns_ms,
            Metric::RttServer => triple.rtt_server_ms,
            Metric::RttDirect => triple.rtt_direct_ms,
            Metric::HandshakeStatusQuoNoRetry => {
                model_latency(triple, Scenario::StatusQuo, false)
            }
            Metric::HandshakeStatusQuoRetry => model_latency(triple, Scenario::StatusQuo, true),
            Metric::HandshakeProposalNoRetry => model_latency(triple, Scenario::Proposal, false),
            Metric::HandshakeProposalRetry => model_latency(triple, Scenario::Proposal, true),
        }
    }
}

/// One point of an empirical CDF: `fraction` of the nodes measure ≤ `value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfPoint {
    pub value: f64,
    pub fraction: f64,
}

/// The empirical CDF of `metric` over `dataset`, one point per distinct
/// value, sorted ascending. The final fraction is always 1.
pub fn emit_cdf(dataset: &[RttTriple], metric: &str) -> Result<Vec<CdfPoint>, LatModelError> {
    let metric = Metric::parse(metric)?;
    cdf_points(dataset, metric)
}

pub fn cdf_points(dataset: &[RttTriple], metric: Metric) -> Result<Vec<CdfPoint>, LatModelError> {
    if dataset.is_empty() {
        return Err(LatModelError::EmptyDataset);
    }
    let mut values: Vec<f64> = dataset.iter().map(|t| metric.value(t)).collect();
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len() as f64;
    let mut points = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        // Last occurrence of each distinct value carries the count of all
        // nodes at or below it.
        if i + 1 == values.len() || values[i + 1] != v {
            points.push(CdfPoint {
                value: v,
                fraction: (i + 1) as f64 / n,
            });
        }
    }
    Ok(points)
}

/// A fraction of the dataset meeting one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdFraction {
    pub threshold_ms: f64,
    pub fraction: f64,
}

/// The full dataset report: threshold slices plus every metric's CDF.
#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub nodes: usize,
    /// Fraction of nodes whose relay margin is at least each threshold.
    pub margin_at_least: Vec<ThresholdFraction>,
    /// Fraction of nodes with a resolver answering in under 10 ms.
    pub fast_dns_fraction: f64,
    /// Fraction saving at least each threshold on a no-retry handshake.
    pub savings_no_retry_at_least: Vec<ThresholdFraction>,
    /// Same with a retry, where the benefit is doubled.
    pub savings_retry_at_least: Vec<ThresholdFraction>,
    /// Empirical CDFs keyed by metric name, for all seven metrics.
    pub cdfs: BTreeMap<String, Vec<CdfPoint>>,
}

fn fraction_where(dataset: &[RttTriple], pred: impl Fn(&RttTriple) -> bool) -> f64 {
    dataset.iter().filter(|t| pred(t)).count() as f64 / dataset.len() as f64
}

pub fn dataset_stats(dataset: &[RttTriple]) -> Result<StatsReport, LatModelError> {
    if dataset.is_empty() {
        return Err(LatModelError::EmptyDataset);
    }
    let margin_at_least = MARGIN_THRESHOLDS_MS
        .iter()
        .map(|&threshold_ms| ThresholdFraction {
            threshold_ms,
            fraction: fraction_where(dataset, |t| t.margin_ms() >= threshold_ms),
        })
        .collect();
    let savings_no_retry_at_least = SAVINGS_THRESHOLDS_NO_RETRY_MS
        .iter()
        .map(|&threshold_ms| ThresholdFraction {
            threshold_ms,
            fraction: fraction_where(dataset, |t| t.margin_ms() >= threshold_ms),
        })
        .collect();
    let savings_retry_at_least = SAVINGS_THRESHOLDS_RETRY_MS
        .iter()
        .map(|&threshold_ms| ThresholdFraction {
            threshold_ms,
            fraction: fraction_where(dataset, |t| 2.0 * t.margin_ms() >= threshold_ms),
        })
        .collect();
    let mut cdfs = BTreeMap::new();
    for metric in Metric::ALL {
        cdfs.insert(metric.name().to_owned(), cdf_points(dataset, metric)?);
    }
    Ok(StatsReport {
        nodes: dataset.len(),
        margin_at_least,
        fast_dns_fraction: fraction_where(dataset, |t| t.rtt_dns_ms < FAST_DNS_BELOW_MS),
        savings_no_retry_at_least,
        savings_retry_at_least,
        cdfs,
    })
}

/// Synthetic 1000-node dataset in five relay-margin bands. The band sizes
/// pin the margin fractions exactly: 0.510 at 5 ms, 0.367 at 10 ms,
/// 0.072 at 40 ms, 0.038 at 50 ms. Everything else varies with the seed.
pub fn margin_fixture(seed: u64) -> Vec<RttTriple> {
    use rand::{Rng, SeedableRng};
    const BANDS: [(f64, usize); 5] = [
        (55.0, 38),
        (45.0, 34),
        (20.0, 295),
        (7.0, 143),
        (2.0, 490),
    ];
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut dataset = Vec::with_capacity(1_000);
    for (margin, count) in BANDS {
        for _ in 0..count {
            let server = f64::from(rng.gen_range(100..800)) / 10.0;
            let dns = f64::from(rng.gen_range(20..400)) / 10.0;
            let node_id = format!("node{:04}", dataset.len());
            dataset.push(RttTriple {
                node_id,
                rtt_dns_ms: dns,
                rtt_server_ms: server,
                rtt_direct_ms: server + margin,
            });
        }
    }
    dataset
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(id: &str, dns: f64, server: f64, direct: f64) -> RttTriple {
        RttTriple::new(id, dns, server, direct).unwrap()
    }

    #[test]
    fn cdf_counts_duplicates_once() {
        let dataset = vec![
            triple("a", 10.0, 0.0, 0.0),
            triple("b", 20.0, 0.0, 0.0),
            triple("c", 20.0, 0.0, 0.0),
            triple("d", 40.0, 0.0, 0.0),
        ];
        let points = emit_cdf(&dataset, "rtt_dns_ms").unwrap();
        assert_eq!(
            points,
            vec![
                CdfPoint { value: 10.0, fraction: 0.25 },
                CdfPoint { value: 20.0, fraction: 0.75 },
                CdfPoint { value: 40.0, fraction: 1.0 },
            ]
        );
    }

    #[test]
    fn single_node_is_a_single_step() {
        let dataset = vec![triple("a", 30.0, 30.0, 60.0)];
        for metric in Metric::ALL {
            let points = cdf_points(&dataset, metric).unwrap();
            assert_eq!(points.len(), 1);
            assert_eq!(points[0].fraction, 1.0);
        }
        let points = emit_cdf(&dataset, "handshake_proposal_retry").unwrap();
        assert_eq!(points, vec![CdfPoint { value: 90.0, fraction: 1.0 }]);
    }

    #[test]
    fn identical_triples_collapse_to_one_point() {
        let dataset = vec![triple("a", 5.0, 8.0, 13.0); 20];
        for metric in Metric::ALL {
            let points = cdf_points(&dataset, metric).unwrap();
            assert_eq!(points.len(), 1);
            assert_eq!(points[0].fraction, 1.0);
        }
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let dataset = margin_fixture(7);
        for metric in Metric::ALL {
            let points = cdf_points(&dataset, metric).unwrap();
            for pair in points.windows(2) {
                assert!(pair[0].value < pair[1].value);
                assert!(pair[0].fraction < pair[1].fraction);
            }
            assert_eq!(points.last().unwrap().fraction, 1.0);
        }
    }

    #[test]
    fn unknown_metric_rejected() {
        let dataset = vec![triple("a", 1.0, 2.0, 3.0)];
        assert!(matches!(
            emit_cdf(&dataset, "bogus"),
            Err(LatModelError::UnknownMetric(_))
        ));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            dataset_stats(&[]),
            Err(LatModelError::EmptyDataset)
        ));
        assert!(matches!(
            emit_cdf(&[], "rtt_dns_ms"),
            Err(LatModelError::EmptyDataset)
        ));
    }

    #[test]
    fn fixture_margins_hit_the_known_fractions() {
        let report = dataset_stats(&margin_fixture(1)).unwrap();
        assert_eq!(report.nodes, 1_000);
        let fractions: Vec<f64> = report.margin_at_least.iter().map(|t| t.fraction).collect();
        assert_eq!(fractions, vec![0.51, 0.367, 0.072, 0.038]);
    }

    #[test]
    fn report_matches_a_brute_force_recount() {
        for seed in [1, 2, 3] {
            let dataset = margin_fixture(seed);
            let report = dataset_stats(&dataset).unwrap();
            let n = dataset.len() as f64;
            for tf in &report.margin_at_least {
                let mut count = 0usize;
                for t in &dataset {
                    if t.rtt_direct_ms - t.rtt_server_ms >= tf.threshold_ms {
                        count += 1;
                    }
                }
                assert_eq!(tf.fraction, count as f64 / n);
            }
            let mut fast = 0usize;
            for t in &dataset {
                if t.rtt_dns_ms < 10.0 {
                    fast += 1;
                }
            }
            assert_eq!(report.fast_dns_fraction, fast as f64 / n);
            for (tf, threshold) in report.savings_no_retry_at_least.iter().zip([15.0, 30.0]) {
                let mut count = 0usize;
                for t in &dataset {
                    if t.rtt_direct_ms - t.rtt_server_ms >= threshold {
                        count += 1;
                    }
                }
                assert_eq!(tf.threshold_ms, threshold);
                assert_eq!(tf.fraction, count as f64 / n);
            }
            for (tf, threshold) in report.savings_retry_at_least.iter().zip([30.0, 60.0]) {
                let mut count = 0usize;
                for t in &dataset {
                    if 2.0 * (t.rtt_direct_ms - t.rtt_server_ms) >= threshold {
                        count += 1;
                    }
                }
                assert_eq!(tf.threshold_ms, threshold);
                assert_eq!(tf.fraction, count as f64 / n);
            }
        }
    }

    #[test]
    fn retry_doubling_makes_the_threshold_pairs_agree() {
        let report = dataset_stats(&margin_fixture(4)).unwrap();
        assert_eq!(
            report.savings_no_retry_at_least[0].fraction,
            report.savings_retry_at_least[0].fraction
        );
        assert_eq!(
            report.savings_no_retry_at_least[1].fraction,
            report.savings_retry_at_least[1].fraction
        );
    }

    #[test]
    fn fast_dns_boundary_is_strict() {
        let dataset = vec![
            triple("at", 10.0, 0.0, 0.0),
            triple("below", 9.9, 0.0, 0.0),
        ];
        let report = dataset_stats(&dataset).unwrap();
        assert_eq!(report.fast_dns_fraction, 0.5);
    }

    #[test]
    fn margin_boundary_is_inclusive() {
        let dataset = vec![
            triple("at", 0.0, 10.0, 25.0),
            triple("under", 0.0, 10.0, 24.0),
        ];
        let report = dataset_stats(&dataset).unwrap();
        let at_15 = report
            .savings_no_retry_at_least
            .iter()
            .find(|t| t.threshold_ms == 15.0)
            .unwrap();
        assert_eq!(at_15.fraction, 0.5);
    }
}

//! Closed-form connection-setup latency for the two deployment scenarios.
//!
//! One name resolution always happens; what differs is who performs the
//! handshake round trips. Going direct costs `rtt_direct` per flight; going
//! through the relay costs `rtt_server` per flight because resolution and
//! forwarding overlap. A retry adds one more flight in either case.

use serde::{Deserialize, Serialize};

/// Per-node round-trip measurements, all in milliseconds.
///
/// `rtt_dns_ms` is client to resolver, `rtt_server_ms` is relay to server,
/// `rtt_direct_ms` is client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RttTriple {
    pub node_id: String,
    pub rtt_dns_ms: f64,
    pub rtt_server_ms: f64,
    pub rtt_direct_ms: f64,
}

impl RttTriple {
    /// Validates that every value is finite and nonnegative.
    pub fn new(
        node_id: impl Into<String>,
        rtt_dns_ms: f64,
        rtt_server_ms: f64,
        rtt_direct_ms: f64,
    ) -> Result<RttTriple, super::LatModelError> {
        for v in [rtt_dns_ms, rtt_server_ms, rtt_direct_ms] {
            if !v.is_finite() || v < 0.0 {
                return Err(super::LatModelError::BadValue(v));
            }
        }
        Ok(RttTriple {
            node_id: node_id.into(),
            rtt_dns_ms,
            rtt_server_ms,
            rtt_direct_ms,
        })
    }

    /// The headroom the relay placement has over the direct path.
    pub fn margin_ms(&self) -> f64 {
        self.rtt_direct_ms - self.rtt_server_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Resolve first, then handshake on the direct path.
    StatusQuo,
    /// Handshake flights ride the relay-to-server leg while resolution
    /// happens on the way.
    Proposal,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::StatusQuo => "status_quo",
            Scenario::Proposal => "proposal",
        }
    }
}

/// Connection-setup latency including resolution, in milliseconds.
pub fn model_latency(triple: &RttTriple, scenario: Scenario, retry: bool) -> f64 {
    let flight = match scenario {
        Scenario::StatusQuo => triple.rtt_direct_ms,
        Scenario::Proposal => triple.rtt_server_ms,
    };
    let flights = if retry { 2.0 } else { 1.0 };
    triple.rtt_dns_ms + flights * flight
}

/// One scenario evaluated against its status-quo baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResult {
    pub scenario: Scenario,
    pub retry: bool,
    pub latency_ms: f64,
    /// Baseline minus this scenario, at the same retry flag.
    pub savings_ms: f64,
    /// Savings relative to the baseline latency; 0 when the baseline is 0.
    pub savings_fraction: f64,
}

impl ModelResult {
    pub fn compute(triple: &RttTriple, scenario: Scenario, retry: bool) -> ModelResult {
        let latency_ms = model_latency(triple, scenario, retry);
        let baseline = model_latency(triple, Scenario::StatusQuo, retry);
        let savings_ms = baseline - latency_ms;
        let savings_fraction = if baseline > 0.0 {
            savings_ms / baseline
        } else {
            0.0
        };
        ModelResult {
            scenario,
            retry,
            latency_ms,
            savings_ms,
            savings_fraction,
        }
    }
}

/// What the relay placement saves a node, for both retry outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Savings {
    pub no_retry_ms: f64,
    pub retry_ms: f64,
    pub no_retry_fraction: f64,
    pub retry_fraction: f64,
}

pub fn savings(triple: &RttTriple) -> Savings {
    // Computed from the margin directly, not as a difference of two model
    // latencies: the doubling must hold exactly, not modulo rounding.
    let no_retry_ms = triple.margin_ms();
    let retry_ms = 2.0 * no_retry_ms;
    let base_no_retry = model_latency(triple, Scenario::StatusQuo, false);
    let base_retry = model_latency(triple, Scenario::StatusQuo, true);
    Savings {
        no_retry_ms,
        retry_ms,
        no_retry_fraction: if base_no_retry > 0.0 {
            no_retry_ms / base_no_retry
        } else {
            0.0
        },
        retry_fraction: if base_retry > 0.0 {
            retry_ms / base_retry
        } else {
            0.0
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn triple(dns: f64, server: f64, direct: f64) -> RttTriple {
        RttTriple::new("n", dns, server, direct).unwrap()
    }

    #[test]
    fn reference_latencies() {
        let t = triple(30.0, 30.0, 60.0);
        assert_eq!(model_latency(&t, Scenario::StatusQuo, false), 90.0);
        assert_eq!(model_latency(&t, Scenario::Proposal, false), 60.0);
        assert_eq!(model_latency(&t, Scenario::StatusQuo, true), 150.0);
        assert_eq!(model_latency(&t, Scenario::Proposal, true), 90.0);
    }

    #[test]
    fn zero_triple_costs_nothing() {
        let t = triple(0.0, 0.0, 0.0);
        for scenario in [Scenario::StatusQuo, Scenario::Proposal] {
            for retry in [false, true] {
                assert_eq!(model_latency(&t, scenario, retry), 0.0);
            }
        }
    }

    #[test]
    fn equal_legs_mean_equal_latency() {
        let t = triple(10.0, 25.0, 25.0);
        for retry in [false, true] {
            assert_eq!(
                model_latency(&t, Scenario::StatusQuo, retry),
                model_latency(&t, Scenario::Proposal, retry)
            );
        }
    }

    #[test]
    fn reference_savings_and_fractions() {
        let s = savings(&triple(30.0, 30.0, 60.0));
        assert_eq!(s.no_retry_ms, 30.0);
        assert_eq!(s.retry_ms, 60.0);
        assert_eq!(s.no_retry_fraction, 30.0 / 90.0);
        assert_eq!(s.retry_fraction, 60.0 / 150.0);
        assert_eq!(s.retry_fraction, 0.4);
    }

    #[test]
    fn slower_relay_leg_costs() {
        let s = savings(&triple(10.0, 80.0, 60.0));
        assert!(s.no_retry_ms < 0.0);
        assert!(s.retry_ms < 0.0);
    }

    #[test]
    fn colocated_server_saves_the_whole_direct_leg() {
        let s = savings(&triple(12.0, 0.0, 48.0));
        assert_eq!(s.no_retry_ms, 48.0);
        assert_eq!(s.retry_ms, 96.0);
    }

    #[test]
    fn proposal_wins_exactly_when_the_relay_leg_is_shorter() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(42);
        for _ in 0..1_000 {
            let t = triple(
                rng.gen_range(0.0..200.0),
                rng.gen_range(0.0..200.0),
                rng.gen_range(0.0..200.0),
            );
            for retry in [false, true] {
                let sq = model_latency(&t, Scenario::StatusQuo, retry);
                let prop = model_latency(&t, Scenario::Proposal, retry);
                assert_eq!(prop <= sq, t.rtt_server_ms <= t.rtt_direct_ms);
            }
        }
    }

    #[test]
    fn retry_doubles_the_benefit() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(43);
        for _ in 0..1_000 {
            let t = triple(
                rng.gen_range(0.0..200.0),
                rng.gen_range(0.0..200.0),
                rng.gen_range(0.0..200.0),
            );
            let s = savings(&t);
            assert_eq!(s.retry_ms, 2.0 * s.no_retry_ms);
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RttTriple::new("n", -1.0, 0.0, 0.0).is_err());
        assert!(RttTriple::new("n", 0.0, f64::NAN, 0.0).is_err());
        assert!(RttTriple::new("n", 0.0, 0.0, f64::INFINITY).is_err());
    }
}

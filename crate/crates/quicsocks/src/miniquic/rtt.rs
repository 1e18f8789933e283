//! Round-trip time estimation.
//!
//! Stands in for the congestion machinery a real transport carries; the one
//! behavior connection migration depends on is that the estimate is reset
//! when the path changes, so only the reset and the smoothing are modeled.

/// Exponentially weighted RTT estimator with weight 1/8 on new samples.
/// The first sample initializes the smoothed value directly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RttEstimator {
    smoothed_ms: Option<f64>,
    latest_ms: Option<f64>,
    samples: u32,
}

impl RttEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_sample(&mut self, sample_ms: f64) {
        self.latest_ms = Some(sample_ms);
        self.smoothed_ms = Some(match self.smoothed_ms {
            None => sample_ms,
            Some(srtt) => srtt * 7.0 / 8.0 + sample_ms / 8.0,
        });
        self.samples += 1;
    }

    /// Forgets everything; required on connection migration because the old
    /// path's delays say nothing about the new one.
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn smoothed_ms(&self) -> Option<f64> {
        self.smoothed_ms
    }

    pub fn latest_ms(&self) -> Option<f64> {
        self.latest_ms
    }

    pub fn sample_count(&self) -> u32 {
        self.samples
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_sample_initializes() {
        let mut rtt = RttEstimator::new();
        assert_eq!(rtt.smoothed_ms(), None);
        rtt.on_sample(100.0);
        assert_eq!(rtt.smoothed_ms(), Some(100.0));
        assert_eq!(rtt.latest_ms(), Some(100.0));
        assert_eq!(rtt.sample_count(), 1);
    }

    #[test]
    fn smoothing_weights_new_samples_one_eighth() {
        let mut rtt = RttEstimator::new();
        rtt.on_sample(100.0);
        rtt.on_sample(50.0);
        assert_eq!(rtt.smoothed_ms(), Some(100.0 * 7.0 / 8.0 + 50.0 / 8.0));
        assert_eq!(rtt.latest_ms(), Some(50.0));
    }

    #[test]
    fn reset_discards_history() {
        let mut rtt = RttEstimator::new();
        rtt.on_sample(80.0);
        rtt.on_sample(90.0);
        rtt.reset();
        assert_eq!(rtt.smoothed_ms(), None);
        assert_eq!(rtt.latest_ms(), None);
        assert_eq!(rtt.sample_count(), 0);
        rtt.on_sample(10.0);
        assert_eq!(rtt.smoothed_ms(), Some(10.0));
    }
}

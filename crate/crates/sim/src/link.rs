//! Per-hop radio link model.
//!
//! A transmission of `b` bytes over one hop costs `b * 8 / data_rate`
//! seconds of air time plus a fixed per-hop latency (MAC and propagation
//! overhead). Links may optionally drop frames with a fixed probability;
//! when retransmission is enabled each loss adds one retransmit timeout
//! with binary exponential backoff before the frame finally goes through.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("data rate must be positive, got {0}")]
    BadDataRate(f64),
    #[error("per-hop latency must be non-negative, got {0}")]
    BadLatency(f64),
    #[error("loss probability must lie in [0, 1), got {0}")]
    BadLossProbability(f64),
    #[error("retransmit timeout must be positive, got {0}")]
    BadRto(f64),
    #[error("a lossy link without retransmission cannot deliver every frame")]
    LossWithoutRetransmit,
}

/// Radio characteristics shared by every link in a simulated network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    /// Physical data rate in bits per second.
    pub data_rate_bps: f64,
    /// Fixed per-hop latency in seconds.
    pub hop_latency_s: f64,
    /// Probability that a single transmission attempt is lost.
    pub loss_probability: f64,
    /// Initial retransmit timeout in seconds (doubles per attempt).
    pub rto_s: f64,
    /// Whether lost frames are retransmitted until delivered.
    pub retransmit: bool,
}

impl Default for LinkModel {
    fn default() -> LinkModel {
        LinkModel {
            data_rate_bps: 12_000_000.0,
            hop_latency_s: 5e-4,
            loss_probability: 0.0,
            rto_s: 0.2,
            retransmit: false,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.data_rate_bps > 0.0) {
            return Err(LinkError::BadDataRate(self.data_rate_bps));
        }
        if !(self.hop_latency_s >= 0.0) {
            return Err(LinkError::BadLatency(self.hop_latency_s));
        }
        if !(0.0..1.0).contains(&self.loss_probability) {
            return Err(LinkError::BadLossProbability(self.loss_probability));
        }
        if !(self.rto_s > 0.0) {
            return Err(LinkError::BadRto(self.rto_s));
        }
        if self.loss_probability > 0.0 && !self.retransmit {
            return Err(LinkError::LossWithoutRetransmit);
        }
        Ok(())
    }

    /// Loss-free time to move `bytes` over one hop.
    pub fn transfer_time(&self, bytes: usize) -> f64 {
        (bytes as f64) * 8.0 / self.data_rate_bps + self.hop_latency_s
    }

    /// Total time to deliver `bytes` over one hop, including any
    /// retransmissions. Draws from `rng` only when the link is lossy, so
    /// loss-free configurations consume no randomness here.
    pub fn hop_delay<R: Rng + ?Sized>(&self, bytes: usize, rng: &mut R) -> f64 {
        let mut total = 0.0;
        if self.loss_probability > 0.0 && self.retransmit {
            let mut rto = self.rto_s;
            while rng.gen::<f64>() < self.loss_probability {
                total += rto;
                rto *= 2.0;
            }
        }
        total + self.transfer_time(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;

    #[test]
    fn transfer_time_matches_the_rate_and_latency() {
        let link = LinkModel::default();
        // 12123 bytes (a 100-layer head plus the default body) at 12 Mb/s
        // plus 0.5 ms latency.
        let expected = 12123.0 * 8.0 / 12e6 + 5e-4;
        assert!((link.transfer_time(12_123) - expected).abs() < 1e-15);
    }

    #[test]
    fn lossless_links_consume_no_randomness() {
        let link = LinkModel::default();
        let mut rng = derive_rng(1, &["link"], &[]);
        let mut untouched = derive_rng(1, &["link"], &[]);
        let d = link.hop_delay(100, &mut rng);
        assert_eq!(d, link.transfer_time(100));
        use rand::RngCore;
        assert_eq!(rng.next_u64(), untouched.next_u64());
    }

    #[test]
    fn lossy_links_add_backoff_time() {
        let link = LinkModel {
            loss_probability: 0.5,
            retransmit: true,
            ..LinkModel::default()
        };
        link.validate().unwrap();
        let mut rng = derive_rng(2, &["link"], &[]);
        let mut saw_retry = false;
        for _ in 0..64 {
            let d = link.hop_delay(100, &mut rng);
            assert!(d >= link.transfer_time(100));
            if d > link.transfer_time(100) {
                saw_retry = true;
                // Retries come in whole timeout increments.
                let extra = d - link.transfer_time(100);
                assert!(extra >= link.rto_s - 1e-12);
            }
        }
        assert!(saw_retry, "p = 0.5 over 64 frames should retry at least once");
    }

    #[test]
    fn validation_rejects_inconsistent_models() {
        let mut link = LinkModel { loss_probability: 0.1, ..LinkModel::default() };
        assert_eq!(link.validate(), Err(LinkError::LossWithoutRetransmit));
        link.retransmit = true;
        assert_eq!(link.validate(), Ok(()));
        link.data_rate_bps = 0.0;
        assert_eq!(link.validate(), Err(LinkError::BadDataRate(0.0)));
    }
}

use std::time::Duration;

use rand::Rng;

/// Exponential backoff with multiplicative jitter. Consecutive delays for
/// one call never decrease and never exceed `cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackoffPolicy {
    pub base: Duration,
    pub cap: Duration,
    /// Upper bound of the jitter factor; each raw delay is scaled by a
    /// uniform draw from `[1, 1 + jitter)`.
    pub jitter: f64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            cap: Duration::from_secs(30),
            jitter: 0.5,
        }
    }
}

impl BackoffPolicy {
    pub fn none() -> Self {
        Self {
            base: Duration::ZERO,
            cap: Duration::ZERO,
            jitter: 0.0,
        }
    }

    /// Delay before retry number `retry` (0-based), given the previous delay.
    pub fn next_delay<R: Rng + ?Sized>(
        &self,
        retry: u32,
        previous: Duration,
        rng: &mut R,
    ) -> Duration {
        let raw = self.base.as_secs_f64() * 2f64.powi(retry.min(30) as i32);
        let factor = if self.jitter > 0.0 {
            1.0 + rng.gen_range(0.0..self.jitter)
        } else {
            1.0
        };
        let jittered = Duration::from_secs_f64((raw * factor).min(self.cap.as_secs_f64()));
        jittered.max(previous).min(self.cap)
    }

    pub fn schedule<R: Rng + ?Sized>(&self, retries: u32, rng: &mut R) -> Vec<Duration> {
        let mut prev = Duration::ZERO;
        (0..retries)
            .map(|i| {
                prev = self.next_delay(i, prev, rng);
                prev
            })
            .collect()
    }
}

//! Capped exponential backoff with jitter.

use std::time::Duration;

use rand::Rng;

/// How transient failures are retried.
///
/// `max_attempts` counts every try including the first, so a policy with
/// `max_attempts == 1` never retries.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Multiplicative jitter fraction: each delay is scaled by a uniform
    /// draw from `[1 - jitter, 1 + jitter]`.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            jitter: 0.1,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry_index` (0 for the first retry):
    /// `min(base * 2^retry_index, max)` scaled by the jitter draw.
    pub fn delay_for(&self, retry_index: u32, rng: &mut impl Rng) -> Duration {
        let exp = self
            .base_delay
            .checked_mul(1u32.checked_shl(retry_index).unwrap_or(u32::MAX))
            .unwrap_or(self.max_delay)
            .min(self.max_delay);
        if self.jitter <= 0.0 {
            return exp;
        }
        let factor = rng.random_range((1.0 - self.jitter)..=(1.0 + self.jitter));
        Duration::from_secs_f64(exp.as_secs_f64() * factor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(jitter: f64) -> RetryPolicy {
        RetryPolicy {
            max_attempts: 8,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(1500),
            jitter,
        }
    }

    #[test]
    fn delays_double_then_cap_without_jitter() {
        let p = policy(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let delays: Vec<u128> = (0..6)
            .map(|k| p.delay_for(k, &mut rng).as_millis())
            .collect();
        assert_eq!(delays, vec![100, 200, 400, 800, 1500, 1500]);
    }

    #[test]
    fn huge_retry_index_saturates_at_cap() {
        let p = policy(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(p.delay_for(63, &mut rng), p.max_delay);
    }

    proptest! {
        #[test]
        fn jittered_delay_stays_within_band(
            retry_index in 0u32..10,
            jitter_pct in 1u32..=50,
            seed in proptest::num::u64::ANY,
        ) {
            let jitter = f64::from(jitter_pct) / 100.0;
            let p = policy(jitter);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let exp = p
                .base_delay
                .checked_mul(1 << retry_index)
                .unwrap()
                .min(p.max_delay)
                .as_secs_f64();
            let got = p.delay_for(retry_index, &mut rng).as_secs_f64();
            prop_assert!(got >= exp * (1.0 - jitter) - 1e-9);
            prop_assert!(got <= exp * (1.0 + jitter) + 1e-9);
        }

        #[test]
        fn unjittered_delays_are_nondecreasing(retry_index in 0u32..20) {
            let p = policy(0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let a = p.delay_for(retry_index, &mut rng);
            let b = p.delay_for(retry_index + 1, &mut rng);
            prop_assert!(b >= a);
        }
    }
}

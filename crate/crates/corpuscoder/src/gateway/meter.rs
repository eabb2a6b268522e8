//! Spend accounting and the hard budget guard.
//!
//! The meter reserves the worst-case cost of a request *before* it is sent
//! and settles to the actual cost afterwards, so concurrent workers can never
//! push total spend past the budget — a request that might overrun is refused
//! up front.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::wire::Usage;
use super::GatewayError;

/// Price per 1000 tokens, split by direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

/// Prices keyed by model name.
#[derive(Debug, Clone, Default)]
pub struct PriceTable {
    prices: HashMap<String, ModelPrice>,
}

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: impl Into<String>, price: ModelPrice) {
        self.prices.insert(model.into(), price);
    }

    pub fn get(&self, model: &str) -> Option<ModelPrice> {
        self.prices.get(model).copied()
    }

    /// Dollar cost of `usage` under `model`'s price, if the model is priced.
    pub fn cost(&self, model: &str, usage: Usage) -> Option<f64> {
        self.get(model).map(|p| {
            (usage.prompt_tokens as f64 * p.prompt_per_1k
                + usage.completion_tokens as f64 * p.completion_per_1k)
                / 1000.0
        })
    }
}

/// One settled request, kept for replay and reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageEntry {
    pub model: String,
    pub usage: Usage,
    /// `None` when the model had no configured price.
    pub cost: Option<f64>,
    /// True when the provider did not report usage and the token counts are
    /// word-based estimates.
    pub estimated: bool,
}

#[derive(Debug, Default)]
struct MeterState {
    reserved: f64,
    spent: f64,
    entries: Vec<UsageEntry>,
}

/// Thread-safe check-and-reserve spend meter.
#[derive(Debug)]
pub struct UsageMeter {
    budget: Option<f64>,
    state: Mutex<MeterState>,
}

impl UsageMeter {
    pub fn new(budget: Option<f64>) -> Self {
        Self {
            budget,
            state: Mutex::new(MeterState::default()),
        }
    }

    pub fn budget(&self) -> Option<f64> {
        self.budget
    }

    /// Atomically reserve `worst_case` dollars, failing if committed spend
    /// plus outstanding reservations would exceed the budget.
    pub fn try_reserve(&self, worst_case: f64) -> Result<(), GatewayError> {
        let mut state = self.state.lock().unwrap();
        if let Some(budget) = self.budget {
            let remaining = budget - state.spent - state.reserved;
            if worst_case > remaining {
                return Err(GatewayError::BudgetExceeded {
                    needed: worst_case,
                    remaining: remaining.max(0.0),
                });
            }
        }
        state.reserved += worst_case;
        Ok(())
    }

    /// Convert a reservation into actual spend and record the entry.
    pub fn settle(&self, reserved: f64, entry: UsageEntry) {
        let mut state = self.state.lock().unwrap();
        state.reserved = (state.reserved - reserved).max(0.0);
        state.spent += entry.cost.unwrap_or(0.0);
        state.entries.push(entry);
    }

    /// Drop a reservation without spending (the request failed).
    pub fn release(&self, reserved: f64) {
        let mut state = self.state.lock().unwrap();
        state.reserved = (state.reserved - reserved).max(0.0);
    }

    /// Committed spend in dollars (never decreases).
    pub fn spent(&self) -> f64 {
        self.state.lock().unwrap().spent
    }

    pub fn entries(&self) -> Vec<UsageEntry> {
        self.state.lock().unwrap().entries.clone()
    }

    pub fn total_usage(&self) -> Usage {
        self.state
            .lock()
            .unwrap()
            .entries
            .iter()
            .fold(Usage::default(), |acc, e| acc + e.usage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(cost: f64) -> UsageEntry {
        UsageEntry {
            model: "gpt-4".to_string(),
            usage: Usage {
                prompt_tokens: 100,
                completion_tokens: 10,
            },
            cost: Some(cost),
            estimated: false,
        }
    }

    #[test]
    fn price_table_costs_both_directions() {
        let mut prices = PriceTable::new();
        prices.insert(
            "gpt-4",
            ModelPrice {
                prompt_per_1k: 0.03,
                completion_per_1k: 0.06,
            },
        );
        let cost = prices
            .cost(
                "gpt-4",
                Usage {
                    prompt_tokens: 195,
                    completion_tokens: 50,
                },
            )
            .unwrap();
        assert!((cost - 0.00885).abs() < 1e-12);
        assert_eq!(prices.cost("unpriced", Usage::default()), None);
    }

    #[test]
    fn reserve_settle_tracks_spend_monotonically() {
        let meter = UsageMeter::new(Some(1.0));
        let mut last = 0.0;
        for _ in 0..5 {
            meter.try_reserve(0.2).unwrap();
            meter.settle(0.2, entry(0.1));
            let spent = meter.spent();
            assert!(spent >= last);
            last = spent;
        }
        assert!((meter.spent() - 0.5).abs() < 1e-12);
        assert_eq!(meter.entries().len(), 5);
    }

    #[test]
    fn reservation_blocks_overrun_before_send() {
        let meter = UsageMeter::new(Some(0.5));
        meter.try_reserve(0.4).unwrap();
        let err = meter.try_reserve(0.2).unwrap_err();
        match err {
            GatewayError::BudgetExceeded { needed, remaining } => {
                assert_eq!(needed, 0.2);
                assert!((remaining - 0.1).abs() < 1e-12);
            }
            other => panic!("expected BudgetExceeded, got {other:?}"),
        }
        // Releasing the first reservation frees the budget again.
        meter.release(0.4);
        meter.try_reserve(0.45).unwrap();
    }

    #[test]
    fn unlimited_meter_always_reserves() {
        let meter = UsageMeter::new(None);
        for _ in 0..100 {
            meter.try_reserve(1e6).unwrap();
            meter.settle(1e6, entry(1e6));
        }
        assert_eq!(meter.entries().len(), 100);
    }

    #[test]
    fn concurrent_reservations_never_oversubscribe() {
        use std::sync::atomic::{AtomicUsize, Ordering};

        let meter = UsageMeter::new(Some(100.0));
        let granted = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..8 {
                scope.spawn(|| {
                    for _ in 0..50 {
                        if meter.try_reserve(1.0).is_ok() {
                            granted.fetch_add(1, Ordering::SeqCst);
                            meter.settle(1.0, entry(1.0));
                        }
                    }
                });
            }
        });
        // 8 threads x 50 tries compete for exactly 100 one-dollar slots.
        assert_eq!(granted.load(Ordering::SeqCst), 100);
        assert!((meter.spent() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn replayed_entries_sum_to_spent() {
        let meter = UsageMeter::new(None);
        for i in 0..10 {
            meter.try_reserve(1.0).unwrap();
            meter.settle(1.0, entry(f64::from(i) * 0.01));
        }
        let replayed: f64 = meter.entries().iter().filter_map(|e| e.cost).sum();
        assert!((replayed - meter.spent()).abs() < 1e-12);
        assert_eq!(
            meter.total_usage(),
            Usage {
                prompt_tokens: 1000,
                completion_tokens: 100
            }
        );
    }
}

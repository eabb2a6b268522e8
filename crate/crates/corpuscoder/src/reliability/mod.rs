//! Intercoder reliability: Krippendorff's alpha over a units-by-raters
//! rating matrix.
//!
//! Alpha is computed from the coincidence matrix of pairable values:
//! `alpha = 1 - D_o / D_e`, where the observed disagreement `D_o` weighs
//! within-unit value pairs and the expected disagreement `D_e` weighs the
//! value margins. Data without any pairable unit, or without any variation,
//! has no defined alpha and is reported as [`AlphaResult::Degenerate`]
//! rather than a number.

pub mod report;

pub use report::{
    agreement_summary, disagreement_report, write_disagreements_csv, AgreementSummary,
    ConsensusPolicy, DisagreementRow,
};

use std::collections::HashMap;

use indexmap::IndexMap;
use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Measurement level; selects the distance metric between values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// Values are unordered categories: distance 0 or 1.
    Nominal,
    /// Values are ranks: distance from cumulative margins between them.
    Ordinal,
    /// Values are points on a scale: squared difference.
    Interval,
    /// Values are non-negative magnitudes: squared relative difference.
    Ratio,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReliabilityError {
    #[error("duplicate rating for unit '{unit}' by rater '{rater}'")]
    DuplicateRating { unit: String, rater: String },
    #[error("non-finite rating for unit '{unit}' by rater '{rater}'")]
    NonFiniteRating { unit: String, rater: String },
    #[error("ratio-level data cannot contain negative values: unit '{unit}', rater '{rater}', value {value}")]
    NegativeRatio {
        unit: String,
        rater: String,
        value: f64,
    },
    #[error("unit '{unit}' is not in the corpus")]
    UnknownUnit { unit: String },
}

/// Sparse units-by-raters matrix of numeric ratings.
///
/// Units and raters keep first-seen order; `-0.0` is normalized to `0.0` so
/// both land in the same value bucket.
#[derive(Debug, Clone)]
pub struct RatingMatrix {
    level: Level,
    units: IndexMap<String, ()>,
    raters: IndexMap<String, ()>,
    cells: HashMap<(usize, usize), f64>,
}

impl RatingMatrix {
    pub fn new(level: Level) -> Self {
        Self {
            level,
            units: IndexMap::new(),
            raters: IndexMap::new(),
            cells: HashMap::new(),
        }
    }

    pub fn from_entries<I, U, R>(level: Level, entries: I) -> Result<Self, ReliabilityError>
    where
        I: IntoIterator<Item = (U, R, f64)>,
        U: Into<String>,
        R: Into<String>,
    {
        let mut matrix = Self::new(level);
        for (unit, rater, value) in entries {
            matrix.add(unit, rater, value)?;
        }
        Ok(matrix)
    }

    pub fn add(
        &mut self,
        unit: impl Into<String>,
        rater: impl Into<String>,
        value: f64,
    ) -> Result<(), ReliabilityError> {
        let unit = unit.into();
        let rater = rater.into();
        if !value.is_finite() {
            return Err(ReliabilityError::NonFiniteRating { unit, rater });
        }
        if self.level == Level::Ratio && value < 0.0 {
            return Err(ReliabilityError::NegativeRatio { unit, rater, value });
        }
        let value = if value == 0.0 { 0.0 } else { value };

        let (unit_idx, _) = self.units.insert_full(unit, ());
        let (rater_idx, _) = self.raters.insert_full(rater, ());

        match self.cells.entry((unit_idx, rater_idx)) {
            std::collections::hash_map::Entry::Occupied(_) => {
                let unit = self.units.get_index(unit_idx).unwrap().0.clone();
                let rater = self.raters.get_index(rater_idx).unwrap().0.clone();
                Err(ReliabilityError::DuplicateRating { unit, rater })
            }
            std::collections::hash_map::Entry::Vacant(slot) => {
                slot.insert(value);
                Ok(())
            }
        }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_raters(&self) -> usize {
        self.raters.len()
    }

    pub fn unit_ids(&self) -> impl Iterator<Item = &str> {
        self.units.keys().map(String::as_str)
    }

    pub fn rater_ids(&self) -> impl Iterator<Item = &str> {
        self.raters.keys().map(String::as_str)
    }

    pub fn get(&self, unit: &str, rater: &str) -> Option<f64> {
        let u = self.units.get_index_of(unit)?;
        let r = self.raters.get_index_of(rater)?;
        self.cells.get(&(u, r)).copied()
    }

    /// Present values of every unit, in unit order (rater order within).
    pub(crate) fn unit_value_lists(&self) -> Vec<Vec<f64>> {
        let mut rows = vec![Vec::new(); self.units.len()];
        for (u, row) in rows.iter_mut().enumerate() {
            for r in 0..self.raters.len() {
                if let Some(&v) = self.cells.get(&(u, r)) {
                    row.push(v);
                }
            }
        }
        rows
    }
}

/// The outcome of an alpha computation.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaResult {
    Computed(AlphaStats),
    /// The data admits no alpha; reporting a number would be misleading.
    Degenerate(DegenerateReason),
}

impl AlphaResult {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            AlphaResult::Computed(stats) => Some(stats.alpha),
            AlphaResult::Degenerate(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaStats {
    pub alpha: f64,
    pub observed_disagreement: f64,
    pub expected_disagreement: f64,
    /// Total pairable values `n` (the coincidence-matrix mass).
    pub pairable_values: f64,
    /// Units contributing at least two values.
    pub pairable_units: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerateReason {
    /// No unit carries two or more ratings: nothing can be paired.
    NoPairableUnits,
    /// Every pairable rating has the same value: expected disagreement is
    /// zero and the ratio is undefined.
    NoVariation,
}

impl std::fmt::Display for DegenerateReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DegenerateReason::NoPairableUnits => {
                f.write_str("no unit has two or more ratings, so no pairs exist")
            }
            DegenerateReason::NoVariation => {
                f.write_str("all pairable ratings are identical, so expected disagreement is zero")
            }
        }
    }
}

/// Compute Krippendorff's alpha for the matrix at its measurement level.
pub fn krippendorff_alpha(matrix: &RatingMatrix) -> AlphaResult {
    let units: Vec<Vec<f64>> = matrix
        .unit_value_lists()
        .into_iter()
        .filter(|values| values.len() >= 2)
        .collect();
    if units.is_empty() {
        return AlphaResult::Degenerate(DegenerateReason::NoPairableUnits);
    }

    // Distinct values in ascending order; ordinal distances need the order.
    let mut distinct: Vec<OrderedFloat<f64>> =
        units.iter().flatten().map(|&v| OrderedFloat(v)).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let values: Vec<f64> = distinct.iter().map(|v| v.0).collect();
    let index_of: HashMap<OrderedFloat<f64>, usize> =
        distinct.iter().enumerate().map(|(i, &v)| (v, i)).collect();

    if values.len() < 2 {
        return AlphaResult::Degenerate(DegenerateReason::NoVariation);
    }

    // Coincidence matrix: each ordered within-unit pair contributes
    // 1 / (m_u - 1), so every unit carries total mass m_u.
    let v = values.len();
    let mut o = vec![vec![0.0f64; v]; v];
    for unit in &units {
        let m = unit.len();
        let weight = 1.0 / (m as f64 - 1.0);
        for (i, &a) in unit.iter().enumerate() {
            for (j, &b) in unit.iter().enumerate() {
                if i != j {
                    o[index_of[&OrderedFloat(a)]][index_of[&OrderedFloat(b)]] += weight;
                }
            }
        }
    }
    let margins: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = margins.iter().sum();

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..v {
        for k in 0..v {
            let d = delta_sq(matrix.level, &values, &margins, c, k);
            observed += o[c][k] * d;
            if c != k {
                expected += margins[c] * margins[k] * d;
            }
        }
    }
    observed /= n;
    expected /= n * (n - 1.0);

    if expected == 0.0 {
        return AlphaResult::Degenerate(DegenerateReason::NoVariation);
    }
    AlphaResult::Computed(AlphaStats {
        alpha: 1.0 - observed / expected,
        observed_disagreement: observed,
        expected_disagreement: expected,
        pairable_values: n,
        pairable_units: units.len(),
    })
}

/// Squared distance between the `c`-th and `k`-th distinct values under the
/// given level. `values` are ascending; `margins` are the coincidence-matrix
/// margins used by the ordinal metric.
fn delta_sq(level: Level, values: &[f64], margins: &[f64], c: usize, k: usize) -> f64 {
    if c == k {
        return 0.0;
    }
    match level {
        Level::Nominal => 1.0,
        Level::Interval => {
            let d = values[c] - values[k];
            d * d
        }
        Level::Ratio => {
            let sum = values[c] + values[k];
            if sum == 0.0 {
                0.0
            } else {
                let d = (values[c] - values[k]) / sum;
                d * d
            }
        }
        Level::Ordinal => {
            let (lo, hi) = if c < k { (c, k) } else { (k, c) };
            let between: f64 = margins[lo..=hi].iter().sum();
            let d = between - (margins[c] + margins[k]) / 2.0;
            d * d
        }
    }
}

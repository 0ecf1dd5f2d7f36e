//! Exogenous covariate storage, missingness policies, and interpolation.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Period;

#[derive(Debug, Error)]
pub enum CovariateError {
    #[error("covariate `{0}` is declared both node-level and dyad-level")]
    MixedLevel(String),
    #[error("missing value for covariate `{covariate}`, actor `{actor}`, period {period}")]
    MissingNode {
        covariate: String,
        actor: String,
        period: Period,
    },
    #[error("missing value for covariate `{covariate}`, dyad `{sender}` -> `{receiver}`, period {period}")]
    MissingDyad {
        covariate: String,
        sender: String,
        receiver: String,
        period: Period,
    },
    #[error("unknown covariate `{0}`")]
    Unknown(String),
    #[error("covariate `{covariate}` is {found}-level but the term requires {required}-level data")]
    WrongLevel {
        covariate: String,
        found: &'static str,
        required: &'static str,
    },
}

/// What to do when a required covariate value is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Error at join time, naming covariate/actor/period.
    #[default]
    Fail,
    /// Linear interpolation when the series meets the coverage threshold;
    /// below-coverage series behave like `Fail`.
    Interpolate,
    /// Treat missing entries as zero.
    ZeroFill,
}

/// Per-covariate missingness rules plus the shared coverage threshold for
/// interpolation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariatePolicies {
    #[serde(default)]
    pub default: MissingPolicy,
    #[serde(default)]
    pub per_covariate: BTreeMap<String, MissingPolicy>,
    #[serde(default = "default_min_coverage")]
    pub min_coverage: f64,
}

fn default_min_coverage() -> f64 {
    0.6
}

impl Default for CovariatePolicies {
    fn default() -> Self {
        Self {
            default: MissingPolicy::Fail,
            per_covariate: BTreeMap::new(),
            min_coverage: default_min_coverage(),
        }
    }
}

impl CovariatePolicies {
    pub fn policy_for(&self, covariate: &str) -> MissingPolicy {
        self.per_covariate
            .get(covariate)
            .copied()
            .unwrap_or(self.default)
    }
}

/// Result of interpolating one partially observed series.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationOutcome {
    pub values: BTreeMap<Period, f64>,
    pub below_coverage: bool,
}

/// Fills interior gaps of `observed` by linear interpolation over `domain`
/// when the fraction of observed periods reaches `min_coverage`; boundary gaps
/// carry the nearest observation. Below the threshold the series is returned
/// unchanged and flagged.
pub fn interpolate_series(
    observed: &BTreeMap<Period, f64>,
    domain: RangeInclusive<Period>,
    min_coverage: f64,
) -> InterpolationOutcome {
    let (lo, hi) = (*domain.start(), *domain.end());
    let total = hi.saturating_sub(lo) + 1;
    let in_domain: BTreeMap<Period, f64> = observed
        .iter()
        .filter(|(t, _)| (lo..=hi).contains(t))
        .map(|(&t, &v)| (t, v))
        .collect();
    if in_domain.is_empty() || total == 0 {
        return InterpolationOutcome {
            values: in_domain,
            below_coverage: true,
        };
    }
    let coverage = in_domain.len() as f64 / total as f64;
    if coverage < min_coverage {
        return InterpolationOutcome {
            values: in_domain,
            below_coverage: true,
        };
    }
    let keys: Vec<Period> = in_domain.keys().copied().collect();
    let mut values = BTreeMap::new();
    for t in lo..=hi {
        if let Some(&v) = in_domain.get(&t) {
            values.insert(t, v);
            continue;
        }
        let prev = keys.iter().rev().find(|&&k| k < t);
        let next = keys.iter().find(|&&k| k > t);
        let filled = match (prev, next) {
            (Some(&p), Some(&n)) => {
                let vp = in_domain[&p];
                let vn = in_domain[&n];
                vp + (vn - vp) * (t - p) as f64 / (n - p) as f64
            }
            // Boundary gaps: constant carry from the nearest observation.
            (Some(&p), None) => in_domain[&p],
            (None, Some(&n)) => in_domain[&n],
            (None, None) => unreachable!("in_domain nonempty"),
        };
        values.insert(t, filled);
    }
    InterpolationOutcome {
        values,
        below_coverage: false,
    }
}

/// Node-level and dyad-level exogenous time series with missingness handling.
///
/// A covariate name is either node-level or dyad-level, never both. Call
/// [`CovariateTable::prepare`] once the panel's period range is known to apply
/// the interpolation policy; resolution then honours the per-covariate rules.
#[derive(Debug, Clone, Default)]
pub struct CovariateTable {
    node: BTreeMap<String, BTreeMap<String, BTreeMap<Period, f64>>>,
    dyad: BTreeMap<String, BTreeMap<(String, String), BTreeMap<Period, f64>>>,
    policies: CovariatePolicies,
    below_coverage: BTreeSet<(String, String)>,
    prepared_domain: Option<RangeInclusive<Period>>,
}

impl CovariateTable {
    pub fn new(policies: CovariatePolicies) -> Self {
        Self {
            policies,
            ..Self::default()
        }
    }

    pub fn policies(&self) -> &CovariatePolicies {
        &self.policies
    }

    pub fn insert_node(
        &mut self,
        name: &str,
        actor: &str,
        period: Period,
        value: f64,
    ) -> Result<(), CovariateError> {
        if self.dyad.contains_key(name) {
            return Err(CovariateError::MixedLevel(name.into()));
        }
        self.node
            .entry(name.into())
            .or_default()
            .entry(actor.into())
            .or_default()
            .insert(period, value);
        Ok(())
    }

    pub fn insert_dyad(
        &mut self,
        name: &str,
        sender: &str,
        receiver: &str,
        period: Period,
        value: f64,
    ) -> Result<(), CovariateError> {
        if self.node.contains_key(name) {
            return Err(CovariateError::MixedLevel(name.into()));
        }
        self.dyad
            .entry(name.into())
            .or_default()
            .entry((sender.into(), receiver.into()))
            .or_default()
            .insert(period, value);
        Ok(())
    }

    pub fn is_node(&self, name: &str) -> bool {
        self.node.contains_key(name)
    }

    pub fn is_dyad(&self, name: &str) -> bool {
        self.dyad.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.node.keys().chain(self.dyad.keys()).map(|s| s.as_str())
    }

    /// Applies the interpolation policy over `domain` to every series whose
    /// covariate is configured `Interpolate`. Idempotent for a fixed domain.
    pub fn prepare(&mut self, domain: RangeInclusive<Period>) {
        self.below_coverage.clear();
        let min_coverage = self.policies.min_coverage;
        let interpolated: Vec<String> = self
            .node
            .keys()
            .chain(self.dyad.keys())
            .filter(|name| self.policies.policy_for(name) == MissingPolicy::Interpolate)
            .cloned()
            .collect();
        for name in interpolated {
            if let Some(series_by_actor) = self.node.get_mut(&name) {
                for (actor, series) in series_by_actor.iter_mut() {
                    let outcome = interpolate_series(series, domain.clone(), min_coverage);
                    if outcome.below_coverage {
                        self.below_coverage.insert((name.clone(), actor.clone()));
                    } else {
                        *series = outcome.values;
                    }
                }
            }
            if let Some(series_by_dyad) = self.dyad.get_mut(&name) {
                for ((s, r), series) in series_by_dyad.iter_mut() {
                    let outcome = interpolate_series(series, domain.clone(), min_coverage);
                    if outcome.below_coverage {
                        self.below_coverage.insert((name.clone(), format!("{s}->{r}")));
                    } else {
                        *series = outcome.values;
                    }
                }
            }
        }
        self.prepared_domain = Some(domain);
    }

    /// Series flagged below the coverage threshold during [`prepare`],
    /// as `(covariate, unit)` pairs.
    ///
    /// [`prepare`]: CovariateTable::prepare
    pub fn below_coverage(&self) -> impl Iterator<Item = &(String, String)> {
        self.below_coverage.iter()
    }

    /// Resolves a node-level value under the covariate's missingness policy.
    pub fn resolve_node(
        &self,
        name: &str,
        actor: &str,
        period: Period,
    ) -> Result<f64, CovariateError> {
        let series = self.node.get(name).ok_or_else(|| {
            if self.dyad.contains_key(name) {
                CovariateError::WrongLevel {
                    covariate: name.into(),
                    found: "dyad",
                    required: "node",
                }
            } else {
                CovariateError::Unknown(name.into())
            }
        })?;
        let found = series.get(actor).and_then(|s| s.get(&period)).copied();
        match found {
            Some(v) => Ok(v),
            None => match self.policies.policy_for(name) {
                MissingPolicy::ZeroFill => Ok(0.0),
                MissingPolicy::Fail | MissingPolicy::Interpolate => {
                    Err(CovariateError::MissingNode {
                        covariate: name.into(),
                        actor: actor.into(),
                        period,
                    })
                }
            },
        }
    }

    /// Resolves a dyad-level value under the covariate's missingness policy.
    pub fn resolve_dyad(
        &self,
        name: &str,
        sender: &str,
        receiver: &str,
        period: Period,
    ) -> Result<f64, CovariateError> {
        let series = self.dyad.get(name).ok_or_else(|| {
            if self.node.contains_key(name) {
                CovariateError::WrongLevel {
                    covariate: name.into(),
                    found: "node",
                    required: "dyad",
                }
            } else {
                CovariateError::Unknown(name.into())
            }
        })?;
        let found = series
            .get(&(sender.to_owned(), receiver.to_owned()))
            .and_then(|s| s.get(&period))
            .copied();
        match found {
            Some(v) => Ok(v),
            None => match self.policies.policy_for(name) {
                MissingPolicy::ZeroFill => Ok(0.0),
                MissingPolicy::Fail | MissingPolicy::Interpolate => {
                    Err(CovariateError::MissingDyad {
                        covariate: name.into(),
                        sender: sender.into(),
                        receiver: receiver.into(),
                        period,
                    })
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(pairs: &[(Period, f64)]) -> BTreeMap<Period, f64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn interior_gap_is_linearly_interpolated() {
        let out = interpolate_series(&series(&[(1, 0.0), (3, 2.0)]), 1..=3, 0.6);
        assert!(!out.below_coverage);
        assert_eq!(out.values[&2], 1.0);
    }

    #[test]
    fn below_coverage_series_is_unchanged_and_flagged() {
        let out = interpolate_series(&series(&[(1, 5.0)]), 1..=10, 0.6);
        assert!(out.below_coverage);
        assert_eq!(out.values, series(&[(1, 5.0)]));
    }

    #[test]
    fn fully_observed_series_is_identity() {
        let s = series(&[(1, 1.0), (2, 4.0), (3, 9.0)]);
        let out = interpolate_series(&s, 1..=3, 0.6);
        assert!(!out.below_coverage);
        assert_eq!(out.values, s);
    }

    #[test]
    fn boundary_gaps_carry_nearest_observation() {
        let out = interpolate_series(&series(&[(2, 3.0), (4, 5.0)]), 1..=5, 0.3);
        assert_eq!(out.values[&1], 3.0);
        assert_eq!(out.values[&5], 5.0);
        assert_eq!(out.values[&3], 4.0);
    }

    #[test]
    fn mixed_level_names_are_rejected() {
        let mut table = CovariateTable::default();
        table.insert_node("gdp", "A", 1, 1.0).unwrap();
        assert!(matches!(
            table.insert_dyad("gdp", "A", "B", 1, 1.0),
            Err(CovariateError::MixedLevel(_))
        ));
    }

    #[test]
    fn policies_control_missing_resolution() {
        let mut policies = CovariatePolicies::default();
        policies
            .per_covariate
            .insert("filled".into(), MissingPolicy::ZeroFill);
        let mut table = CovariateTable::new(policies);
        table.insert_node("strict", "A", 1, 1.0).unwrap();
        table.insert_node("filled", "A", 1, 1.0).unwrap();
        assert!(matches!(
            table.resolve_node("strict", "A", 2),
            Err(CovariateError::MissingNode { .. })
        ));
        assert_eq!(table.resolve_node("filled", "A", 2).unwrap(), 0.0);
    }

    #[test]
    fn prepare_interpolates_only_covered_series() {
        let mut policies = CovariatePolicies::default();
        policies.default = MissingPolicy::Interpolate;
        let mut table = CovariateTable::new(policies);
        table.insert_node("x", "A", 1, 0.0).unwrap();
        table.insert_node("x", "A", 3, 2.0).unwrap();
        table.insert_node("x", "B", 1, 7.0).unwrap();
        table.prepare(1..=3);
        assert_eq!(table.resolve_node("x", "A", 2).unwrap(), 1.0);
        // B has 1/3 coverage: flagged, and resolution fails at join time.
        assert!(table
            .below_coverage()
            .any(|(name, unit)| name == "x" && unit == "B"));
        assert!(table.resolve_node("x", "B", 2).is_err());
    }
}

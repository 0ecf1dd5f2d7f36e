//! Longitudinal count-valued networks with compositional change.
//!
//! An [`EventPanel`] holds `T` sparse nonnegative count matrices (one per
//! observation period) plus an [`ActorRegistry`] recording which actors exist
//! in which periods. Counts are structurally zero on the diagonal and outside
//! the per-period risk set; those invariants are enforced at construction.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

/// 1-based observation period index.
pub type Period = usize;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("period {period} is out of range 1..={max}")]
    PeriodOutOfRange { period: Period, max: usize },
    #[error("self-loop count for actor `{actor}` at period {period}")]
    SelfLoop { actor: String, period: Period },
    #[error("count for `{sender}` -> `{receiver}` at period {period} involves an actor outside the risk set")]
    OutsideRiskSet {
        sender: String,
        receiver: String,
        period: Period,
    },
    #[error("unknown actor `{0}`")]
    UnknownActor(String),
    #[error("quantile level {0} must lie in [0, 1)")]
    InvalidQuantile(f64),
    #[error("event record {sender} -> {receiver} at period {period} has no value field")]
    MissingValue {
        sender: String,
        receiver: String,
        period: Period,
    },
}

/// One ingested event row: `count` events from `sender` to `receiver` in
/// `period`, optionally carrying an aggregate valuation (e.g. a TIV).
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub period: Period,
    pub sender: String,
    pub receiver: String,
    pub count: u64,
    pub value: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Actor {
    pub id: String,
    pub label: String,
}

/// The actor set and its per-period presence (the risk sets).
#[derive(Debug, Clone, Default)]
pub struct ActorRegistry {
    actors: Vec<Actor>,
    index: HashMap<String, usize>,
    presence: Vec<BTreeSet<Period>>,
}

impl ActorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `id`, inserting it (label = id) if unseen. Indices are assigned
    /// in insertion order, so identical inputs yield identical indices.
    pub fn insert(&mut self, id: &str) -> usize {
        if let Some(&ix) = self.index.get(id) {
            return ix;
        }
        let ix = self.actors.len();
        self.actors.push(Actor {
            id: id.to_owned(),
            label: id.to_owned(),
        });
        self.index.insert(id.to_owned(), ix);
        self.presence.push(BTreeSet::new());
        ix
    }

    pub fn set_label(&mut self, id: &str, label: &str) -> Result<(), NetworkError> {
        let ix = self
            .index_of(id)
            .ok_or_else(|| NetworkError::UnknownActor(id.to_owned()))?;
        self.actors[ix].label = label.to_owned();
        Ok(())
    }

    pub fn add_presence(&mut self, actor: usize, period: Period) {
        self.presence[actor].insert(period);
    }

    pub fn len(&self) -> usize {
        self.actors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actors.is_empty()
    }

    pub fn actor(&self, ix: usize) -> &Actor {
        &self.actors[ix]
    }

    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn presence(&self, actor: usize) -> &BTreeSet<Period> {
        &self.presence[actor]
    }

    pub fn is_present(&self, actor: usize, period: Period) -> bool {
        self.presence[actor].contains(&period)
    }
}

/// `T` sparse count matrices plus the registry that defines the risk sets.
///
/// Counts are keyed by `(sender, receiver)` actor index per period; absent keys
/// are zero. The diagonal and all cells involving an actor absent from the
/// period's risk set are structurally zero and cannot be set.
#[derive(Debug, Clone)]
pub struct EventPanel {
    periods: usize,
    first_label: i64,
    registry: ActorRegistry,
    counts: Vec<BTreeMap<(usize, usize), u64>>,
}

impl EventPanel {
    /// An all-zero panel over `periods` periods. `first_label` is the calendar
    /// label of period 1, kept as metadata only.
    pub fn new(registry: ActorRegistry, periods: usize, first_label: i64) -> Self {
        Self {
            periods,
            first_label,
            registry,
            counts: vec![BTreeMap::new(); periods],
        }
    }

    /// Builds a panel from event records, summing duplicate `(t, i, j)` cells.
    /// The registry must already contain every actor and its presence.
    pub fn from_records(
        registry: ActorRegistry,
        periods: usize,
        first_label: i64,
        records: &[EventRecord],
    ) -> Result<Self, NetworkError> {
        let mut panel = Self::new(registry, periods, first_label);
        for rec in records {
            let i = panel
                .registry
                .index_of(&rec.sender)
                .ok_or_else(|| NetworkError::UnknownActor(rec.sender.clone()))?;
            let j = panel
                .registry
                .index_of(&rec.receiver)
                .ok_or_else(|| NetworkError::UnknownActor(rec.receiver.clone()))?;
            panel.add_count(rec.period, i, j, rec.count)?;
        }
        Ok(panel)
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    /// Calendar label of period `t`.
    pub fn period_label(&self, t: Period) -> i64 {
        self.first_label + t as i64 - 1
    }

    pub fn first_label(&self) -> i64 {
        self.first_label
    }

    pub fn registry(&self) -> &ActorRegistry {
        &self.registry
    }

    pub fn n_actors(&self) -> usize {
        self.registry.len()
    }

    fn check_period(&self, t: Period) -> Result<(), NetworkError> {
        if t < 1 || t > self.periods {
            return Err(NetworkError::PeriodOutOfRange {
                period: t,
                max: self.periods,
            });
        }
        Ok(())
    }

    /// Adds `count` to cell `(t, i, j)`, enforcing the structural-zero
    /// invariants (no self-loops, both actors present at `t`).
    pub fn add_count(&mut self, t: Period, i: usize, j: usize, count: u64) -> Result<(), NetworkError> {
        self.check_period(t)?;
        if i == j {
            return Err(NetworkError::SelfLoop {
                actor: self.registry.actor(i).id.clone(),
                period: t,
            });
        }
        if !self.registry.is_present(i, t) || !self.registry.is_present(j, t) {
            return Err(NetworkError::OutsideRiskSet {
                sender: self.registry.actor(i).id.clone(),
                receiver: self.registry.actor(j).id.clone(),
                period: t,
            });
        }
        if count > 0 {
            *self.counts[t - 1].entry((i, j)).or_insert(0) += count;
        }
        Ok(())
    }

    /// The count `y_{ij,t}`; zero for absent keys and structural zeros.
    pub fn count(&self, t: Period, i: usize, j: usize) -> u64 {
        if t < 1 || t > self.periods {
            return 0;
        }
        self.counts[t - 1].get(&(i, j)).copied().unwrap_or(0)
    }

    /// Nonzero cells of period `t` in deterministic `(sender, receiver)` order.
    pub fn nonzero(&self, t: Period) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.counts[t - 1].iter().map(|(&(i, j), &c)| (i, j, c))
    }

    /// The risk set `R_t`: indices of actors present at `t`, ascending.
    pub fn risk_set(&self, t: Period) -> Result<Vec<usize>, NetworkError> {
        self.check_period(t)?;
        Ok((0..self.registry.len())
            .filter(|&a| self.registry.is_present(a, t))
            .collect())
    }

    pub fn risk_count(&self, t: Period) -> Result<usize, NetworkError> {
        Ok(self.risk_set(t)?.len())
    }

    pub fn total_events(&self) -> u64 {
        self.counts.iter().flat_map(|m| m.values()).sum()
    }

    /// Flattens the panel back into one record per nonzero cell (values are not
    /// retained by the panel, so records carry `value: None`).
    pub fn to_records(&self) -> Vec<EventRecord> {
        let mut out = Vec::new();
        for t in 1..=self.periods {
            for (i, j, c) in self.nonzero(t) {
                out.push(EventRecord {
                    period: t,
                    sender: self.registry.actor(i).id.clone(),
                    receiver: self.registry.actor(j).id.clone(),
                    count: c,
                    value: None,
                });
            }
        }
        out
    }
}

/// Empirical quantile with type-7 linear interpolation on sorted data.
///
/// `sorted` must be ascending and nonempty; `q` in [0, 1].
pub(crate) fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Keeps the records whose `value` strictly exceeds the empirical `q`-quantile
/// (type 7) of all record values. Every record must carry a value.
pub fn filter_by_value_quantile(
    records: &[EventRecord],
    q: f64,
) -> Result<Vec<EventRecord>, NetworkError> {
    if !(0.0..1.0).contains(&q) {
        return Err(NetworkError::InvalidQuantile(q));
    }
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let mut values = Vec::with_capacity(records.len());
    for rec in records {
        match rec.value {
            Some(v) => values.push(v),
            None => {
                return Err(NetworkError::MissingValue {
                    sender: rec.sender.clone(),
                    receiver: rec.receiver.clone(),
                    period: rec.period,
                })
            }
        }
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let threshold = quantile_type7(&values, q);
    Ok(records
        .iter()
        .filter(|r| r.value.unwrap() > threshold)
        .cloned()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(period: Period, sender: &str, receiver: &str, count: u64, value: f64) -> EventRecord {
        EventRecord {
            period,
            sender: sender.into(),
            receiver: receiver.into(),
            count,
            value: Some(value),
        }
    }

    fn registry(ids: &[&str], periods: usize) -> ActorRegistry {
        let mut reg = ActorRegistry::new();
        for id in ids {
            let ix = reg.insert(id);
            for t in 1..=periods {
                reg.add_presence(ix, t);
            }
        }
        reg
    }

    #[test]
    fn duplicate_cells_are_summed() {
        let reg = registry(&["A", "B"], 1);
        let recs = vec![
            EventRecord {
                period: 1,
                sender: "A".into(),
                receiver: "B".into(),
                count: 2,
                value: None,
            },
            EventRecord {
                period: 1,
                sender: "A".into(),
                receiver: "B".into(),
                count: 1,
                value: None,
            },
        ];
        let panel = EventPanel::from_records(reg, 1, 1, &recs).unwrap();
        assert_eq!(panel.count(1, 0, 1), 3);
    }

    #[test]
    fn empty_panel_is_all_zero() {
        let reg = registry(&["A", "B"], 5);
        let panel = EventPanel::from_records(reg, 5, 1, &[]).unwrap();
        assert_eq!(panel.periods(), 5);
        assert_eq!(panel.total_events(), 0);
        for t in 1..=5 {
            assert_eq!(panel.count(t, 0, 1), 0);
            assert_eq!(panel.count(t, 1, 0), 0);
        }
    }

    #[test]
    fn diagonal_is_rejected() {
        let reg = registry(&["A"], 1);
        let mut panel = EventPanel::new(reg, 1, 1);
        let err = panel.add_count(1, 0, 0, 1).unwrap_err();
        assert!(matches!(err, NetworkError::SelfLoop { .. }));
    }

    #[test]
    fn counts_outside_risk_set_are_rejected() {
        let mut reg = ActorRegistry::new();
        let a = reg.insert("A");
        let b = reg.insert("B");
        reg.add_presence(a, 1);
        reg.add_presence(a, 2);
        reg.add_presence(b, 2);
        let mut panel = EventPanel::new(reg, 2, 1);
        assert!(matches!(
            panel.add_count(1, a, b, 1),
            Err(NetworkError::OutsideRiskSet { .. })
        ));
        panel.add_count(2, a, b, 1).unwrap();
    }

    #[test]
    fn risk_set_follows_presence() {
        let mut reg = ActorRegistry::new();
        let a = reg.insert("A");
        let b = reg.insert("B");
        reg.add_presence(a, 1);
        reg.add_presence(a, 2);
        reg.add_presence(b, 2);
        let panel = EventPanel::new(reg, 2, 1);
        assert_eq!(panel.risk_set(1).unwrap(), vec![a]);
        assert_eq!(panel.risk_set(2).unwrap(), vec![a, b]);
        assert!(matches!(
            panel.risk_set(3),
            Err(NetworkError::PeriodOutOfRange { .. })
        ));
    }

    #[test]
    fn quantile_filter_at_zero_keeps_values_above_min() {
        let recs: Vec<_> = (1..=4).map(|k| record(1, "A", "B", 1, k as f64)).collect();
        let kept = filter_by_value_quantile(&recs, 0.0).unwrap();
        let values: Vec<f64> = kept.iter().map(|r| r.value.unwrap()).collect();
        assert_eq!(values, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn quantile_filter_uses_type7_interpolation() {
        // Oracle: the type-7 median of {1,2,3,4} is 2 + 0.5*(3-2) = 2.5.
        let recs: Vec<_> = (1..=4).map(|k| record(1, "A", "B", 1, k as f64)).collect();
        let kept = filter_by_value_quantile(&recs, 0.5).unwrap();
        let values: Vec<f64> = kept.iter().map(|r| r.value.unwrap()).collect();
        assert_eq!(values, vec![3.0, 4.0]);
    }

    #[test]
    fn quantile_filter_on_empty_input() {
        assert!(filter_by_value_quantile(&[], 0.3).unwrap().is_empty());
    }

    #[test]
    fn quantile_filter_requires_values() {
        let recs = vec![EventRecord {
            period: 1,
            sender: "A".into(),
            receiver: "B".into(),
            count: 1,
            value: None,
        }];
        assert!(matches!(
            filter_by_value_quantile(&recs, 0.1),
            Err(NetworkError::MissingValue { .. })
        ));
    }

    #[test]
    fn quantile_filter_is_monotone_in_q() {
        let values = [0.5, 1.0, 1.5, 2.0, 2.0, 3.0, 7.0, 11.0];
        let recs: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(k, &v)| record(1, &format!("S{k}"), "B", 1, v))
            .collect();
        let mut previous = recs.len() + 1;
        for step in 0..10 {
            let q = step as f64 / 10.0;
            let kept = filter_by_value_quantile(&recs, q).unwrap();
            assert!(kept.len() <= previous, "result(q2) must be within result(q1)");
            previous = kept.len();
        }
    }
}

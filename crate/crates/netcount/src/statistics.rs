//! Endogenous structural covariates of the lagged network and their join with
//! exogenous terms.
//!
//! Every statistic at period `t` reads only the previous period's counts
//! `y_{t-1}` and is an indicator-based sum over all registry actors, so the
//! magnitude of positive counts never matters. The degree and triadic
//! statistics are normalized by `100/(n_t - 1)` and `100/(n_t - 2)` with
//! `n_t = |R_t|` at the modeled period. Past counts of actors that have since
//! left the network still enter the sums (documented convention); under a
//! shrinking risk set the normalized value can therefore exceed 100.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariates::{CovariateError, CovariateTable};
use crate::network::{EventPanel, Period};

#[derive(Debug, Error)]
pub enum StatisticError {
    #[error("statistics at period {0} need a previous period (t >= 2)")]
    NoLaggedPeriod(Period),
    #[error("period {period} is out of range 1..={max}")]
    PeriodOutOfRange { period: Period, max: usize },
    #[error("actor index {actor} is not at risk at period {period}")]
    NotAtRisk { actor: usize, period: Period },
    #[error("degree normalizer undefined: risk set at period {0} has fewer than 2 actors")]
    DegenerateDegree(Period),
    #[error("triadic normalizer undefined: risk set at period {0} has fewer than 3 actors")]
    DegenerateTriad(Period),
    #[error("sender and receiver coincide (actor {0})")]
    SelfDyad(usize),
    #[error("`log` transform applied to nonpositive value {value} of covariate `{covariate}`")]
    NonpositiveLog { covariate: String, value: f64 },
    #[error("`log1p` transform applied to value {value} <= -1 of covariate `{covariate}`")]
    Log1pOutOfRange { covariate: String, value: f64 },
    #[error("`absdiff` requires a node-level covariate, `{0}` is not one")]
    AbsDiffNeedsNode(String),
    #[error(transparent)]
    Covariate(#[from] CovariateError),
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
}

/// The seven endogenous statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralStatistic {
    InDegreeSender,
    InDegreeReceiver,
    OutDegreeSender,
    OutDegreeReceiver,
    Transitivity,
    SharedSupplier,
    Reciprocity,
}

impl StructuralStatistic {
    pub const ALL: [StructuralStatistic; 7] = [
        StructuralStatistic::InDegreeSender,
        StructuralStatistic::InDegreeReceiver,
        StructuralStatistic::OutDegreeSender,
        StructuralStatistic::OutDegreeReceiver,
        StructuralStatistic::Transitivity,
        StructuralStatistic::SharedSupplier,
        StructuralStatistic::Reciprocity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StructuralStatistic::InDegreeSender => "in_degree_sender",
            StructuralStatistic::InDegreeReceiver => "in_degree_receiver",
            StructuralStatistic::OutDegreeSender => "out_degree_sender",
            StructuralStatistic::OutDegreeReceiver => "out_degree_receiver",
            StructuralStatistic::Transitivity => "transitivity",
            StructuralStatistic::SharedSupplier => "shared_supplier",
            StructuralStatistic::Reciprocity => "reciprocity",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|s| s.name() == name)
    }

    /// Degree statistics vary per actor, triadic ones and reciprocity per dyad.
    pub fn is_dyadic(&self) -> bool {
        matches!(
            self,
            StructuralStatistic::Transitivity
                | StructuralStatistic::SharedSupplier
                | StructuralStatistic::Reciprocity
        )
    }
}

impl std::fmt::Display for StructuralStatistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_dyad_period(panel: &EventPanel, t: Period) -> Result<(), StatisticError> {
    if t > panel.periods() {
        return Err(StatisticError::PeriodOutOfRange {
            period: t,
            max: panel.periods(),
        });
    }
    if t < 2 {
        return Err(StatisticError::NoLaggedPeriod(t));
    }
    Ok(())
}

fn degree_normalizer(panel: &EventPanel, t: Period) -> Result<f64, StatisticError> {
    let n_t = panel.risk_count(t)?;
    if n_t <= 1 {
        return Err(StatisticError::DegenerateDegree(t));
    }
    Ok(100.0 / (n_t - 1) as f64)
}

fn triad_normalizer(panel: &EventPanel, t: Period) -> Result<f64, StatisticError> {
    let n_t = panel.risk_count(t)?;
    if n_t <= 2 {
        return Err(StatisticError::DegenerateTriad(t));
    }
    Ok(100.0 / (n_t - 2) as f64)
}

/// Number of distinct actors that sent to `actor` in `y_{t-1}`.
fn lagged_in_degree(panel: &EventPanel, t: Period, actor: usize) -> usize {
    (0..panel.n_actors())
        .filter(|&h| panel.count(t - 1, h, actor) > 0)
        .count()
}

/// Number of distinct actors that `actor` sent to in `y_{t-1}`.
fn lagged_out_degree(panel: &EventPanel, t: Period, actor: usize) -> usize {
    (0..panel.n_actors())
        .filter(|&h| panel.count(t - 1, actor, h) > 0)
        .count()
}

/// Normalized count of distinct suppliers of the sender in `y_{t-1}`.
pub fn in_degree_sender(panel: &EventPanel, t: Period, sender: usize) -> Result<f64, StatisticError> {
    check_dyad_period(panel, t)?;
    Ok(degree_normalizer(panel, t)? * lagged_in_degree(panel, t, sender) as f64)
}

/// Normalized count of distinct suppliers of the receiver in `y_{t-1}`.
pub fn in_degree_receiver(
    panel: &EventPanel,
    t: Period,
    receiver: usize,
) -> Result<f64, StatisticError> {
    check_dyad_period(panel, t)?;
    Ok(degree_normalizer(panel, t)? * lagged_in_degree(panel, t, receiver) as f64)
}

/// Normalized count of distinct customers of the sender in `y_{t-1}`.
pub fn out_degree_sender(
    panel: &EventPanel,
    t: Period,
    sender: usize,
) -> Result<f64, StatisticError> {
    check_dyad_period(panel, t)?;
    Ok(degree_normalizer(panel, t)? * lagged_out_degree(panel, t, sender) as f64)
}

/// Normalized count of distinct customers of the receiver in `y_{t-1}`.
pub fn out_degree_receiver(
    panel: &EventPanel,
    t: Period,
    receiver: usize,
) -> Result<f64, StatisticError> {
    check_dyad_period(panel, t)?;
    Ok(degree_normalizer(panel, t)? * lagged_out_degree(panel, t, receiver) as f64)
}

/// Normalized number of two-paths `i -> h -> j` in `y_{t-1}`.
pub fn transitivity(
    panel: &EventPanel,
    t: Period,
    sender: usize,
    receiver: usize,
) -> Result<f64, StatisticError> {
    check_dyad_period(panel, t)?;
    if sender == receiver {
        return Err(StatisticError::SelfDyad(sender));
    }
    let norm = triad_normalizer(panel, t)?;
    let paths = (0..panel.n_actors())
        .filter(|&h| panel.count(t - 1, sender, h) > 0 && panel.count(t - 1, h, receiver) > 0)
        .count();
    Ok(norm * paths as f64)
}

/// Normalized number of common suppliers `h -> i`, `h -> j` in `y_{t-1}`.
pub fn shared_supplier(
    panel: &EventPanel,
    t: Period,
    sender: usize,
    receiver: usize,
) -> Result<f64, StatisticError> {
    check_dyad_period(panel, t)?;
    if sender == receiver {
        return Err(StatisticError::SelfDyad(sender));
    }
    let norm = triad_normalizer(panel, t)?;
    let suppliers = (0..panel.n_actors())
        .filter(|&h| panel.count(t - 1, h, sender) > 0 && panel.count(t - 1, h, receiver) > 0)
        .count();
    Ok(norm * suppliers as f64)
}

/// Indicator of a reverse event `j -> i` in `y_{t-1}`.
pub fn reciprocity(
    panel: &EventPanel,
    t: Period,
    sender: usize,
    receiver: usize,
) -> Result<f64, StatisticError> {
    check_dyad_period(panel, t)?;
    if sender == receiver {
        return Err(StatisticError::SelfDyad(sender));
    }
    Ok(if panel.count(t - 1, receiver, sender) > 0 {
        1.0
    } else {
        0.0
    })
}

/// Evaluates any Table-style statistic for the ordered dyad `(sender, receiver)`.
pub fn evaluate(
    stat: StructuralStatistic,
    panel: &EventPanel,
    t: Period,
    sender: usize,
    receiver: usize,
) -> Result<f64, StatisticError> {
    match stat {
        StructuralStatistic::InDegreeSender => in_degree_sender(panel, t, sender),
        StructuralStatistic::InDegreeReceiver => in_degree_receiver(panel, t, receiver),
        StructuralStatistic::OutDegreeSender => out_degree_sender(panel, t, sender),
        StructuralStatistic::OutDegreeReceiver => out_degree_receiver(panel, t, receiver),
        StructuralStatistic::Transitivity => transitivity(panel, t, sender, receiver),
        StructuralStatistic::SharedSupplier => shared_supplier(panel, t, sender, receiver),
        StructuralStatistic::Reciprocity => reciprocity(panel, t, sender, receiver),
    }
}

/// Which actor's node covariate a term reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Sender,
    Receiver,
    Dyad,
}

/// Declared covariate transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    Log,
    Log1p,
    /// Absolute difference of the sender's and receiver's node scores.
    AbsDiff,
}

/// Where a model term's raw value comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TermSource {
    /// The constant 1 (spline-expanded it becomes the time-varying intercept).
    Intercept,
    Structural(StructuralStatistic),
    Exogenous {
        covariate: String,
        role: Role,
        transform: Transform,
    },
}

/// Raw (pre-expansion) value of one term for the dyad `(sender, receiver)` at
/// modeled period `t`. Exogenous covariates are read lagged at `t - 1`.
pub fn resolve_term(
    panel: &EventPanel,
    table: &CovariateTable,
    source: &TermSource,
    t: Period,
    sender: usize,
    receiver: usize,
) -> Result<f64, StatisticError> {
    match source {
        TermSource::Intercept => Ok(1.0),
        TermSource::Structural(stat) => evaluate(*stat, panel, t, sender, receiver),
        TermSource::Exogenous {
            covariate,
            role,
            transform,
        } => {
            let lag_t = t - 1;
            let sender_id = &panel.registry().actor(sender).id;
            let receiver_id = &panel.registry().actor(receiver).id;
            if *transform == Transform::AbsDiff {
                if !table.is_node(covariate) {
                    return Err(StatisticError::AbsDiffNeedsNode(covariate.clone()));
                }
                let a = table.resolve_node(covariate, sender_id, lag_t)?;
                let b = table.resolve_node(covariate, receiver_id, lag_t)?;
                return Ok((a - b).abs());
            }
            let raw = match role {
                Role::Sender => table.resolve_node(covariate, sender_id, lag_t)?,
                Role::Receiver => table.resolve_node(covariate, receiver_id, lag_t)?,
                Role::Dyad => table.resolve_dyad(covariate, sender_id, receiver_id, lag_t)?,
            };
            match transform {
                Transform::None => Ok(raw),
                Transform::Log => {
                    if raw <= 0.0 {
                        Err(StatisticError::NonpositiveLog {
                            covariate: covariate.clone(),
                            value: raw,
                        })
                    } else {
                        Ok(raw.ln())
                    }
                }
                Transform::Log1p => {
                    if raw <= -1.0 {
                        Err(StatisticError::Log1pOutOfRange {
                            covariate: covariate.clone(),
                            value: raw,
                        })
                    } else {
                        Ok(raw.ln_1p())
                    }
                }
                Transform::AbsDiff => unreachable!("handled above"),
            }
        }
    }
}

/// The assembled statistic vector `s_{ij}` for one dyad-period.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticVector {
    pub period: Period,
    pub sender: usize,
    pub receiver: usize,
    pub values: Vec<(String, f64)>,
}

/// Assembles the named statistic vector combining structural statistics and
/// exogenous terms for the ordered dyad `(sender, receiver)` at period `t`.
pub fn join_covariates(
    panel: &EventPanel,
    table: &CovariateTable,
    terms: &[(String, TermSource)],
    t: Period,
    sender: usize,
    receiver: usize,
) -> Result<StatisticVector, StatisticError> {
    let values = terms
        .iter()
        .map(|(name, source)| {
            resolve_term(panel, table, source, t, sender, receiver).map(|v| (name.clone(), v))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StatisticVector {
        period: t,
        sender,
        receiver,
        values,
    })
}

/// One entry of the lag-1 statistic auto-correlation diagnostic: the Pearson
/// correlation between the statistic evaluated at `period - 1` and at `period`
/// over all units present in both years. `None` marks undefined years
/// (fewer than two common units, or zero variance).
#[derive(Debug, Clone, PartialEq)]
pub struct YearCorrelation {
    pub period: Period,
    pub correlation: Option<f64>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for k in 0..n {
        let dx = x[k] - mx;
        let dy = y[k] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Yearly lag-1 correlations of an endogenous statistic.
///
/// Degree statistics are correlated over actors, dyadic statistics over
/// ordered dyads; units must be in the risk set in both years and the
/// statistic must be defined in both (so the earliest reported period is 3).
pub fn statistic_autocorrelation(
    panel: &EventPanel,
    stat: StructuralStatistic,
) -> Vec<YearCorrelation> {
    let mut out = Vec::new();
    for t in 3..=panel.periods() {
        let prev = match panel.risk_set(t - 1) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let curr = match panel.risk_set(t) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let common: Vec<usize> = prev.iter().copied().filter(|a| curr.contains(a)).collect();
        let mut old = Vec::new();
        let mut new = Vec::new();
        if stat.is_dyadic() {
            for &i in &common {
                for &j in &common {
                    if i == j {
                        continue;
                    }
                    match (
                        evaluate(stat, panel, t - 1, i, j),
                        evaluate(stat, panel, t, i, j),
                    ) {
                        (Ok(a), Ok(b)) => {
                            old.push(a);
                            new.push(b);
                        }
                        _ => {}
                    }
                }
            }
        } else {
            let per_actor = |t: Period, a: usize| match stat {
                StructuralStatistic::InDegreeSender => in_degree_sender(panel, t, a),
                StructuralStatistic::InDegreeReceiver => in_degree_receiver(panel, t, a),
                StructuralStatistic::OutDegreeSender => out_degree_sender(panel, t, a),
                StructuralStatistic::OutDegreeReceiver => out_degree_receiver(panel, t, a),
                _ => unreachable!("dyadic statistics handled above"),
            };
            for &a in &common {
                match (per_actor(t - 1, a), per_actor(t, a)) {
                    (Ok(x), Ok(y)) => {
                        old.push(x);
                        new.push(y);
                    }
                    _ => {}
                }
            }
        }
        out.push(YearCorrelation {
            period: t,
            correlation: pearson(&old, &new),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ActorRegistry;

    fn full_panel(n: usize, periods: usize) -> EventPanel {
        let mut reg = ActorRegistry::new();
        for k in 0..n {
            let ix = reg.insert(&format!("A{k}"));
            for t in 1..=periods {
                reg.add_presence(ix, t);
            }
        }
        EventPanel::new(reg, periods, 1)
    }

    #[test]
    fn in_degree_sender_counts_distinct_suppliers() {
        let mut panel = full_panel(3, 2);
        panel.add_count(1, 1, 0, 2).unwrap();
        panel.add_count(1, 2, 0, 5).unwrap();
        assert_eq!(in_degree_sender(&panel, 2, 0).unwrap(), 100.0);
    }

    #[test]
    fn degrees_are_zero_on_an_empty_previous_network() {
        let panel = full_panel(3, 2);
        assert_eq!(in_degree_sender(&panel, 2, 0).unwrap(), 0.0);
        assert_eq!(out_degree_receiver(&panel, 2, 1).unwrap(), 0.0);
    }

    #[test]
    fn one_incoming_edge_among_three_actors_is_fifty() {
        let mut panel = full_panel(3, 2);
        panel.add_count(1, 1, 0, 3).unwrap();
        assert_eq!(in_degree_sender(&panel, 2, 0).unwrap(), 50.0);
    }

    #[test]
    fn in_degree_receiver_with_four_actors() {
        let mut panel = full_panel(4, 2);
        panel.add_count(1, 0, 2, 1).unwrap();
        let got = in_degree_receiver(&panel, 2, 2).unwrap();
        assert!((got - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn out_degree_sender_with_two_customers_is_hundred() {
        let mut panel = full_panel(3, 2);
        panel.add_count(1, 0, 1, 1).unwrap();
        panel.add_count(1, 0, 2, 9).unwrap();
        assert_eq!(out_degree_sender(&panel, 2, 0).unwrap(), 100.0);
    }

    #[test]
    fn transitivity_counts_two_paths() {
        let mut panel = full_panel(4, 2);
        panel.add_count(1, 0, 2, 2).unwrap();
        panel.add_count(1, 2, 1, 5).unwrap();
        assert_eq!(transitivity(&panel, 2, 0, 1).unwrap(), 50.0);
        assert_eq!(transitivity(&panel, 2, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn transitivity_with_two_intermediaries_among_five() {
        let mut panel = full_panel(5, 2);
        panel.add_count(1, 0, 2, 1).unwrap();
        panel.add_count(1, 2, 1, 1).unwrap();
        panel.add_count(1, 0, 3, 1).unwrap();
        panel.add_count(1, 3, 1, 1).unwrap();
        let got = transitivity(&panel, 2, 0, 1).unwrap();
        assert!((got - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn shared_supplier_requires_both_edges() {
        let mut panel = full_panel(3, 2);
        panel.add_count(1, 2, 0, 1).unwrap();
        panel.add_count(1, 2, 1, 1).unwrap();
        assert_eq!(shared_supplier(&panel, 2, 0, 1).unwrap(), 100.0);

        let mut panel = full_panel(3, 2);
        panel.add_count(1, 2, 0, 1).unwrap();
        assert_eq!(shared_supplier(&panel, 2, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn reciprocity_is_an_indicator() {
        let mut panel = full_panel(2, 2);
        panel.add_count(1, 1, 0, 3).unwrap();
        assert_eq!(reciprocity(&panel, 2, 0, 1).unwrap(), 1.0);
        assert_eq!(reciprocity(&panel, 2, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_risk_sets_are_errors() {
        let panel = full_panel(1, 2);
        assert!(matches!(
            in_degree_sender(&panel, 2, 0),
            Err(StatisticError::DegenerateDegree(2))
        ));
        let panel = full_panel(2, 2);
        assert!(matches!(
            transitivity(&panel, 2, 0, 1),
            Err(StatisticError::DegenerateTriad(2))
        ));
    }

    #[test]
    fn join_covariates_assembles_named_values() {
        let mut panel = full_panel(2, 2);
        panel.add_count(1, 1, 0, 1).unwrap();
        let mut table = CovariateTable::default();
        table.insert_node("gdp", "A0", 1, std::f64::consts::E.powi(2)).unwrap();
        table.insert_node("polity", "A0", 1, 7.0).unwrap();
        table.insert_node("polity", "A1", 1, -3.0).unwrap();

        let terms = vec![
            (
                "reciprocity".to_string(),
                TermSource::Structural(StructuralStatistic::Reciprocity),
            ),
            (
                "log_gdp_sender".to_string(),
                TermSource::Exogenous {
                    covariate: "gdp".into(),
                    role: Role::Sender,
                    transform: Transform::Log,
                },
            ),
            (
                "polity_difference".to_string(),
                TermSource::Exogenous {
                    covariate: "polity".into(),
                    role: Role::Dyad,
                    transform: Transform::AbsDiff,
                },
            ),
        ];
        let vector = join_covariates(&panel, &table, &terms, 2, 0, 1).unwrap();
        assert_eq!(vector.values.len(), 3);
        assert_eq!(vector.values[0].1, 1.0);
        assert!((vector.values[1].1 - 2.0).abs() < 1e-12);
        assert_eq!(vector.values[2].1, 10.0);
    }

    #[test]
    fn single_term_spec_yields_length_one_vector() {
        let panel = full_panel(2, 2);
        let table = CovariateTable::default();
        let terms = vec![(
            "reciprocity".to_string(),
            TermSource::Structural(StructuralStatistic::Reciprocity),
        )];
        let vector = join_covariates(&panel, &table, &terms, 2, 0, 1).unwrap();
        assert_eq!(vector.values.len(), 1);
    }

    #[test]
    fn log_of_nonpositive_is_refused() {
        let panel = full_panel(2, 2);
        let mut table = CovariateTable::default();
        table.insert_node("gdp", "A0", 1, 0.0).unwrap();
        let source = TermSource::Exogenous {
            covariate: "gdp".into(),
            role: Role::Sender,
            transform: Transform::Log,
        };
        assert!(matches!(
            resolve_term(&panel, &table, &source, 2, 0, 1),
            Err(StatisticError::NonpositiveLog { .. })
        ));
    }

    #[test]
    fn missing_covariate_under_fail_policy_names_the_culprit() {
        let panel = full_panel(2, 2);
        let table = CovariateTable::default();
        let source = TermSource::Exogenous {
            covariate: "gdp".into(),
            role: Role::Sender,
            transform: Transform::None,
        };
        let err = resolve_term(&panel, &table, &source, 2, 0, 1).unwrap_err();
        assert!(err.to_string().contains("gdp"));
    }

    #[test]
    fn constant_statistic_has_undefined_autocorrelation() {
        let panel = full_panel(4, 3);
        let acs = statistic_autocorrelation(&panel, StructuralStatistic::InDegreeSender);
        assert_eq!(acs.len(), 1);
        assert_eq!(acs[0].period, 3);
        assert!(acs[0].correlation.is_none());
    }

    #[test]
    fn identical_varying_years_correlate_perfectly() {
        let mut panel = full_panel(4, 3);
        panel.add_count(1, 0, 1, 1).unwrap();
        panel.add_count(1, 2, 1, 1).unwrap();
        panel.add_count(2, 0, 1, 4).unwrap();
        panel.add_count(2, 2, 1, 2).unwrap();
        let acs = statistic_autocorrelation(&panel, StructuralStatistic::InDegreeSender);
        let r = acs[0].correlation.unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn autocorrelation_matches_direct_pearson() {
        // Oracle: recompute the correlation by hand for a 4-actor panel.
        let mut panel = full_panel(4, 3);
        panel.add_count(1, 0, 1, 1).unwrap();
        panel.add_count(1, 0, 2, 1).unwrap();
        panel.add_count(1, 3, 2, 2).unwrap();
        panel.add_count(2, 0, 1, 1).unwrap();
        panel.add_count(2, 3, 1, 1).unwrap();
        panel.add_count(2, 3, 2, 5).unwrap();

        let stat = StructuralStatistic::OutDegreeSender;
        let at = |t: Period, a: usize| evaluate(stat, &panel, t, a, (a + 1) % 4).unwrap();
        let old: Vec<f64> = (0..4).map(|a| at(2, a)).collect();
        let new: Vec<f64> = (0..4).map(|a| at(3, a)).collect();
        let n = 4.0;
        let mx = old.iter().sum::<f64>() / n;
        let my = new.iter().sum::<f64>() / n;
        let sxy: f64 = old.iter().zip(&new).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = old.iter().map(|x| (x - mx) * (x - mx)).sum();
        let syy: f64 = new.iter().map(|y| (y - my) * (y - my)).sum();
        let expected = sxy / (sxx * syy).sqrt();

        let acs = statistic_autocorrelation(&panel, stat);
        let got = acs.iter().find(|c| c.period == 3).unwrap().correlation.unwrap();
        assert!((got - expected).abs() < 1e-12);
    }
}

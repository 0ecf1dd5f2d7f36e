//! The counting-process design matrix: one row per at-risk ordered dyad-period.
//!
//! For every modeled period `t` (from `lag + 1`, or a configured later start)
//! and every ordered pair of distinct actors present at `t`, a row carries the
//! response `y_{ij,t}`, its onset/repetition regime, the spline-expanded
//! statistic columns of its regime block (columns of the other block are
//! exactly zero), one-hot random-effect incidences, and an observation weight.

use std::collections::BTreeMap;
use std::ops::Range;

use thiserror::Error;

use crate::covariates::CovariateTable;
use crate::model::{ModelError, ModelSpec, Regime, WeightScheme};
use crate::network::{EventPanel, EventRecord, Period};
use crate::splines::{PenaltyMatrix, SplineBasisSpec, SplineError};
use crate::statistics::{self, StatisticError, StructuralStatistic, TermSource};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Statistic(#[from] StatisticError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error("panel has {periods} periods but the first modeled period would be {first}")]
    NotEnoughPeriods { periods: usize, first: Period },
    #[error("first modeled period {given} is below the minimum {min} implied by the lag")]
    FirstModeledTooEarly { given: Period, min: Period },
    #[error("tiv_log weights require event records with values")]
    WeightsNeedRecords,
    #[error("record {sender} -> {receiver} at period {period} has no value, required for TIV weights")]
    TivMissingValue {
        sender: String,
        receiver: String,
        period: Period,
    },
    #[error("negative TIV {value} for {sender} -> {receiver} at period {period}")]
    NegativeTiv {
        sender: String,
        receiver: String,
        period: Period,
        value: f64,
    },
    #[error("record references actor `{0}` unknown to the design")]
    UnknownActor(String),
    #[error("design has no rows")]
    Empty,
}

/// Penalty association of a column group.
#[derive(Debug, Clone)]
pub enum ColumnPenalty {
    Spline(PenaltyMatrix),
    Ridge,
    Unpenalized,
}

/// A contiguous block of design columns belonging to one term in one regime
/// block, or to one random-effect block.
#[derive(Debug, Clone)]
pub struct ColumnGroup {
    pub label: String,
    pub term: Option<String>,
    pub source: Option<TermSource>,
    pub regime: Option<Regime>,
    pub columns: Range<usize>,
    pub penalty: ColumnPenalty,
    pub time_varying: bool,
    pub spline: Option<SplineBasisSpec>,
    pub is_intercept: bool,
}

impl ColumnGroup {
    pub fn width(&self) -> usize {
        self.columns.len()
    }
}

/// Column bookkeeping shared by the design matrix and fitted models.
#[derive(Debug, Clone)]
pub struct DesignLayout {
    pub model: ModelSpec,
    pub groups: Vec<ColumnGroup>,
    pub fixed_columns: usize,
    pub onset_span: Range<usize>,
    pub repetition_span: Range<usize>,
    pub pooled: bool,
    pub sender_block: Option<Range<usize>>,
    pub receiver_block: Option<Range<usize>>,
    pub actor_ids: Vec<String>,
    pub modeled_periods: Vec<Period>,
    pub first_label: i64,
}

impl DesignLayout {
    pub fn total_columns(&self) -> usize {
        self.fixed_columns
            + self.sender_block.as_ref().map_or(0, |r| r.len())
            + self.receiver_block.as_ref().map_or(0, |r| r.len())
    }

    /// Fixed-column span active for a row of the given regime.
    pub fn active_span(&self, regime: Regime) -> Range<usize> {
        if self.pooled {
            0..self.fixed_columns
        } else {
            match regime {
                Regime::Onset => self.onset_span.clone(),
                Regime::Repetition => self.repetition_span.clone(),
                Regime::Pooled => 0..self.fixed_columns,
            }
        }
    }

    pub fn group(&self, label: &str) -> Option<&ColumnGroup> {
        self.groups.iter().find(|g| g.label == label)
    }

    /// Groups carrying model terms (excludes random-effect blocks).
    pub fn term_groups(&self) -> impl Iterator<Item = &ColumnGroup> {
        self.groups.iter().filter(|g| g.term.is_some())
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.total_columns()];
        for group in &self.groups {
            if group.width() == 1 {
                names[group.columns.start] = group.label.clone();
            } else if let Some(block) = &self.sender_or_receiver_ids(group) {
                for (k, col) in group.columns.clone().enumerate() {
                    names[col] = format!("{}:{}", group.label, block[k]);
                }
            } else {
                for (k, col) in group.columns.clone().enumerate() {
                    names[col] = format!("{}:b{}", group.label, k + 1);
                }
            }
        }
        names
    }

    fn sender_or_receiver_ids(&self, group: &ColumnGroup) -> Option<Vec<String>> {
        let is_sender = self
            .sender_block
            .as_ref()
            .is_some_and(|r| *r == group.columns);
        let is_receiver = self
            .receiver_block
            .as_ref()
            .is_some_and(|r| *r == group.columns);
        if is_sender || is_receiver {
            Some(self.actor_ids.clone())
        } else {
            None
        }
    }
}

/// One at-risk ordered dyad-period observation.
#[derive(Debug, Clone)]
pub struct DesignRow {
    pub period: Period,
    pub sender: usize,
    pub receiver: usize,
    pub response: u64,
    pub regime: Regime,
    pub weight: f64,
    /// All fixed columns; entries outside the active regime block are zero.
    pub values: Vec<f64>,
    pub sender_index: Option<usize>,
    pub receiver_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub rows: Vec<DesignRow>,
    pub layout: DesignLayout,
}

impl DesignMatrix {
    pub fn total_columns(&self) -> usize {
        self.layout.total_columns()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Per-period cache of the lagged adjacency structure; mirrors the statistic
/// definitions in [`crate::statistics`] but amortizes the degree sums.
pub(crate) struct PeriodContext {
    n_t: usize,
    adjacency: Vec<bool>,
    in_degree: Vec<usize>,
    out_degree: Vec<usize>,
    n_actors: usize,
    period: Period,
}

impl PeriodContext {
    pub(crate) fn new(panel: &EventPanel, t: Period) -> Result<Self, DesignError> {
        let n_actors = panel.n_actors();
        let n_t = panel.risk_count(t)?;
        let mut adjacency = vec![false; n_actors * n_actors];
        let mut in_degree = vec![0usize; n_actors];
        let mut out_degree = vec![0usize; n_actors];
        if t >= 2 {
            for (i, j, _) in panel.nonzero(t - 1) {
                if !adjacency[i * n_actors + j] {
                    adjacency[i * n_actors + j] = true;
                    out_degree[i] += 1;
                    in_degree[j] += 1;
                }
            }
        }
        Ok(Self {
            n_t,
            adjacency,
            in_degree,
            out_degree,
            n_actors,
            period: t,
        })
    }

    fn linked(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n_actors + j]
    }

    pub(crate) fn structural(
        &self,
        stat: StructuralStatistic,
        sender: usize,
        receiver: usize,
    ) -> Result<f64, StatisticError> {
        let degree_norm = || {
            if self.n_t <= 1 {
                Err(StatisticError::DegenerateDegree(self.period))
            } else {
                Ok(100.0 / (self.n_t - 1) as f64)
            }
        };
        let triad_norm = || {
            if self.n_t <= 2 {
                Err(StatisticError::DegenerateTriad(self.period))
            } else {
                Ok(100.0 / (self.n_t - 2) as f64)
            }
        };
        match stat {
            StructuralStatistic::InDegreeSender => {
                Ok(degree_norm()? * self.in_degree[sender] as f64)
            }
            StructuralStatistic::InDegreeReceiver => {
                Ok(degree_norm()? * self.in_degree[receiver] as f64)
            }
            StructuralStatistic::OutDegreeSender => {
                Ok(degree_norm()? * self.out_degree[sender] as f64)
            }
            StructuralStatistic::OutDegreeReceiver => {
                Ok(degree_norm()? * self.out_degree[receiver] as f64)
            }
            StructuralStatistic::Transitivity => {
                let norm = triad_norm()?;
                let count = (0..self.n_actors)
                    .filter(|&h| self.linked(sender, h) && self.linked(h, receiver))
                    .count();
                Ok(norm * count as f64)
            }
            StructuralStatistic::SharedSupplier => {
                let norm = triad_norm()?;
                let count = (0..self.n_actors)
                    .filter(|&h| self.linked(h, sender) && self.linked(h, receiver))
                    .count();
                Ok(norm * count as f64)
            }
            StructuralStatistic::Reciprocity => {
                Ok(if self.linked(receiver, sender) { 1.0 } else { 0.0 })
            }
        }
    }
}

fn resolve_layout(panel: &EventPanel, spec: &ModelSpec) -> Result<DesignLayout, DesignError> {
    spec.validate()?;
    let lag = spec.lag();
    let min_first = lag + 1;
    let first = spec.first_modeled_period.unwrap_or(min_first);
    if first < min_first {
        return Err(DesignError::FirstModeledTooEarly {
            given: first,
            min: min_first,
        });
    }
    if first > panel.periods() {
        return Err(DesignError::NotEnoughPeriods {
            periods: panel.periods(),
            first,
        });
    }
    let modeled_periods: Vec<Period> = (first..=panel.periods()).collect();
    let domain = (first as f64, panel.periods() as f64);

    let mut groups = Vec::new();
    let mut next = 0usize;
    let regimes = spec.regimes();
    let pooled = !spec.separability.enabled;
    let mut onset_span = 0..0;
    let mut repetition_span = 0..0;
    for regime in &regimes {
        let block_start = next;
        for term in &spec.terms {
            if !term.regime.covers(*regime) {
                continue;
            }
            let label = if pooled {
                term.name.clone()
            } else {
                format!("{}:{}", regime.name(), term.name)
            };
            let (width, spline, penalty) = if term.time_varying {
                let settings = spec.spline_for(term);
                let spline = SplineBasisSpec::from_settings(domain, &settings)?;
                let penalty = ColumnPenalty::Spline(spline.penalty_matrix()?);
                (spline.basis_dim(), Some(spline), penalty)
            } else {
                (1, None, ColumnPenalty::Unpenalized)
            };
            groups.push(ColumnGroup {
                label,
                term: Some(term.name.clone()),
                source: Some(term.source.clone()),
                regime: Some(*regime),
                columns: next..next + width,
                penalty,
                time_varying: term.time_varying,
                spline,
                is_intercept: matches!(term.source, TermSource::Intercept),
            });
            next += width;
        }
        match regime {
            Regime::Onset => onset_span = block_start..next,
            Regime::Repetition => repetition_span = block_start..next,
            Regime::Pooled => {}
        }
    }

    Ok(DesignLayout {
        model: spec.clone(),
        groups,
        fixed_columns: next,
        onset_span,
        repetition_span,
        pooled,
        sender_block: None,
        receiver_block: None,
        actor_ids: panel
            .registry()
            .actors()
            .iter()
            .map(|a| a.id.clone())
            .collect(),
        modeled_periods,
        first_label: panel.first_label(),
    })
}

/// Regime of the dyad `(i, j)` at period `t` under lag window `lag`.
fn regime_of(panel: &EventPanel, lag: usize, t: Period, i: usize, j: usize, pooled: bool) -> Regime {
    if pooled {
        return Regime::Pooled;
    }
    let repeated = (1..=lag.min(t - 1)).any(|ell| panel.count(t - ell, i, j) > 0);
    if repeated {
        Regime::Repetition
    } else {
        Regime::Onset
    }
}

/// Builds the rows of one modeled period against an arbitrary panel (used both
/// by the design builder and by full-trajectory simulation, where `panel`
/// holds simulated history). Random-effect indices are set when the layout has
/// the corresponding blocks.
pub(crate) fn rows_for_period(
    layout: &DesignLayout,
    panel: &EventPanel,
    covariates: &CovariateTable,
    t: Period,
) -> Result<Vec<DesignRow>, DesignError> {
    let spec = &layout.model;
    let lag = spec.lag();
    let ctx = PeriodContext::new(panel, t)?;
    let risk = panel.risk_set(t)?;

    // Period-constant pieces: basis rows of time-varying groups.
    let mut bases: Vec<Option<Vec<f64>>> = Vec::with_capacity(layout.groups.len());
    for group in &layout.groups {
        bases.push(match &group.spline {
            Some(spline) => Some(spline.basis_row(t as f64)?),
            None => None,
        });
    }

    let mut rows = Vec::with_capacity(risk.len() * risk.len().saturating_sub(1));
    for &i in &risk {
        for &j in &risk {
            if i == j {
                continue;
            }
            let regime = regime_of(panel, lag, t, i, j, layout.pooled);
            let mut values = vec![0.0; layout.fixed_columns];
            for (g, group) in layout.groups.iter().enumerate() {
                let Some(group_regime) = group.regime else {
                    continue;
                };
                if !layout.pooled && group_regime != regime {
                    continue;
                }
                let source = group.source.as_ref().expect("term group has a source");
                let raw = match source {
                    TermSource::Intercept => 1.0,
                    TermSource::Structural(stat) => ctx.structural(*stat, i, j)?,
                    TermSource::Exogenous { .. } => {
                        statistics::resolve_term(panel, covariates, source, t, i, j)?
                    }
                };
                match &bases[g] {
                    Some(basis) => {
                        for (k, b) in basis.iter().enumerate() {
                            values[group.columns.start + k] = raw * b;
                        }
                    }
                    None => values[group.columns.start] = raw,
                }
            }
            rows.push(DesignRow {
                period: t,
                sender: i,
                receiver: j,
                response: panel.count(t, i, j),
                regime,
                weight: 1.0,
                values,
                sender_index: layout.sender_block.as_ref().map(|_| i),
                receiver_index: layout.receiver_block.as_ref().map(|_| j),
            });
        }
    }
    Ok(rows)
}

/// Appends sender/receiver random-effect blocks: one ridge-penalized column
/// per registry actor and block, with one-hot incidence per row.
pub fn random_effect_blocks(mut design: DesignMatrix, sender: bool, receiver: bool) -> DesignMatrix {
    let n = design.layout.actor_ids.len();
    let mut next = design.layout.total_columns();
    if sender {
        design.layout.sender_block = Some(next..next + n);
        design.layout.groups.push(ColumnGroup {
            label: "sender_effects".into(),
            term: None,
            source: None,
            regime: None,
            columns: next..next + n,
            penalty: ColumnPenalty::Ridge,
            time_varying: false,
            spline: None,
            is_intercept: false,
        });
        next += n;
        for row in &mut design.rows {
            row.sender_index = Some(row.sender);
        }
    }
    if receiver {
        design.layout.receiver_block = Some(next..next + n);
        design.layout.groups.push(ColumnGroup {
            label: "receiver_effects".into(),
            term: None,
            source: None,
            regime: None,
            columns: next..next + n,
            penalty: ColumnPenalty::Ridge,
            time_varying: false,
            spline: None,
            is_intercept: false,
        });
        for row in &mut design.rows {
            row.receiver_index = Some(row.receiver);
        }
    }
    design
}

/// Applies an observation-weight scheme. For `TivLog` the per-row aggregated
/// TIV (zero for rows without events) enters as `log(TIV + 1) + 1`, then the
/// weights are standardized so their sum over all rows equals one.
pub fn attach_weights(
    mut design: DesignMatrix,
    records: &[EventRecord],
    scheme: WeightScheme,
) -> Result<DesignMatrix, DesignError> {
    match scheme {
        WeightScheme::Unit => {
            for row in &mut design.rows {
                row.weight = 1.0;
            }
            Ok(design)
        }
        WeightScheme::TivLog => {
            let index: BTreeMap<&str, usize> = design
                .layout
                .actor_ids
                .iter()
                .enumerate()
                .map(|(ix, id)| (id.as_str(), ix))
                .collect();
            let mut tiv: BTreeMap<(Period, usize, usize), f64> = BTreeMap::new();
            for rec in records {
                let value = rec.value.ok_or_else(|| DesignError::TivMissingValue {
                    sender: rec.sender.clone(),
                    receiver: rec.receiver.clone(),
                    period: rec.period,
                })?;
                if value < 0.0 {
                    return Err(DesignError::NegativeTiv {
                        sender: rec.sender.clone(),
                        receiver: rec.receiver.clone(),
                        period: rec.period,
                        value,
                    });
                }
                let i = *index
                    .get(rec.sender.as_str())
                    .ok_or_else(|| DesignError::UnknownActor(rec.sender.clone()))?;
                let j = *index
                    .get(rec.receiver.as_str())
                    .ok_or_else(|| DesignError::UnknownActor(rec.receiver.clone()))?;
                *tiv.entry((rec.period, i, j)).or_insert(0.0) += value;
            }
            if design.rows.is_empty() {
                return Err(DesignError::Empty);
            }
            let mut total = 0.0;
            for row in &mut design.rows {
                let v = tiv
                    .get(&(row.period, row.sender, row.receiver))
                    .copied()
                    .unwrap_or(0.0);
                row.weight = (v + 1.0).ln() + 1.0;
                total += row.weight;
            }
            for row in &mut design.rows {
                row.weight /= total;
            }
            Ok(design)
        }
    }
}

/// Builds the full counting-process design matrix for `spec`.
///
/// `records` supplies per-event valuations and is only required for the
/// `tiv_log` weight scheme.
pub fn build_design(
    panel: &EventPanel,
    covariates: &CovariateTable,
    spec: &ModelSpec,
    records: Option<&[EventRecord]>,
) -> Result<DesignMatrix, DesignError> {
    let layout = resolve_layout(panel, spec)?;
    let mut rows = Vec::new();
    for &t in &layout.modeled_periods.clone() {
        rows.extend(rows_for_period(&layout, panel, covariates, t)?);
    }
    let mut design = DesignMatrix { rows, layout };
    if spec.random_effects.any() {
        design = random_effect_blocks(design, spec.random_effects.sender, spec.random_effects.receiver);
    }
    match spec.weights {
        WeightScheme::Unit => Ok(design),
        WeightScheme::TivLog => {
            let records = records.ok_or(DesignError::WeightsNeedRecords)?;
            attach_weights(design, records, WeightScheme::TivLog)
        }
    }
}

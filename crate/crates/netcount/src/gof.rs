//! Simulation-based goodness of fit: replicate panels drawn from a fitted
//! model and the count-network statistics used to compare them with the
//! observed panel.
//!
//! By default replicates are one-step-ahead: every at-risk dyad-period draw
//! uses the intensity predicted from the *observed* history. A full-trajectory
//! mode (statistics recomputed from the simulated history as it unfolds) is
//! available behind [`GofOptions::full_trajectory`].
//!
//! Replicates use independent random streams derived deterministically from
//! `(seed, replicate)`, so reports are bit-identical across runs and across
//! thread counts.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::covariates::CovariateTable;
use crate::design::{build_design, rows_for_period, DesignError, DesignMatrix};
use crate::estimation::{predict_intensity, FitError, FitResult};
use crate::model::WeightScheme;
use crate::network::{quantile_type7, EventPanel, NetworkError, Period};

#[derive(Debug, Error)]
pub enum GofError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("fitted intensity {value} at design row {row} is not a finite sampling rate")]
    BadIntensity { row: usize, value: f64 },
    #[error("at least one simulation replicate is required")]
    NoReplicates,
    #[error("risk set at period {0} is empty")]
    EmptyRiskSet(Period),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GofOptions {
    /// Recompute statistics from the simulated history instead of conditioning
    /// every period on the observed one.
    pub full_trajectory: bool,
}

/// Independent, deterministic random stream for one replicate.
fn replicate_rng(seed: u64, replicate: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    key[16..24].copy_from_slice(b"gofpanel");
    ChaCha12Rng::from_seed(key)
}

fn sample_count(rng: &mut ChaCha12Rng, lambda: f64) -> Result<u64, GofError> {
    if lambda == 0.0 {
        return Ok(0);
    }
    if !lambda.is_finite() || lambda < 0.0 || lambda > 1e12 {
        return Err(GofError::BadIntensity {
            row: usize::MAX,
            value: lambda,
        });
    }
    let dist = Poisson::new(lambda).map_err(|_| GofError::BadIntensity {
        row: usize::MAX,
        value: lambda,
    })?;
    Ok(dist.sample(rng) as u64)
}

/// Empty panel sharing the observed registry, with the observed pre-sample
/// history (periods before `first_modeled`) copied in.
fn seeded_panel(panel: &EventPanel, first_modeled: Period) -> Result<EventPanel, GofError> {
    let mut sim = EventPanel::new(
        panel.registry().clone(),
        panel.periods(),
        panel.first_label(),
    );
    for t in 1..first_modeled.min(panel.periods() + 1) {
        for (i, j, c) in panel.nonzero(t) {
            sim.add_count(t, i, j, c)?;
        }
    }
    Ok(sim)
}

fn design_for_simulation(
    fit: &FitResult,
    panel: &EventPanel,
    covariates: &CovariateTable,
) -> Result<DesignMatrix, GofError> {
    // Observation weights play no role in prediction or simulation, so the
    // rebuild never needs TIV records.
    let mut spec = fit.layout.model.clone();
    spec.weights = WeightScheme::Unit;
    Ok(build_design(panel, covariates, &spec, None)?)
}

fn fitted_intensities(fit: &FitResult, design: &DesignMatrix) -> Result<Vec<f64>, GofError> {
    design
        .rows
        .iter()
        .enumerate()
        .map(|(ix, row)| {
            let lambda = predict_intensity(fit, row)?;
            if !lambda.is_finite() {
                return Err(GofError::BadIntensity {
                    row: ix,
                    value: lambda,
                });
            }
            Ok(lambda)
        })
        .collect()
}

fn draw_conditional(
    design: &DesignMatrix,
    lambdas: &[f64],
    panel: &EventPanel,
    rng: &mut ChaCha12Rng,
) -> Result<EventPanel, GofError> {
    let first = *design
        .layout
        .modeled_periods
        .first()
        .expect("design has modeled periods");
    let mut sim = seeded_panel(panel, first)?;
    for (row, &lambda) in design.rows.iter().zip(lambdas) {
        let y = sample_count(rng, lambda)?;
        if y > 0 {
            sim.add_count(row.period, row.sender, row.receiver, y)?;
        }
    }
    Ok(sim)
}

fn draw_trajectory(
    fit: &FitResult,
    panel: &EventPanel,
    covariates: &CovariateTable,
    rng: &mut ChaCha12Rng,
) -> Result<EventPanel, GofError> {
    let layout = &fit.layout;
    let first = *layout
        .modeled_periods
        .first()
        .expect("fit layout has modeled periods");
    let mut sim = seeded_panel(panel, first)?;
    for &t in &layout.modeled_periods {
        let rows = rows_for_period(layout, &sim, covariates, t)?;
        for row in &rows {
            let lambda = predict_intensity(fit, row)?;
            let y = sample_count(rng, lambda)?;
            if y > 0 {
                sim.add_count(t, row.sender, row.receiver, y)?;
            }
        }
    }
    Ok(sim)
}

/// Draws one replicate panel from the fitted intensities, conditioning on the
/// observed history (statistics are computed from observed counts, not
/// simulated ones). Deterministic for a fixed `seed`.
pub fn simulate_panel(
    fit: &FitResult,
    panel: &EventPanel,
    covariates: &CovariateTable,
    seed: u64,
) -> Result<EventPanel, GofError> {
    simulate_panel_with(fit, panel, covariates, seed, &GofOptions::default())
}

/// [`simulate_panel`] with explicit options.
pub fn simulate_panel_with(
    fit: &FitResult,
    panel: &EventPanel,
    covariates: &CovariateTable,
    seed: u64,
    options: &GofOptions,
) -> Result<EventPanel, GofError> {
    let mut rng = replicate_rng(seed, 0);
    if options.full_trajectory {
        draw_trajectory(fit, panel, covariates, &mut rng)
    } else {
        let design = design_for_simulation(fit, panel, covariates)?;
        let lambdas = fitted_intensities(fit, &design)?;
        draw_conditional(&design, &lambdas, panel, &mut rng)
    }
}

/// Frequencies of the count values `y_{ij,t} = k` pooled over all at-risk
/// dyad-periods of the whole panel (zeros included).
pub fn rootogram_frequencies(panel: &EventPanel) -> BTreeMap<u64, u64> {
    let periods: Vec<Period> = (1..=panel.periods()).collect();
    tally_rootogram(panel, &periods)
}

fn tally_rootogram(panel: &EventPanel, periods: &[Period]) -> BTreeMap<u64, u64> {
    let mut freq = BTreeMap::new();
    for &t in periods {
        let risk = panel.risk_set(t).expect("period in range");
        for &i in &risk {
            for &j in &risk {
                if i != j {
                    *freq.entry(panel.count(t, i, j)).or_insert(0) += 1;
                }
            }
        }
    }
    freq
}

/// Weighted clustering coefficient of one period's count matrix: the ratio of
/// closed to total triplet values, a triplet being an ordered pair of
/// positive-count edges `i -> k`, `k -> j` with `i`, `j`, `k` distinct, its
/// value the arithmetic mean of the two counts, closed iff `y_ij > 0`.
/// Undefined (`None`) when no triplet exists.
pub fn weighted_clustering(panel: &EventPanel, t: Period) -> Result<Option<f64>, GofError> {
    let risk = panel.risk_set(t)?;
    if risk.len() < 3 {
        return Ok(None);
    }
    let n = panel.n_actors();
    let mut incoming: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
    let mut outgoing: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
    for (i, j, c) in panel.nonzero(t) {
        outgoing[i].push((j, c));
        incoming[j].push((i, c));
    }
    let mut total = 0.0;
    let mut closed = 0.0;
    for center in 0..n {
        for &(i, y_in) in &incoming[center] {
            for &(j, y_out) in &outgoing[center] {
                if i == j {
                    continue;
                }
                let value = (y_in as f64 + y_out as f64) / 2.0;
                total += value;
                if panel.count(t, i, j) > 0 {
                    closed += value;
                }
            }
        }
    }
    if total == 0.0 {
        Ok(None)
    } else {
        Ok(Some(closed / total))
    }
}

/// Mean over the period's risk set of each actor's received count total.
pub fn average_in_count(panel: &EventPanel, t: Period) -> Result<f64, GofError> {
    let risk = panel.risk_set(t)?;
    if risk.is_empty() {
        return Err(GofError::EmptyRiskSet(t));
    }
    let mut total = 0u64;
    for (_, _, c) in panel.nonzero(t) {
        total += c;
    }
    Ok(total as f64 / risk.len() as f64)
}

/// Per-actor-period in- and out-count multisets concatenated over all periods
/// and at-risk actors, in `(period, actor)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountDistributions {
    pub in_counts: Vec<u64>,
    pub out_counts: Vec<u64>,
}

pub fn count_distributions(panel: &EventPanel) -> CountDistributions {
    let periods: Vec<Period> = (1..=panel.periods()).collect();
    count_distributions_over(panel, &periods)
}

fn count_distributions_over(panel: &EventPanel, periods: &[Period]) -> CountDistributions {
    let mut in_counts = Vec::new();
    let mut out_counts = Vec::new();
    let n = panel.n_actors();
    for &t in periods {
        let risk = panel.risk_set(t).expect("period in range");
        let mut ins = vec![0u64; n];
        let mut outs = vec![0u64; n];
        for (i, j, c) in panel.nonzero(t) {
            outs[i] += c;
            ins[j] += c;
        }
        for &a in &risk {
            in_counts.push(ins[a]);
            out_counts.push(outs[a]);
        }
    }
    CountDistributions {
        in_counts,
        out_counts,
    }
}

fn frequency_map(values: &[u64]) -> BTreeMap<u64, u64> {
    let mut freq = BTreeMap::new();
    for &v in values {
        *freq.entry(v).or_insert(0) += 1;
    }
    freq
}

/// Five-number summary plus mean of one cell's replicate values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

impl SummaryStats {
    fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));
        Some(Self {
            min: sorted[0],
            q25: quantile_type7(&sorted, 0.25),
            median: quantile_type7(&sorted, 0.5),
            q75: quantile_type7(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
            mean: values.iter().sum::<f64>() / values.len() as f64,
        })
    }
}

/// One count-valued cell (rootogram or in/out-count distribution).
#[derive(Debug, Clone)]
pub struct CountCell {
    pub value: u64,
    pub observed: f64,
    pub replicates: Vec<f64>,
    pub summary: SummaryStats,
}

/// One per-period cell with an always-defined statistic.
#[derive(Debug, Clone)]
pub struct YearCell {
    pub period: Period,
    pub observed: f64,
    pub replicates: Vec<f64>,
    pub summary: SummaryStats,
}

/// One per-period cell of a statistic that can be undefined (clustering).
#[derive(Debug, Clone)]
pub struct OptionalYearCell {
    pub period: Period,
    pub observed: Option<f64>,
    pub replicates: Vec<Option<f64>>,
    /// Summary over the defined replicate values; `None` if all are missing.
    pub summary: Option<SummaryStats>,
}

/// Observed statistics, per-replicate values, and envelope summaries.
///
/// All statistics are computed over the modeled periods only: replicate panels
/// copy the observed pre-sample history, which would otherwise be compared
/// against itself.
#[derive(Debug, Clone)]
pub struct SimulationSummary {
    pub n_sims: usize,
    pub seed: u64,
    pub periods: Vec<Period>,
    pub rootogram: Vec<CountCell>,
    pub clustering: Vec<OptionalYearCell>,
    pub average_in_count: Vec<YearCell>,
    pub in_count_distribution: Vec<CountCell>,
    pub out_count_distribution: Vec<CountCell>,
}

struct PanelStats {
    rootogram: BTreeMap<u64, u64>,
    clustering: Vec<Option<f64>>,
    average_in: Vec<f64>,
    in_dist: BTreeMap<u64, u64>,
    out_dist: BTreeMap<u64, u64>,
}

fn panel_stats(panel: &EventPanel, periods: &[Period]) -> Result<PanelStats, GofError> {
    let mut clustering = Vec::with_capacity(periods.len());
    let mut average_in = Vec::with_capacity(periods.len());
    for &t in periods {
        clustering.push(weighted_clustering(panel, t)?);
        average_in.push(average_in_count(panel, t)?);
    }
    let dists = count_distributions_over(panel, periods);
    Ok(PanelStats {
        rootogram: tally_rootogram(panel, periods),
        clustering,
        average_in,
        in_dist: frequency_map(&dists.in_counts),
        out_dist: frequency_map(&dists.out_counts),
    })
}

fn assemble_count_cells(
    observed: &BTreeMap<u64, u64>,
    replicates: &[BTreeMap<u64, u64>],
) -> Vec<CountCell> {
    let mut keys: std::collections::BTreeSet<u64> = observed.keys().copied().collect();
    for rep in replicates {
        keys.extend(rep.keys().copied());
    }
    keys.into_iter()
        .map(|value| {
            let values: Vec<f64> = replicates
                .iter()
                .map(|rep| rep.get(&value).copied().unwrap_or(0) as f64)
                .collect();
            CountCell {
                value,
                observed: observed.get(&value).copied().unwrap_or(0) as f64,
                summary: SummaryStats::from_values(&values).expect("at least one replicate"),
                replicates: values,
            }
        })
        .collect()
}

/// Simulates `n_sims` replicate panels from the fitted model and summarizes
/// the goodness-of-fit statistics against the observed panel.
pub fn gof_report(
    fit: &FitResult,
    panel: &EventPanel,
    covariates: &CovariateTable,
    n_sims: usize,
    seed: u64,
) -> Result<SimulationSummary, GofError> {
    gof_report_with(fit, panel, covariates, n_sims, seed, &GofOptions::default())
}

/// [`gof_report`] with explicit options.
pub fn gof_report_with(
    fit: &FitResult,
    panel: &EventPanel,
    covariates: &CovariateTable,
    n_sims: usize,
    seed: u64,
    options: &GofOptions,
) -> Result<SimulationSummary, GofError> {
    if n_sims == 0 {
        return Err(GofError::NoReplicates);
    }
    let periods: Vec<Period> = fit.layout.modeled_periods.clone();
    let observed = panel_stats(panel, &periods)?;

    // The conditional design and its intensities are shared by all replicates.
    let conditional = if options.full_trajectory {
        None
    } else {
        let design = design_for_simulation(fit, panel, covariates)?;
        let lambdas = fitted_intensities(fit, &design)?;
        Some((design, lambdas))
    };

    let replicate_stats: Result<Vec<PanelStats>, GofError> = (0..n_sims as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = replicate_rng(seed, s);
            let sim = match &conditional {
                Some((design, lambdas)) => draw_conditional(design, lambdas, panel, &mut rng)?,
                None => draw_trajectory(fit, panel, covariates, &mut rng)?,
            };
            panel_stats(&sim, &periods)
        })
        .collect();
    let replicate_stats = replicate_stats?;

    let rootograms: Vec<&BTreeMap<u64, u64>> =
        replicate_stats.iter().map(|s| &s.rootogram).collect();
    let rootogram = assemble_count_cells(
        &observed.rootogram,
        &rootograms.iter().map(|m| (*m).clone()).collect::<Vec<_>>(),
    );
    let in_cells = assemble_count_cells(
        &observed.in_dist,
        &replicate_stats.iter().map(|s| s.in_dist.clone()).collect::<Vec<_>>(),
    );
    let out_cells = assemble_count_cells(
        &observed.out_dist,
        &replicate_stats.iter().map(|s| s.out_dist.clone()).collect::<Vec<_>>(),
    );

    let clustering = periods
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let values: Vec<Option<f64>> =
                replicate_stats.iter().map(|s| s.clustering[k]).collect();
            let defined: Vec<f64> = values.iter().flatten().copied().collect();
            OptionalYearCell {
                period: t,
                observed: observed.clustering[k],
                summary: SummaryStats::from_values(&defined),
                replicates: values,
            }
        })
        .collect();
    let average_in_count = periods
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let values: Vec<f64> = replicate_stats.iter().map(|s| s.average_in[k]).collect();
            YearCell {
                period: t,
                observed: observed.average_in[k],
                summary: SummaryStats::from_values(&values).expect("replicates exist"),
                replicates: values,
            }
        })
        .collect();

    Ok(SimulationSummary {
        n_sims,
        seed,
        periods,
        rootogram,
        clustering,
        average_in_count,
        in_count_distribution: in_cells,
        out_count_distribution: out_cells,
    })
}

//! Penalized Poisson likelihood maximization over spline coefficients and
//! random effects.
//!
//! The objective is `sum_r w_r (y_r eta_r - exp(eta_r)) - 1/2 sum_g gamma_g
//! b_g' D_g b_g` with a log link. The inner loop takes damped Newton steps
//! (penalized IRLS); when selection is automatic, the outer loop updates each
//! tuning parameter by a single generalized Fellner–Schall step per iteration
//! and alternates until the penalized log-likelihood and the coefficients
//! stabilize. The posterior covariance `(X'WX + S_gamma)^{-1}` at convergence
//! feeds pointwise confidence bands and effective degrees of freedom.
//!
//! Cross-products are accumulated over fixed-size row blocks that may be
//! evaluated in parallel; the block partials are reduced in a fixed order, so
//! results are bit-identical across thread counts.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::design::{ColumnPenalty, DesignLayout, DesignMatrix, DesignRow};
use crate::model::Regime;
use crate::splines::SplineError;

const ROW_BLOCK: usize = 8192;
const JITTERS: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];
const GAMMA_MIN: f64 = 1e-8;
const GAMMA_MAX: f64 = 1e12;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("design has no rows")]
    EmptyDesign,
    #[error("coefficient vector has length {found}, design has {expected} columns")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite linear predictor at design row {row} (period {period}, dyad {sender} -> {receiver})")]
    NonFinitePredictor {
        row: usize,
        period: usize,
        sender: usize,
        receiver: usize,
    },
    #[error("penalized system is rank deficient; confounded columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("penalized log-likelihood decreased beyond the backtracking budget at outer {outer}, inner {inner}")]
    Diverged {
        outer: usize,
        inner: usize,
        trace: Vec<TraceRecord>,
    },
    #[error("iteration cap {cap} exceeded (last penalized log-likelihood {last_penalized_loglik})")]
    IterationCap {
        cap: usize,
        last_penalized_loglik: f64,
        coefficients: Vec<f64>,
        trace: Vec<TraceRecord>,
    },
    #[error("no column group labelled `{0}`")]
    UnknownTerm(String),
    #[error("term `{0}` has no posterior variance (out of range)")]
    CovarianceUnavailable(String),
    #[error("model was fitted without random effects")]
    NoRandomEffects,
    #[error("random-effect centering requires an intercept term in every regime block")]
    CenteringNeedsIntercepts,
    #[error("random-effect index {index} out of range for block of {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// How tuning parameters are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Keep the supplied gammas.
    Fixed,
    /// Fellner–Schall updates interleaved with the inner Newton solves.
    #[default]
    Automatic,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative penalized log-likelihood change ending the outer alternation.
    pub outer: f64,
    /// Max-norm coefficient change ending the outer alternation.
    pub coefficient: f64,
    /// Max-norm of the penalized gradient accepted as an inner optimum.
    pub gradient: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub max_backtrack: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            outer: 1e-7,
            coefficient: 1e-6,
            gradient: 1e-6,
            max_outer: 100,
            max_inner: 100,
            max_backtrack: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize, Default)]
#[serde(default)]
pub struct EstimationSettings {
    pub selection: Selection,
    pub tolerances: Tolerances,
    /// Initial tuning parameter for every penalized group.
    pub gamma_init: f64,
    /// Re-express random effects as deviations from their block mean after the
    /// fit, shifting the means into the regime intercepts.
    pub center_random_effects: bool,
}

impl EstimationSettings {
    pub fn fixed() -> Self {
        Self {
            selection: Selection::Fixed,
            ..Self::default()
        }
    }
}

// serde(default) on EstimationSettings needs a nonzero gamma default.
impl EstimationSettings {
    fn gamma_or_default(&self) -> f64 {
        if self.gamma_init > 0.0 {
            self.gamma_init
        } else {
            1.0
        }
    }
}

/// One penalized column group with its current tuning parameter.
#[derive(Debug, Clone)]
pub struct PenaltyGroup {
    pub label: String,
    pub columns: Range<usize>,
    pub gamma: f64,
    kind: GroupKind,
}

#[derive(Debug, Clone)]
enum GroupKind {
    Spline { matrix: DMatrix<f64>, rank: usize },
    Ridge,
}

impl PenaltyGroup {
    fn rank(&self) -> usize {
        match &self.kind {
            GroupKind::Spline { rank, .. } => *rank,
            GroupKind::Ridge => self.columns.len(),
        }
    }

    /// `b_g' D_g b_g` (gamma not applied).
    fn quadratic(&self, beta: &DVector<f64>) -> f64 {
        match &self.kind {
            GroupKind::Spline { matrix, .. } => {
                let g0 = self.columns.start;
                let q = self.columns.len();
                let mut total = 0.0;
                for r in 0..q {
                    let mut acc = 0.0;
                    for c in 0..q {
                        acc += matrix[(r, c)] * beta[g0 + c];
                    }
                    total += beta[g0 + r] * acc;
                }
                total
            }
            GroupKind::Ridge => self.columns.clone().map(|c| beta[c] * beta[c]).sum(),
        }
    }

    /// `grad -= gamma * D_g b_g` on the group's columns.
    fn subtract_gradient(&self, beta: &DVector<f64>, grad: &mut DVector<f64>) {
        match &self.kind {
            GroupKind::Spline { matrix, .. } => {
                let g0 = self.columns.start;
                let q = self.columns.len();
                for r in 0..q {
                    let mut acc = 0.0;
                    for c in 0..q {
                        acc += matrix[(r, c)] * beta[g0 + c];
                    }
                    grad[g0 + r] -= self.gamma * acc;
                }
            }
            GroupKind::Ridge => {
                for c in self.columns.clone() {
                    grad[c] -= self.gamma * beta[c];
                }
            }
        }
    }

    /// `h += gamma * D_g` on the group's block.
    fn add_hessian(&self, h: &mut DMatrix<f64>) {
        match &self.kind {
            GroupKind::Spline { matrix, .. } => {
                let g0 = self.columns.start;
                let q = self.columns.len();
                for r in 0..q {
                    for c in 0..q {
                        h[(g0 + r, g0 + c)] += self.gamma * matrix[(r, c)];
                    }
                }
            }
            GroupKind::Ridge => {
                for c in self.columns.clone() {
                    h[(c, c)] += self.gamma;
                }
            }
        }
    }

    /// `tr(V S_g)` with `S_g` the unscaled penalty embedded at the block.
    fn trace_v_penalty(&self, v: &DMatrix<f64>) -> f64 {
        match &self.kind {
            GroupKind::Spline { matrix, .. } => {
                let g0 = self.columns.start;
                let q = self.columns.len();
                let mut total = 0.0;
                for r in 0..q {
                    for c in 0..q {
                        total += v[(g0 + r, g0 + c)] * matrix[(r, c)];
                    }
                }
                total
            }
            GroupKind::Ridge => self.columns.clone().map(|c| v[(c, c)]).sum(),
        }
    }
}

/// The full penalty structure plus solver settings for one fit.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub groups: Vec<PenaltyGroup>,
    pub selection: Selection,
    pub tolerances: Tolerances,
    pub center_random_effects: bool,
}

impl PenaltyConfig {
    /// Derives the penalty groups from the design's column layout: spline
    /// penalties for time-varying terms, ridge penalties for random-effect
    /// blocks, nothing for time-constant terms.
    pub fn from_design(design: &DesignMatrix, settings: &EstimationSettings) -> Self {
        let gamma = settings.gamma_or_default();
        let groups = design
            .layout
            .groups
            .iter()
            .filter_map(|g| match &g.penalty {
                ColumnPenalty::Spline(penalty) => Some(PenaltyGroup {
                    label: g.label.clone(),
                    columns: g.columns.clone(),
                    gamma,
                    kind: GroupKind::Spline {
                        matrix: penalty.matrix().clone(),
                        rank: penalty.rank(),
                    },
                }),
                ColumnPenalty::Ridge => Some(PenaltyGroup {
                    label: g.label.clone(),
                    columns: g.columns.clone(),
                    gamma,
                    kind: GroupKind::Ridge,
                }),
                ColumnPenalty::Unpenalized => None,
            })
            .collect();
        Self {
            groups,
            selection: settings.selection,
            tolerances: settings.tolerances,
            center_random_effects: settings.center_random_effects,
        }
    }

    /// Unpenalized configuration (no groups).
    pub fn unpenalized(settings: &EstimationSettings) -> Self {
        Self {
            groups: Vec::new(),
            selection: Selection::Fixed,
            tolerances: settings.tolerances,
            center_random_effects: false,
        }
    }

    pub fn set_gamma(&mut self, label: &str, gamma: f64) -> Result<(), FitError> {
        match self.groups.iter_mut().find(|g| g.label == label) {
            Some(group) => {
                group.gamma = gamma;
                Ok(())
            }
            None => Err(FitError::UnknownTerm(label.into())),
        }
    }

    fn penalty_value(&self, beta: &DVector<f64>) -> f64 {
        0.5 * self
            .groups
            .iter()
            .map(|g| g.gamma * g.quadratic(beta))
            .sum::<f64>()
    }
}

/// Linear predictor of one row under `beta`.
fn row_eta(layout: &DesignLayout, row: &DesignRow, beta: &DVector<f64>) -> f64 {
    let mut eta = 0.0;
    for c in layout.active_span(row.regime) {
        eta += row.values[c] * beta[c];
    }
    if let (Some(block), Some(ix)) = (&layout.sender_block, row.sender_index) {
        eta += beta[block.start + ix];
    }
    if let (Some(block), Some(ix)) = (&layout.receiver_block, row.receiver_index) {
        eta += beta[block.start + ix];
    }
    eta
}

/// Weighted Poisson log-likelihood (without the y! constant), blockwise.
/// Returns -inf when any predictor overflows; never errors.
fn data_loglik(design: &DesignMatrix, beta: &DVector<f64>) -> f64 {
    let layout = &design.layout;
    design
        .rows
        .par_chunks(ROW_BLOCK)
        .map(|chunk| {
            let mut total = 0.0;
            for row in chunk {
                let eta = row_eta(layout, row, beta);
                let lambda = eta.exp();
                total += row.weight * (row.response as f64 * eta - lambda);
            }
            total
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

struct Partials {
    loglik: f64,
    grad: DVector<f64>,
    xtwx: DMatrix<f64>,
}

/// One full pass: log-likelihood, data gradient, and `X'WX` (lower triangle
/// filled, then mirrored) at `beta`.
fn full_pass(design: &DesignMatrix, beta: &DVector<f64>) -> Partials {
    let layout = &design.layout;
    let p = layout.total_columns();
    let partials: Vec<Partials> = design
        .rows
        .par_chunks(ROW_BLOCK)
        .map(|chunk| {
            let mut loglik = 0.0;
            let mut grad = DVector::zeros(p);
            let mut xtwx = DMatrix::zeros(p, p);
            for row in chunk {
                let span = layout.active_span(row.regime);
                let eta = row_eta(layout, row, beta);
                let lambda = eta.exp();
                let w = row.weight;
                let y = row.response as f64;
                loglik += w * (y * eta - lambda);
                let resid = w * (y - lambda);
                let wl = w * lambda;
                for a in span.clone() {
                    let va = row.values[a];
                    if va == 0.0 {
                        continue;
                    }
                    grad[a] += resid * va;
                    let wlva = wl * va;
                    for b in span.start..=a {
                        xtwx[(a, b)] += wlva * row.values[b];
                    }
                }
                let s_col = layout
                    .sender_block
                    .as_ref()
                    .zip(row.sender_index)
                    .map(|(block, ix)| block.start + ix);
                let r_col = layout
                    .receiver_block
                    .as_ref()
                    .zip(row.receiver_index)
                    .map(|(block, ix)| block.start + ix);
                if let Some(s) = s_col {
                    grad[s] += resid;
                    for b in span.clone() {
                        xtwx[(s, b)] += wl * row.values[b];
                    }
                    xtwx[(s, s)] += wl;
                }
                if let Some(r) = r_col {
                    grad[r] += resid;
                    for b in span.clone() {
                        xtwx[(r, b)] += wl * row.values[b];
                    }
                    if let Some(s) = s_col {
                        xtwx[(r, s)] += wl;
                    }
                    xtwx[(r, r)] += wl;
                }
            }
            Partials { loglik, grad, xtwx }
        })
        .collect();

    let mut total = Partials {
        loglik: 0.0,
        grad: DVector::zeros(p),
        xtwx: DMatrix::zeros(p, p),
    };
    for part in partials {
        total.loglik += part.loglik;
        total.grad += part.grad;
        total.xtwx += part.xtwx;
    }
    // Mirror the lower triangle.
    for r in 0..p {
        for c in r + 1..p {
            total.xtwx[(r, c)] = total.xtwx[(c, r)];
        }
    }
    total
}

/// The penalized Poisson log-likelihood at `coefficients` (the y! constant is
/// omitted). Errors on a non-finite linear predictor, naming the row.
pub fn penalized_loglik(
    design: &DesignMatrix,
    coefficients: &[f64],
    penalties: &PenaltyConfig,
) -> Result<f64, FitError> {
    let p = design.total_columns();
    if coefficients.len() != p {
        return Err(FitError::LengthMismatch {
            expected: p,
            found: coefficients.len(),
        });
    }
    let beta = DVector::from_column_slice(coefficients);
    let layout = &design.layout;
    let mut loglik = 0.0;
    for (ix, row) in design.rows.iter().enumerate() {
        let eta = row_eta(layout, row, &beta);
        let lambda = eta.exp();
        if !eta.is_finite() || !lambda.is_finite() {
            return Err(FitError::NonFinitePredictor {
                row: ix,
                period: row.period,
                sender: row.sender,
                receiver: row.receiver,
            });
        }
        loglik += row.weight * (row.response as f64 * eta - lambda);
    }
    Ok(loglik - penalties.penalty_value(&beta))
}

/// Analytic gradient of [`penalized_loglik`].
pub fn penalized_gradient(
    design: &DesignMatrix,
    coefficients: &[f64],
    penalties: &PenaltyConfig,
) -> Result<Vec<f64>, FitError> {
    let p = design.total_columns();
    if coefficients.len() != p {
        return Err(FitError::LengthMismatch {
            expected: p,
            found: coefficients.len(),
        });
    }
    let beta = DVector::from_column_slice(coefficients);
    let layout = &design.layout;
    let mut grad = DVector::zeros(p);
    for (ix, row) in design.rows.iter().enumerate() {
        let eta = row_eta(layout, row, &beta);
        let lambda = eta.exp();
        if !eta.is_finite() || !lambda.is_finite() {
            return Err(FitError::NonFinitePredictor {
                row: ix,
                period: row.period,
                sender: row.sender,
                receiver: row.receiver,
            });
        }
        let resid = row.weight * (row.response as f64 - lambda);
        for c in layout.active_span(row.regime) {
            grad[c] += resid * row.values[c];
        }
        if let (Some(block), Some(rix)) = (&layout.sender_block, row.sender_index) {
            grad[block.start + rix] += resid;
        }
        if let (Some(block), Some(rix)) = (&layout.receiver_block, row.receiver_index) {
            grad[block.start + rix] += resid;
        }
    }
    for group in &penalties.groups {
        group.subtract_gradient(&beta, &mut grad);
    }
    Ok(grad.iter().copied().collect())
}

/// Names the columns loading on the near-null eigenspace of `h`.
fn rank_deficiency_report(h: &DMatrix<f64>, layout: &DesignLayout) -> FitError {
    let names = layout.column_names();
    let eig = h.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let mut confounded = std::collections::BTreeSet::new();
    for (k, &value) in eig.eigenvalues.iter().enumerate() {
        if value <= 1e-10 * max_eig.max(1.0) {
            let vector = eig.eigenvectors.column(k);
            let peak = vector.amax();
            for (c, &loading) in vector.iter().enumerate() {
                if loading.abs() >= 0.3 * peak {
                    confounded.insert(names[c].clone());
                }
            }
        }
    }
    let columns = if confounded.is_empty() {
        names
    } else {
        confounded.into_iter().collect()
    };
    FitError::RankDeficient { columns }
}

/// Solves `h * delta = grad`, retrying with escalating diagonal jitter and
/// iterative refinement against the *unjittered* matrix. Refinement converges
/// for merely ill-conditioned systems (including the huge-gamma smoothing
/// limit) but stalls on structurally singular ones, which are then reported
/// as rank deficient instead of being silently regularized away.
fn solve_newton_step(
    h: &DMatrix<f64>,
    grad: &DVector<f64>,
    layout: &DesignLayout,
) -> Result<DVector<f64>, FitError> {
    let scale = 1.0 + grad.amax();
    for jitter in JITTERS {
        let mut m = h.clone();
        if jitter > 0.0 {
            for d in 0..m.nrows() {
                m[(d, d)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            let mut delta = chol.solve(grad);
            for _ in 0..3 {
                let residual = grad - h * &delta;
                if residual.amax() <= 1e-6 * scale {
                    return Ok(delta);
                }
                delta += chol.solve(&residual);
            }
            let residual = (grad - h * &delta).amax();
            if residual.is_finite() && residual <= 1e-6 * scale {
                return Ok(delta);
            }
        }
    }
    Err(rank_deficiency_report(h, layout))
}

/// Factorizes `h` (+ escalating diagonal jitter) for covariance extraction.
fn factorize(
    h: &DMatrix<f64>,
    layout: &DesignLayout,
) -> Result<Cholesky<f64, nalgebra::Dyn>, FitError> {
    for jitter in JITTERS {
        let mut m = h.clone();
        if jitter > 0.0 {
            for d in 0..m.nrows() {
                m[(d, d)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(chol);
        }
    }
    Err(rank_deficiency_report(h, layout))
}

/// One inner-loop record of the convergence trace.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub outer: usize,
    pub inner: usize,
    pub penalized_loglik: f64,
    pub max_gradient: f64,
    pub step_halvings: usize,
    pub gammas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GammaEstimate {
    pub label: String,
    pub gamma: f64,
}

/// A fitted model: coefficients, tuning/variance parameters, posterior
/// covariance, effective degrees of freedom, and the convergence trace.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub layout: DesignLayout,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub gammas: Vec<GammaEstimate>,
    pub sender_variance: Option<f64>,
    pub receiver_variance: Option<f64>,
    pub edf_total: f64,
    pub edf_by_group: Vec<(String, f64)>,
    /// Unpenalized weighted log-likelihood (y! constant omitted).
    pub loglik: f64,
    pub penalized_loglik: f64,
    /// `sum_r w_r ln(y_r!)`, the constant completing the Poisson likelihood.
    pub weighted_log_factorial: f64,
    pub n_rows: usize,
    pub fitted: Vec<f64>,
    pub trace: Vec<TraceRecord>,
}

impl FitResult {
    /// Full log-likelihood including the y! constant.
    pub fn loglik_full(&self) -> f64 {
        self.loglik - self.weighted_log_factorial
    }

    pub fn edf_of(&self, label: &str) -> Option<f64> {
        self.edf_by_group
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, e)| *e)
    }
}

struct InnerOutcome {
    partials: Partials,
    hessian: DMatrix<f64>,
    penalized_loglik: f64,
}

#[allow(clippy::too_many_arguments)]
fn inner_solve(
    design: &DesignMatrix,
    beta: &mut DVector<f64>,
    penalties: &PenaltyConfig,
    outer: usize,
    trace: &mut Vec<TraceRecord>,
) -> Result<InnerOutcome, FitError> {
    let tol = &penalties.tolerances;
    let mut last_step: Option<(f64, f64)> = None; // (max coef change, rel lp change)
    for inner in 0..tol.max_inner {
        let mut partials = full_pass(design, beta);
        let lp = partials.loglik - penalties.penalty_value(beta);
        let mut hessian = partials.xtwx.clone();
        for group in &penalties.groups {
            group.subtract_gradient(beta, &mut partials.grad);
            group.add_hessian(&mut hessian);
        }
        let max_grad = partials.grad.amax();

        let converged = max_grad < tol.gradient
            || last_step.is_some_and(|(dc, dl)| dc < tol.coefficient && dl < 0.1 * tol.outer);
        trace.push(TraceRecord {
            outer,
            inner,
            penalized_loglik: lp,
            max_gradient: max_grad,
            step_halvings: 0,
            gammas: penalties.groups.iter().map(|g| g.gamma).collect(),
        });
        if converged {
            return Ok(InnerOutcome {
                partials,
                hessian,
                penalized_loglik: lp,
            });
        }

        let delta = solve_newton_step(&hessian, &partials.grad, &design.layout)?;
        let mut step = 1.0;
        let mut halvings = 0usize;
        let mut accepted = false;
        let mut candidate = beta.clone();
        let mut lp_new = lp;
        while halvings <= tol.max_backtrack {
            candidate = &*beta + &delta * step;
            lp_new = data_loglik(design, &candidate) - penalties.penalty_value(&candidate);
            if lp_new.is_finite() && lp_new >= lp {
                accepted = true;
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
        if !accepted {
            // A step too small to improve a converged objective is success,
            // not divergence.
            if delta.amax() * step < 1e-13 * (1.0 + beta.amax()) || max_grad < 1e3 * tol.gradient {
                return Ok(InnerOutcome {
                    partials,
                    hessian,
                    penalized_loglik: lp,
                });
            }
            return Err(FitError::Diverged {
                outer,
                inner,
                trace: trace.clone(),
            });
        }
        if let Some(last) = trace.last_mut() {
            last.step_halvings = halvings;
        }
        let coef_change = (&candidate - &*beta).amax();
        let rel_change = (lp_new - lp).abs() / (1.0 + lp.abs());
        last_step = Some((coef_change, rel_change));
        *beta = candidate;
    }
    let lp = data_loglik(design, beta) - penalties.penalty_value(beta);
    Err(FitError::IterationCap {
        cap: tol.max_inner,
        last_penalized_loglik: lp,
        coefficients: beta.iter().copied().collect(),
        trace: trace.clone(),
    })
}

/// Starting coefficients: zero everywhere except intercept blocks, which get
/// the log of the regime-specific weighted mean count (floored at 1e-8).
fn initial_coefficients(design: &DesignMatrix) -> DVector<f64> {
    let layout = &design.layout;
    let mut beta = DVector::zeros(layout.total_columns());
    for group in &layout.groups {
        if !group.is_intercept {
            continue;
        }
        let regime = group.regime.unwrap_or(Regime::Pooled);
        let mut sum_w = 0.0;
        let mut sum_wy = 0.0;
        for row in &design.rows {
            if layout.pooled || row.regime == regime {
                sum_w += row.weight;
                sum_wy += row.weight * row.response as f64;
            }
        }
        let mean = if sum_w > 0.0 { sum_wy / sum_w } else { 0.0 };
        let level = mean.max(1e-8).ln();
        for c in group.columns.clone() {
            beta[c] = level;
        }
    }
    beta
}

fn fellner_schall_update(group: &mut PenaltyGroup, beta: &DVector<f64>, v: &DMatrix<f64>) {
    let gamma = group.gamma;
    let numerator = group.rank() as f64 / gamma - group.trace_v_penalty(v);
    let denominator = group.quadratic(beta);
    let proposal = if denominator <= f64::MIN_POSITIVE {
        gamma * 10.0
    } else if numerator <= 0.0 {
        gamma / 10.0
    } else {
        gamma * numerator / denominator
    };
    group.gamma = proposal
        .clamp(gamma / 10.0, gamma * 10.0)
        .clamp(GAMMA_MIN, GAMMA_MAX);
}

/// Maximizes the penalized log-likelihood for `design` under `penalties`.
pub fn fit(design: &DesignMatrix, penalties: &PenaltyConfig) -> Result<FitResult, FitError> {
    if design.rows.is_empty() {
        return Err(FitError::EmptyDesign);
    }
    let layout = &design.layout;
    let tol = penalties.tolerances;
    let mut penalties = penalties.clone();
    let mut beta = initial_coefficients(design);
    let mut trace = Vec::new();

    let mut previous: Option<(f64, DVector<f64>)> = None;
    let mut outcome = None;
    for outer in 0..tol.max_outer {
        let solved = inner_solve(design, &mut beta, &penalties, outer, &mut trace)?;
        let lp = solved.penalized_loglik;
        let fixed = penalties.selection == Selection::Fixed || penalties.groups.is_empty();
        let converged = match &previous {
            Some((lp_prev, beta_prev)) => {
                let rel = (lp - lp_prev).abs() / (1.0 + lp_prev.abs());
                let coef = (&beta - beta_prev).amax();
                rel < tol.outer && coef < tol.coefficient
            }
            None => false,
        };
        if fixed || converged {
            outcome = Some(solved);
            break;
        }
        previous = Some((lp, beta.clone()));
        // One Fellner-Schall step per group, using the posterior covariance
        // at the current inner optimum.
        let chol = factorize(&solved.hessian, layout)?;
        let v = chol.inverse();
        for group in &mut penalties.groups {
            fellner_schall_update(group, &beta, &v);
        }
        if outer + 1 == tol.max_outer {
            return Err(FitError::IterationCap {
                cap: tol.max_outer,
                last_penalized_loglik: lp,
                coefficients: beta.iter().copied().collect(),
                trace,
            });
        }
    }
    let outcome = outcome.expect("loop either sets an outcome or returns an error");

    let chol = factorize(&outcome.hessian, layout)?;
    let mut covariance = chol.inverse();
    let influence = &covariance * &outcome.partials.xtwx;
    let p = layout.total_columns();
    let edf_total = (0..p).map(|c| influence[(c, c)]).sum();
    let edf_by_group: Vec<(String, f64)> = layout
        .groups
        .iter()
        .map(|g| {
            let edf = g.columns.clone().map(|c| influence[(c, c)]).sum();
            (g.label.clone(), edf)
        })
        .collect();

    let mut coefficients = beta.clone();
    if penalties.center_random_effects {
        center_random_effects(layout, &mut coefficients, &mut covariance)?;
    }

    let fitted: Vec<f64> = design
        .rows
        .iter()
        .map(|row| row_eta(layout, row, &coefficients).exp())
        .collect();

    let mut log_factorial = 0.0;
    let max_y = design.rows.iter().map(|r| r.response).max().unwrap_or(0);
    let mut table = Vec::with_capacity(max_y as usize + 1);
    table.push(0.0);
    for k in 1..=max_y {
        let prev = table[k as usize - 1];
        table.push(prev + (k as f64).ln());
    }
    for row in &design.rows {
        log_factorial += row.weight * table[row.response as usize];
    }

    let standard_errors = (0..p).map(|c| covariance[(c, c)].max(0.0).sqrt()).collect();
    let gamma_of = |block: &Option<Range<usize>>| {
        block.as_ref().and_then(|range| {
            penalties
                .groups
                .iter()
                .find(|g| g.columns == *range)
                .map(|g| 1.0 / g.gamma)
        })
    };
    let sender_variance = gamma_of(&layout.sender_block);
    let receiver_variance = gamma_of(&layout.receiver_block);

    Ok(FitResult {
        layout: layout.clone(),
        coefficients: coefficients.iter().copied().collect(),
        standard_errors,
        covariance,
        gammas: penalties
            .groups
            .iter()
            .map(|g| GammaEstimate {
                label: g.label.clone(),
                gamma: g.gamma,
            })
            .collect(),
        sender_variance,
        receiver_variance,
        edf_total,
        edf_by_group,
        loglik: outcome.partials.loglik,
        penalized_loglik: outcome.penalized_loglik,
        weighted_log_factorial: log_factorial,
        n_rows: design.rows.len(),
        fitted,
        trace,
    })
}

/// Reparameterizes random effects to have mean zero per block, shifting the
/// removed means into every regime's intercept. Predictions are unchanged;
/// the covariance is transformed congruently.
fn center_random_effects(
    layout: &DesignLayout,
    beta: &mut DVector<f64>,
    covariance: &mut DMatrix<f64>,
) -> Result<(), FitError> {
    let intercept_groups: Vec<_> = layout.groups.iter().filter(|g| g.is_intercept).collect();
    let n_regimes = if layout.pooled { 1 } else { 2 };
    if intercept_groups.len() != n_regimes {
        return Err(FitError::CenteringNeedsIntercepts);
    }
    let p = layout.total_columns();
    let mut transform = DMatrix::identity(p, p);
    for block in [&layout.sender_block, &layout.receiver_block]
        .into_iter()
        .flatten()
    {
        let n = block.len() as f64;
        for r in block.clone() {
            for c in block.clone() {
                transform[(r, c)] -= 1.0 / n;
            }
        }
        for group in &intercept_groups {
            for a in group.columns.clone() {
                for c in block.clone() {
                    transform[(a, c)] += 1.0 / n;
                }
            }
        }
    }
    *beta = &transform * &*beta;
    *covariance = &transform * &*covariance * transform.transpose();
    Ok(())
}

/// A point of an estimated coefficient curve with its 95% band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Evaluates the coefficient function of the column group labelled `label`
/// on `grid`, with pointwise 95% bands from the posterior covariance. Constant
/// terms produce a flat curve.
pub fn coefficient_curve(
    fit: &FitResult,
    label: &str,
    grid: &[f64],
) -> Result<Vec<CurvePoint>, FitError> {
    let group = fit
        .layout
        .group(label)
        .ok_or_else(|| FitError::UnknownTerm(label.into()))?;
    let mut out = Vec::with_capacity(grid.len());
    match &group.spline {
        Some(spline) => {
            for &t in grid {
                let basis = spline.basis_row(t)?;
                let mut estimate = 0.0;
                for (k, b) in basis.iter().enumerate() {
                    estimate += b * fit.coefficients[group.columns.start + k];
                }
                let mut variance = 0.0;
                for (a, ba) in basis.iter().enumerate() {
                    for (b, bb) in basis.iter().enumerate() {
                        variance += ba
                            * bb
                            * fit.covariance[(group.columns.start + a, group.columns.start + b)];
                    }
                }
                let half = 1.96 * variance.max(0.0).sqrt();
                out.push(CurvePoint {
                    t,
                    estimate,
                    lower: estimate - half,
                    upper: estimate + half,
                });
            }
        }
        None => {
            let c = group.columns.start;
            let estimate = fit.coefficients[c];
            let half = 1.96 * fit.covariance[(c, c)].max(0.0).sqrt();
            for &t in grid {
                out.push(CurvePoint {
                    t,
                    estimate,
                    lower: estimate - half,
                    upper: estimate + half,
                });
            }
        }
    }
    Ok(out)
}

/// The fitted intensity `exp(x'b)` of one design row, including random-effect
/// contributions. Weights do not enter.
pub fn predict_intensity(fit: &FitResult, row: &DesignRow) -> Result<f64, FitError> {
    let layout = &fit.layout;
    if row.values.len() != layout.fixed_columns {
        return Err(FitError::LengthMismatch {
            expected: layout.fixed_columns,
            found: row.values.len(),
        });
    }
    if let (Some(block), Some(ix)) = (&layout.sender_block, row.sender_index) {
        if ix >= block.len() {
            return Err(FitError::IndexOutOfRange {
                index: ix,
                size: block.len(),
            });
        }
    }
    if let (Some(block), Some(ix)) = (&layout.receiver_block, row.receiver_index) {
        if ix >= block.len() {
            return Err(FitError::IndexOutOfRange {
                index: ix,
                size: block.len(),
            });
        }
    }
    let beta = DVector::from_column_slice(&fit.coefficients);
    Ok(row_eta(layout, row, &beta).exp())
}

/// Per-actor random effects with posterior standard deviations.
#[derive(Debug, Clone)]
pub struct RandomEffects {
    pub sender: Vec<(String, f64, f64)>,
    pub receiver: Vec<(String, f64, f64)>,
    pub sender_variance: Option<f64>,
    pub receiver_variance: Option<f64>,
}

pub fn extract_random_effects(fit: &FitResult) -> Result<RandomEffects, FitError> {
    let layout = &fit.layout;
    if layout.sender_block.is_none() && layout.receiver_block.is_none() {
        return Err(FitError::NoRandomEffects);
    }
    let collect = |block: &Option<Range<usize>>| -> Vec<(String, f64, f64)> {
        match block {
            Some(range) => range
                .clone()
                .enumerate()
                .map(|(k, c)| {
                    (
                        layout.actor_ids[k].clone(),
                        fit.coefficients[c],
                        fit.covariance[(c, c)].max(0.0).sqrt(),
                    )
                })
                .collect(),
            None => Vec::new(),
        }
    };
    Ok(RandomEffects {
        sender: collect(&layout.sender_block),
        receiver: collect(&layout.receiver_block),
        sender_variance: fit.sender_variance,
        receiver_variance: fit.receiver_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::CovariateTable;
    use crate::design::{build_design, random_effect_blocks, ColumnGroup, DesignMatrix};
    use crate::model::{ModelSpec, ModelTerm, RandomEffectsConfig, SeparabilityConfig};
    use crate::network::{ActorRegistry, EventPanel};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Hand-built pooled design: one unpenalized group per named column.
    fn toy_design(columns: &[&str], rows: Vec<(u64, Vec<f64>)>) -> DesignMatrix {
        let groups: Vec<ColumnGroup> = columns
            .iter()
            .enumerate()
            .map(|(k, name)| ColumnGroup {
                label: (*name).to_string(),
                term: Some((*name).to_string()),
                source: None,
                regime: Some(Regime::Pooled),
                columns: k..k + 1,
                penalty: ColumnPenalty::Unpenalized,
                time_varying: false,
                spline: None,
                is_intercept: *name == "intercept",
            })
            .collect();
        let layout = DesignLayout {
            model: ModelSpec::default(),
            groups,
            fixed_columns: columns.len(),
            onset_span: 0..0,
            repetition_span: 0..0,
            pooled: true,
            sender_block: None,
            receiver_block: None,
            actor_ids: vec!["A".into(), "B".into()],
            modeled_periods: vec![2],
            first_label: 1,
        };
        let rows = rows
            .into_iter()
            .map(|(y, values)| DesignRow {
                period: 2,
                sender: 0,
                receiver: 1,
                response: y,
                regime: Regime::Pooled,
                weight: 1.0,
                values,
                sender_index: None,
                receiver_index: None,
            })
            .collect();
        DesignMatrix { rows, layout }
    }

    fn settings() -> EstimationSettings {
        EstimationSettings {
            gamma_init: 1.0,
            ..EstimationSettings::default()
        }
    }

    #[test]
    fn zero_coefficients_on_zero_responses_give_minus_row_count() {
        let design = toy_design(
            &["intercept"],
            (0..7).map(|_| (0u64, vec![1.0])).collect(),
        );
        let penalties = PenaltyConfig::unpenalized(&settings());
        let lp = penalized_loglik(&design, &[0.0], &penalties).unwrap();
        assert_abs_diff_eq!(lp, -7.0, epsilon = 1e-12);
    }

    #[test]
    fn loglik_matches_a_naive_summation_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        let rows: Vec<(u64, Vec<f64>)> = (0..60)
            .map(|_| {
                (
                    rng.random_range(0..5),
                    vec![1.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                )
            })
            .collect();
        let design = toy_design(&["intercept", "x1", "x2"], rows.clone());
        let beta = [0.3, -0.7, 0.2];
        let penalties = PenaltyConfig::unpenalized(&settings());
        let got = penalized_loglik(&design, &beta, &penalties).unwrap();
        // Independent oracle: direct loop over the raw tuples.
        let mut expected = 0.0;
        for (y, values) in &rows {
            let eta: f64 = values.iter().zip(&beta).map(|(v, b)| v * b).sum();
            expected += *y as f64 * eta - eta.exp();
        }
        assert!((got - expected).abs() <= 1e-10 * expected.abs().max(1.0));
    }

    #[test]
    fn doubling_gamma_doubles_the_penalty_term() {
        let design = toy_design(
            &["a", "b", "c"],
            vec![(1, vec![1.0, 0.5, -0.5]), (0, vec![1.0, -1.0, 0.3])],
        );
        let group = |gamma| PenaltyGroup {
            label: "a".into(),
            columns: 0..3,
            gamma,
            kind: GroupKind::Ridge,
        };
        let base = PenaltyConfig {
            groups: vec![group(1.0)],
            selection: Selection::Fixed,
            tolerances: Tolerances::default(),
            center_random_effects: false,
        };
        let doubled = PenaltyConfig {
            groups: vec![group(2.0)],
            ..base.clone()
        };
        let beta = [0.4, -0.2, 0.9];
        let unpenalized =
            penalized_loglik(&design, &beta, &PenaltyConfig::unpenalized(&settings())).unwrap();
        let lp1 = penalized_loglik(&design, &beta, &base).unwrap();
        let lp2 = penalized_loglik(&design, &beta, &doubled).unwrap();
        assert_abs_diff_eq!(unpenalized - lp2, 2.0 * (unpenalized - lp1), epsilon = 1e-12);
    }

    #[test]
    fn intercept_only_fit_recovers_log_mean() {
        let design = toy_design(
            &["intercept"],
            vec![(0, vec![1.0]), (1, vec![1.0]), (2, vec![1.0]), (3, vec![1.0])],
        );
        let penalties = PenaltyConfig::unpenalized(&settings());
        let fit = fit(&design, &penalties).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 1.5f64.ln(), epsilon = 1e-8);
        assert_abs_diff_eq!(fit.edf_total, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn two_group_fit_matches_closed_forms() {
        // Group 0 (x=0) has mean 0.5; group 1 (x=1) has mean 2.5.
        let mut rows = vec![(0u64, vec![1.0, 0.0]), (1, vec![1.0, 0.0])];
        rows.push((2, vec![1.0, 1.0]));
        rows.push((3, vec![1.0, 1.0]));
        let design = toy_design(&["intercept", "x"], rows);
        let penalties = PenaltyConfig::unpenalized(&settings());
        let fit = fit(&design, &penalties).unwrap();
        let m0: f64 = 0.5;
        let m1: f64 = 2.5;
        assert_abs_diff_eq!(fit.coefficients[0], m0.ln(), epsilon = 1e-8);
        assert_abs_diff_eq!(fit.coefficients[1], m1.ln() - m0.ln(), epsilon = 1e-8);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = StdRng::seed_from_u64(4);
        let rows: Vec<(u64, Vec<f64>)> = (0..40)
            .map(|_| {
                (
                    rng.random_range(0..4),
                    vec![1.0, rng.random_range(-1.0..1.0)],
                )
            })
            .collect();
        let design = toy_design(&["intercept", "x"], rows);
        let mut penalties = PenaltyConfig::unpenalized(&settings());
        penalties.groups.push(PenaltyGroup {
            label: "x".into(),
            columns: 1..2,
            gamma: 0.7,
            kind: GroupKind::Ridge,
        });
        for _ in 0..20 {
            let beta: Vec<f64> = (0..2).map(|_| rng.random_range(-0.5..0.5)).collect();
            let grad = penalized_gradient(&design, &beta, &penalties).unwrap();
            for k in 0..beta.len() {
                let h = 1e-6;
                let mut up = beta.clone();
                up[k] += h;
                let mut down = beta.clone();
                down[k] -= h;
                let fd = (penalized_loglik(&design, &up, &penalties).unwrap()
                    - penalized_loglik(&design, &down, &penalties).unwrap())
                    / (2.0 * h);
                let scale = grad[k].abs().max(1e-3);
                assert!(
                    (grad[k] - fd).abs() <= 1e-4 * scale,
                    "component {k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn inner_loop_is_monotone_in_the_trace() {
        let mut rng = StdRng::seed_from_u64(7);
        let rows: Vec<(u64, Vec<f64>)> = (0..200)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                let lambda = (0.3 + 0.8 * x).exp();
                let y = sample_poisson(&mut rng, lambda);
                (y, vec![1.0, x])
            })
            .collect();
        let design = toy_design(&["intercept", "x"], rows);
        let fit = fit(&design, &PenaltyConfig::unpenalized(&settings())).unwrap();
        let lps: Vec<f64> = fit.trace.iter().map(|t| t.penalized_loglik).collect();
        for pair in lps.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9, "not monotone: {pair:?}");
        }
    }

    fn sample_poisson(rng: &mut StdRng, lambda: f64) -> u64 {
        // Knuth's method is plenty for small test intensities.
        let l = (-lambda).exp();
        let mut k = 0u64;
        let mut p = 1.0;
        loop {
            p *= rng.random::<f64>();
            if p <= l {
                return k;
            }
            k += 1;
        }
    }

    #[test]
    fn unpenalized_fit_matches_an_independent_newton_solver() {
        let mut rng = StdRng::seed_from_u64(21);
        let rows: Vec<(u64, Vec<f64>)> = (0..150)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                let z: f64 = rng.random_range(0.0..1.0);
                let lambda = (0.2 + 0.6 * x - 0.4 * z).exp();
                (sample_poisson(&mut rng, lambda), vec![1.0, x, z])
            })
            .collect();
        let design = toy_design(&["intercept", "x", "z"], rows.clone());
        let fitted = fit(&design, &PenaltyConfig::unpenalized(&settings())).unwrap();

        // Oracle: plain dense Newton on the same likelihood, written directly.
        let mut beta = vec![0.0f64; 3];
        for _ in 0..60 {
            let mut grad = vec![0.0f64; 3];
            let mut hess = vec![[0.0f64; 3]; 3];
            for (y, v) in &rows {
                let eta: f64 = v.iter().zip(&beta).map(|(a, b)| a * b).sum();
                let lam = eta.exp();
                for a in 0..3 {
                    grad[a] += (*y as f64 - lam) * v[a];
                    for b in 0..3 {
                        hess[a][b] += lam * v[a] * v[b];
                    }
                }
            }
            let h = DMatrix::from_fn(3, 3, |r, c| hess[r][c]);
            let g = DVector::from_vec(grad.clone());
            let delta = Cholesky::new(h).unwrap().solve(&g);
            for a in 0..3 {
                beta[a] += delta[a];
            }
            if delta.amax() < 1e-12 {
                break;
            }
        }
        for a in 0..3 {
            assert!((fitted.coefficients[a] - beta[a]).abs() < 1e-8);
        }
    }

    fn small_panel_design(seed: u64, random_effects: bool) -> DesignMatrix {
        let mut rng = StdRng::seed_from_u64(seed);
        let n = 5;
        let periods = 6;
        let mut reg = ActorRegistry::new();
        for k in 0..n {
            let ix = reg.insert(&format!("A{k}"));
            for t in 1..=periods {
                reg.add_presence(ix, t);
            }
        }
        let mut panel = EventPanel::new(reg, periods, 1);
        for t in 1..=periods {
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random_bool(0.35) {
                        panel.add_count(t, i, j, rng.random_range(1..4)).unwrap();
                    }
                }
            }
        }
        let spec = ModelSpec {
            terms: vec![
                ModelTerm::intercept(false),
                ModelTerm::structural(crate::statistics::StructuralStatistic::Reciprocity, false),
            ],
            separability: SeparabilityConfig {
                enabled: true,
                lag: 1,
            },
            random_effects: if random_effects {
                RandomEffectsConfig {
                    sender: true,
                    receiver: true,
                }
            } else {
                RandomEffectsConfig::none()
            },
            ..ModelSpec::default()
        };
        build_design(&panel, &CovariateTable::default(), &spec, None).unwrap()
    }

    /// Restricts a separable design to one regime's rows and columns, as a
    /// standalone pooled design.
    fn regime_subdesign(design: &DesignMatrix, regime: Regime) -> DesignMatrix {
        let span = design.layout.active_span(regime);
        let mut layout = design.layout.clone();
        layout.pooled = true;
        layout.onset_span = 0..0;
        layout.repetition_span = 0..0;
        layout.fixed_columns = span.len();
        layout.groups = design
            .layout
            .groups
            .iter()
            .filter(|g| g.regime == Some(regime))
            .map(|g| {
                let mut shifted = g.clone();
                shifted.columns = g.columns.start - span.start..g.columns.end - span.start;
                shifted.regime = Some(Regime::Pooled);
                shifted
            })
            .collect();
        let rows = design
            .rows
            .iter()
            .filter(|r| r.regime == regime)
            .map(|r| {
                let mut row = r.clone();
                row.values = r.values[span.clone()].to_vec();
                row.regime = Regime::Pooled;
                row
            })
            .collect();
        DesignMatrix { rows, layout }
    }

    #[test]
    fn separable_fit_equals_independent_regime_fits() {
        let design = small_panel_design(3, false);
        let joint = fit(&design, &PenaltyConfig::unpenalized(&settings())).unwrap();

        for regime in [Regime::Onset, Regime::Repetition] {
            let sub = regime_subdesign(&design, regime);
            let sub_fit = fit(&sub, &PenaltyConfig::unpenalized(&settings())).unwrap();
            let span = design.layout.active_span(regime);
            for (k, c) in span.enumerate() {
                assert!(
                    (joint.coefficients[c] - sub_fit.coefficients[k]).abs() < 1e-8,
                    "regime {regime:?} column {c}"
                );
            }
        }
    }

    #[test]
    fn huge_ridge_gamma_shrinks_random_effects_to_zero() {
        let design = small_panel_design(9, true);
        let mut penalties = PenaltyConfig::from_design(&design, &EstimationSettings::fixed());
        penalties.set_gamma("sender_effects", 1e12).unwrap();
        penalties.set_gamma("receiver_effects", 1e12).unwrap();
        let fit = fit(&design, &penalties).unwrap();
        let effects = extract_random_effects(&fit).unwrap();
        for (_, estimate, _) in effects.sender.iter().chain(&effects.receiver) {
            assert!(estimate.abs() < 1e-4);
        }
        assert_eq!(fit.sender_variance, Some(1e-12));
    }

    #[test]
    fn actor_never_at_risk_gets_pure_shrinkage() {
        // Actor A2 exists only in period 1, so it is never in a modeled row.
        let mut reg = ActorRegistry::new();
        for k in 0..3 {
            let ix = reg.insert(&format!("A{k}"));
            let last = if k == 2 { 1 } else { 4 };
            for t in 1..=last {
                reg.add_presence(ix, t);
            }
        }
        let mut panel = EventPanel::new(reg, 4, 1);
        panel.add_count(1, 0, 1, 1).unwrap();
        panel.add_count(2, 0, 1, 2).unwrap();
        panel.add_count(3, 1, 0, 1).unwrap();
        let spec = ModelSpec {
            terms: vec![ModelTerm::intercept(false)],
            separability: SeparabilityConfig {
                enabled: false,
                lag: 1,
            },
            random_effects: RandomEffectsConfig {
                sender: true,
                receiver: false,
            },
            ..ModelSpec::default()
        };
        let design = build_design(&panel, &CovariateTable::default(), &spec, None).unwrap();
        let mut penalties = PenaltyConfig::from_design(&design, &EstimationSettings::fixed());
        penalties.set_gamma("sender_effects", 4.0).unwrap();
        let fit = fit(&design, &penalties).unwrap();
        let effects = extract_random_effects(&fit).unwrap();
        let (id, estimate, sd) = &effects.sender[2];
        assert_eq!(id, "A2");
        assert_abs_diff_eq!(*estimate, 0.0, epsilon = 1e-10);
        // Prior sd = sqrt(1/gamma).
        assert_abs_diff_eq!(*sd, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn constant_term_curve_is_flat_with_nonnegative_band() {
        let design = small_panel_design(5, false);
        let fit = fit(&design, &PenaltyConfig::unpenalized(&settings())).unwrap();
        let grid = [2.0, 3.5, 6.0];
        let curve = coefficient_curve(&fit, "onset:reciprocity", &grid).unwrap();
        let c = design.layout.group("onset:reciprocity").unwrap().columns.start;
        for point in &curve {
            assert_eq!(point.estimate, fit.coefficients[c]);
            assert!(point.upper >= point.lower);
        }
    }

    #[test]
    fn predict_intensity_is_multiplicative_in_random_effects() {
        let design = small_panel_design(31, true);
        let mut penalties = PenaltyConfig::from_design(&design, &EstimationSettings::fixed());
        penalties.set_gamma("sender_effects", 2.0).unwrap();
        penalties.set_gamma("receiver_effects", 2.0).unwrap();
        let mut result = fit(&design, &penalties).unwrap();
        let row = design.rows[0].clone();
        let base = predict_intensity(&result, &row).unwrap();
        let s_col = result.layout.sender_block.clone().unwrap().start + row.sender_index.unwrap();
        result.coefficients[s_col] += 0.3;
        let bumped = predict_intensity(&result, &row).unwrap();
        assert_abs_diff_eq!(bumped / base, 0.3f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn intercept_only_prediction_is_exp_intercept() {
        let design = toy_design(&["intercept"], vec![(2, vec![1.0]), (4, vec![1.0])]);
        let fit = fit(&design, &PenaltyConfig::unpenalized(&settings())).unwrap();
        let row = &design.rows[0];
        let lambda = predict_intensity(&fit, row).unwrap();
        assert_abs_diff_eq!(lambda, fit.coefficients[0].exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(lambda, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn duplicated_columns_are_reported_as_confounded() {
        let rows: Vec<(u64, Vec<f64>)> = (0..20)
            .map(|k| (u64::from(k % 3 == 0), vec![1.0, 0.5, 0.5]))
            .collect();
        let design = toy_design(&["intercept", "dup_a", "dup_b"], rows);
        let err = fit(&design, &PenaltyConfig::unpenalized(&settings())).unwrap_err();
        match err {
            FitError::RankDeficient { columns } => {
                assert!(columns.iter().any(|c| c == "dup_a"));
                assert!(columns.iter().any(|c| c == "dup_b"));
            }
            other => panic!("expected rank deficiency, got {other}"),
        }
    }

    #[test]
    fn centering_zeroes_the_mean_and_preserves_predictions() {
        let design = small_panel_design(13, true);
        let mut penalties = PenaltyConfig::from_design(&design, &EstimationSettings::fixed());
        penalties.set_gamma("sender_effects", 1.0).unwrap();
        penalties.set_gamma("receiver_effects", 1.0).unwrap();
        let plain = fit(&design, &penalties).unwrap();
        penalties.center_random_effects = true;
        let centered = fit(&design, &penalties).unwrap();
        let effects = extract_random_effects(&centered).unwrap();
        let mean: f64 =
            effects.sender.iter().map(|(_, e, _)| e).sum::<f64>() / effects.sender.len() as f64;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
        for (row, expected) in design.rows.iter().zip(&plain.fitted) {
            let got = predict_intensity(&centered, row).unwrap();
            assert_abs_diff_eq!(got, *expected, epsilon = 1e-8 * expected.max(1.0));
        }
    }

    #[test]
    fn random_effect_blocks_after_the_fact_match_spec_toggle() {
        let design = small_panel_design(17, false);
        let with_blocks = random_effect_blocks(design.clone(), true, true);
        assert_eq!(
            with_blocks.total_columns(),
            design.total_columns() + 2 * design.layout.actor_ids.len()
        );
    }
}

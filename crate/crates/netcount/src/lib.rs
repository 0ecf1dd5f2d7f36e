//! Separable semiparametric Poisson counting-process models for longitudinal
//! dyadic event networks.
//!
//! The library models yearly (or otherwise period-aggregated) counts of directed
//! events between actors as increments of a network-valued counting process.
//! Dyad-period intensities are log-linear in lagged endogenous network statistics
//! and exogenous covariates, with
//!
//! * separable *onset* / *repetition* regimes (different coefficients for dyads
//!   with and without events in the lag window),
//! * penalized B-spline (P-spline) time-varying coefficients,
//! * actor-specific sender and receiver random effects realized as ridge-penalized
//!   one-hot blocks, and
//! * automatic smoothing/variance-parameter selection via Fellner–Schall updates
//!   interleaved with penalized IRLS.
//!
//! Model comparison uses a conditional AIC on effective degrees of freedom, and
//! goodness of fit is assessed by simulating replicate panels from the fitted
//! intensities and comparing count rootograms, weighted clustering coefficients,
//! and average in-counts against the observed network.
//!
//! Entry points: [`ingest`] for reading event/presence/covariate files,
//! [`design::build_design`] for the counting-process design matrix,
//! [`estimation::fit`] for estimation, [`selection::compare_suite`] for the
//! nested-model comparison, and [`gof::gof_report`] for simulation-based
//! goodness of fit.

pub mod covariates;
pub mod design;
pub mod estimation;
pub mod gof;
pub mod ingest;
pub mod model;
pub mod network;
pub mod report;
pub mod selection;
pub mod splines;
pub mod statistics;

pub use design::{build_design, DesignMatrix, DesignRow};
pub use estimation::{fit, FitResult};
pub use gof::{gof_report, simulate_panel, SimulationSummary};
pub use model::{ModelSpec, ModelTerm};
pub use network::{ActorRegistry, EventPanel, EventRecord};
pub use selection::{compare_suite, conditional_aic, ModelComparison};

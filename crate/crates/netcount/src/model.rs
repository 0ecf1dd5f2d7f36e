//! Model specification: terms, regimes, separability, random effects, weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Period;
use crate::splines::SplineSettings;
use crate::statistics::{Role, StructuralStatistic, TermSource, Transform};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model has no terms")]
    NoTerms,
    #[error("duplicate term name `{0}`")]
    DuplicateTerm(String),
    #[error("unknown term source `{0}` (expected `intercept` or a structural statistic name)")]
    UnknownSource(String),
    #[error("separability lag must be at least 1")]
    ZeroLag,
}

/// Which regime a design row falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Onset,
    Repetition,
    /// Separability disabled: one shared block.
    Pooled,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Onset => "onset",
            Regime::Repetition => "repetition",
            Regime::Pooled => "pooled",
        }
    }
}

/// Which regime block(s) a term contributes columns to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegimeAssignment {
    Onset,
    Repetition,
    #[default]
    Both,
}

impl RegimeAssignment {
    pub fn covers(&self, regime: Regime) -> bool {
        match (self, regime) {
            (_, Regime::Pooled) => true,
            (RegimeAssignment::Both, _) => true,
            (RegimeAssignment::Onset, Regime::Onset) => true,
            (RegimeAssignment::Repetition, Regime::Repetition) => true,
            _ => false,
        }
    }
}

/// Onset/repetition separability: a row is governed by the repetition block
/// iff the dyad had any event in the `lag` periods before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparabilityConfig {
    pub enabled: bool,
    pub lag: usize,
}

impl Default for SeparabilityConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            lag: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomEffectsConfig {
    pub sender: bool,
    pub receiver: bool,
}

impl Default for RandomEffectsConfig {
    fn default() -> Self {
        Self {
            sender: true,
            receiver: true,
        }
    }
}

impl RandomEffectsConfig {
    pub fn none() -> Self {
        Self {
            sender: false,
            receiver: false,
        }
    }

    pub fn any(&self) -> bool {
        self.sender || self.receiver
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    Unit,
    /// `w = log(TIV + 1) + 1`, standardized to sum to one over all rows.
    TivLog,
}

/// Serde surface for a term source: either a bare string (`"intercept"` or a
/// structural statistic name) or an exogenous covariate table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum TermSourceRepr {
    Exogenous {
        covariate: String,
        role: Role,
        #[serde(default)]
        transform: Transform,
    },
    Name(String),
}

fn source_from_repr(repr: TermSourceRepr) -> Result<TermSource, ModelError> {
    Ok(match repr {
        TermSourceRepr::Name(name) if name == "intercept" => TermSource::Intercept,
        TermSourceRepr::Name(name) => match StructuralStatistic::parse(&name) {
            Some(stat) => TermSource::Structural(stat),
            None => return Err(ModelError::UnknownSource(name)),
        },
        TermSourceRepr::Exogenous {
            covariate,
            role,
            transform,
        } => TermSource::Exogenous {
            covariate,
            role,
            transform,
        },
    })
}

fn source_to_repr(source: &TermSource) -> TermSourceRepr {
    match source {
        TermSource::Intercept => TermSourceRepr::Name("intercept".into()),
        TermSource::Structural(stat) => TermSourceRepr::Name(stat.name().into()),
        TermSource::Exogenous {
            covariate,
            role,
            transform,
        } => TermSourceRepr::Exogenous {
            covariate: covariate.clone(),
            role: *role,
            transform: *transform,
        },
    }
}

/// One model term: a raw value source, the regime block(s) it enters, and
/// whether its coefficient is spline-expanded over time.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTerm {
    pub name: String,
    pub source: TermSource,
    pub regime: RegimeAssignment,
    pub time_varying: bool,
    /// Per-term override of the model's default spline settings.
    pub spline: Option<SplineSettings>,
}

impl ModelTerm {
    pub fn new(name: &str, source: TermSource) -> Self {
        Self {
            name: name.to_owned(),
            source,
            regime: RegimeAssignment::Both,
            time_varying: false,
            spline: None,
        }
    }

    pub fn intercept(time_varying: bool) -> Self {
        Self {
            name: "intercept".into(),
            source: TermSource::Intercept,
            regime: RegimeAssignment::Both,
            time_varying,
            spline: None,
        }
    }

    pub fn structural(stat: StructuralStatistic, time_varying: bool) -> Self {
        Self {
            name: stat.name().into(),
            source: TermSource::Structural(stat),
            regime: RegimeAssignment::Both,
            time_varying,
            spline: None,
        }
    }

    pub fn time_varying(mut self, yes: bool) -> Self {
        self.time_varying = yes;
        self
    }

    pub fn regime(mut self, regime: RegimeAssignment) -> Self {
        self.regime = regime;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelTermRepr {
    name: String,
    source: TermSourceRepr,
    #[serde(default)]
    regime: RegimeAssignment,
    #[serde(default)]
    time_varying: bool,
    #[serde(default)]
    spline: Option<SplineSettings>,
}

impl Serialize for ModelTerm {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ModelTermRepr {
            name: self.name.clone(),
            source: source_to_repr(&self.source),
            regime: self.regime,
            time_varying: self.time_varying,
            spline: self.spline,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModelTerm {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ModelTermRepr::deserialize(deserializer)?;
        let source = source_from_repr(repr.source).map_err(serde::de::Error::custom)?;
        Ok(ModelTerm {
            name: repr.name,
            source,
            regime: repr.regime,
            time_varying: repr.time_varying,
            spline: repr.spline,
        })
    }
}

/// The complete model specification driving design construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub terms: Vec<ModelTerm>,
    pub separability: SeparabilityConfig,
    pub random_effects: RandomEffectsConfig,
    pub weights: WeightScheme,
    /// Default spline settings for time-varying terms without an override.
    pub spline: SplineSettings,
    /// First modeled period; defaults to `lag + 1`. Raising it restricts the
    /// estimation sample, which makes fits with different lags comparable.
    pub first_modeled_period: Option<Period>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            terms: vec![ModelTerm::intercept(true)],
            separability: SeparabilityConfig::default(),
            random_effects: RandomEffectsConfig::default(),
            weights: WeightScheme::Unit,
            spline: SplineSettings::default(),
            first_modeled_period: None,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.terms.is_empty() {
            return Err(ModelError::NoTerms);
        }
        if self.separability.lag == 0 {
            return Err(ModelError::ZeroLag);
        }
        let mut seen = std::collections::BTreeSet::new();
        for term in &self.terms {
            if !seen.insert(&term.name) {
                return Err(ModelError::DuplicateTerm(term.name.clone()));
            }
        }
        Ok(())
    }

    pub fn lag(&self) -> usize {
        self.separability.lag
    }

    /// Spline settings effective for `term`.
    pub fn spline_for(&self, term: &ModelTerm) -> SplineSettings {
        term.spline.unwrap_or(self.spline)
    }

    /// The regimes whose column blocks this model has.
    pub fn regimes(&self) -> Vec<Regime> {
        if self.separability.enabled {
            vec![Regime::Onset, Regime::Repetition]
        } else {
            vec![Regime::Pooled]
        }
    }

    /// Returns a copy with every term forced time-constant.
    pub fn with_constant_effects(&self) -> Self {
        let mut spec = self.clone();
        for term in &mut spec.terms {
            term.time_varying = false;
        }
        spec
    }

    /// Returns a copy with separability disabled.
    pub fn pooled(&self) -> Self {
        let mut spec = self.clone();
        spec.separability.enabled = false;
        spec
    }

    /// Returns a copy without random effects.
    pub fn without_random_effects(&self) -> Self {
        let mut spec = self.clone();
        spec.random_effects = RandomEffectsConfig::none();
        spec
    }
}

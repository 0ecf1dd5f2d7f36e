//! B-spline basis evaluation on an equidistant clamped knot grid and
//! difference-penalty construction for P-spline smoothing.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("basis dimension {q} must be at least degree + 1 = {min}")]
    BasisTooSmall { q: usize, min: usize },
    #[error("basis dimension {q} must exceed the penalty order {order}")]
    PenaltyTooLarge { q: usize, order: usize },
    #[error("penalty order must be at least 1")]
    ZeroPenaltyOrder,
    #[error("spline domain [{0}, {1}] is empty")]
    EmptyDomain(f64, f64),
    #[error("evaluation point {t} lies outside the spline domain [{lo}, {hi}]")]
    OutsideDomain { t: f64, lo: f64, hi: f64 },
    #[error("expected {expected} values but got {found}")]
    LengthMismatch { expected: usize, found: usize },
}

/// Basis settings without a domain, as they appear in model configuration.
/// Defaults: `q = 20`, cubic, second-order differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplineSettings {
    pub basis_dim: usize,
    pub degree: usize,
    pub penalty_order: usize,
}

impl Default for SplineSettings {
    fn default() -> Self {
        Self {
            basis_dim: 20,
            degree: 3,
            penalty_order: 2,
        }
    }
}

/// A concrete B-spline basis: equidistant interior knots on `domain` with
/// degree-many repeated boundary knots (clamped), `basis_dim` functions of the
/// given degree, and an `penalty_order`-th order difference penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasisSpec {
    domain: (f64, f64),
    basis_dim: usize,
    degree: usize,
    penalty_order: usize,
    knots: Vec<f64>,
}

impl SplineBasisSpec {
    pub fn new(
        domain: (f64, f64),
        basis_dim: usize,
        degree: usize,
        penalty_order: usize,
    ) -> Result<Self, SplineError> {
        if domain.1 <= domain.0 {
            return Err(SplineError::EmptyDomain(domain.0, domain.1));
        }
        if basis_dim < degree + 1 {
            return Err(SplineError::BasisTooSmall {
                q: basis_dim,
                min: degree + 1,
            });
        }
        if penalty_order == 0 {
            return Err(SplineError::ZeroPenaltyOrder);
        }
        if basis_dim < penalty_order + 1 {
            return Err(SplineError::PenaltyTooLarge {
                q: basis_dim,
                order: penalty_order,
            });
        }
        // q + degree + 1 knots: degree+1 copies of each boundary plus
        // q - degree - 1 equidistant interior knots.
        let (lo, hi) = domain;
        let intervals = basis_dim - degree;
        let step = (hi - lo) / intervals as f64;
        let mut knots = Vec::with_capacity(basis_dim + degree + 1);
        for _ in 0..=degree {
            knots.push(lo);
        }
        for k in 1..intervals {
            knots.push(lo + step * k as f64);
        }
        for _ in 0..=degree {
            knots.push(hi);
        }
        Ok(Self {
            domain,
            basis_dim,
            degree,
            penalty_order,
            knots,
        })
    }

    pub fn from_settings(domain: (f64, f64), settings: &SplineSettings) -> Result<Self, SplineError> {
        Self::new(
            domain,
            settings.basis_dim,
            settings.degree,
            settings.penalty_order,
        )
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn basis_dim(&self) -> usize {
        self.basis_dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn penalty_order(&self) -> usize {
        self.penalty_order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn check_domain(&self, t: f64) -> Result<(), SplineError> {
        let (lo, hi) = self.domain;
        if !t.is_finite() || t < lo || t > hi {
            return Err(SplineError::OutsideDomain { t, lo, hi });
        }
        Ok(())
    }

    /// Index of the knot span containing `t`: the largest `mu` with
    /// `knots[mu] <= t < knots[mu+1]`, with `t = hi` assigned to the last
    /// nonempty span so the closed right boundary evaluates correctly.
    fn span(&self, t: f64) -> usize {
        let d = self.degree;
        let q = self.basis_dim;
        if t >= self.domain.1 {
            return q - 1;
        }
        let mut lo = d;
        let mut hi = q;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Evaluates all `q` basis functions at `t` (Cox–de Boor recursion).
    ///
    /// Entries are nonnegative, at most `degree + 1` are nonzero, and they sum
    /// to one everywhere on the closed domain. Extrapolation is refused.
    pub fn basis_row(&self, t: f64) -> Result<Vec<f64>, SplineError> {
        self.check_domain(t)?;
        let d = self.degree;
        let mu = self.span(t);
        // Local nonzero values N[0..=d] = B_{mu-d..=mu}(t), built degree by degree.
        let mut values = vec![0.0; d + 1];
        values[0] = 1.0;
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        for j in 1..=d {
            left[j] = t - self.knots[mu + 1 - j];
            right[j] = self.knots[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let term = if denom == 0.0 { 0.0 } else { values[r] / denom };
                values[r] = saved + right[r + 1] * term;
                saved = left[j - r] * term;
            }
            values[j] = saved;
        }
        let mut row = vec![0.0; self.basis_dim];
        for (k, v) in values.iter().enumerate() {
            row[mu - d + k] = *v;
        }
        Ok(row)
    }

    /// The difference-penalty matrix `D = Delta_m' Delta_m` for this basis.
    pub fn penalty_matrix(&self) -> Result<PenaltyMatrix, SplineError> {
        PenaltyMatrix::difference(self.basis_dim, self.penalty_order)
    }
}

/// Symmetric positive semidefinite penalty `D = Delta_m' Delta_m`, where
/// `Delta_m` is the `m`-th order difference operator on `q` coefficients.
/// Its null space has dimension exactly `m` (discrete polynomials of degree
/// below `m`).
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    matrix: DMatrix<f64>,
    order: usize,
}

impl PenaltyMatrix {
    pub fn difference(q: usize, order: usize) -> Result<Self, SplineError> {
        if order == 0 {
            return Err(SplineError::ZeroPenaltyOrder);
        }
        if q < order + 1 {
            return Err(SplineError::PenaltyTooLarge { q, order });
        }
        // Rows of Delta_m: signed binomial coefficients.
        let mut coeffs = vec![0.0f64; order + 1];
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = binomial(order, k) * if (order - k) % 2 == 0 { 1.0 } else { -1.0 };
        }
        let rows = q - order;
        let mut delta = DMatrix::zeros(rows, q);
        for i in 0..rows {
            for (k, c) in coeffs.iter().enumerate() {
                delta[(i, i + k)] = *c;
            }
        }
        Ok(Self {
            matrix: delta.transpose() * delta,
            order,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Rank of the penalty: `q - m`.
    pub fn rank(&self) -> usize {
        self.dim() - self.order
    }

    /// The quadratic form `a' D a`.
    pub fn quadratic_form(&self, a: &[f64]) -> f64 {
        let q = self.dim();
        debug_assert_eq!(a.len(), q);
        let mut total = 0.0;
        for i in 0..q {
            let mut row = 0.0;
            for j in 0..q {
                row += self.matrix[(i, j)] * a[j];
            }
            total += a[i] * row;
        }
        total
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut out = 1.0f64;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

/// Expands scalar covariate values into time-varying design columns: row `r`
/// of the result is `values[r] * B(times[r])`, so the linear predictor
/// contribution under coefficients `a` equals `theta(t) * s` with
/// `theta(t) = B(t) a`.
pub fn expand_time_varying(
    spec: &SplineBasisSpec,
    values: &[f64],
    times: &[f64],
) -> Result<Vec<Vec<f64>>, SplineError> {
    if values.len() != times.len() {
        return Err(SplineError::LengthMismatch {
            expected: times.len(),
            found: values.len(),
        });
    }
    values
        .iter()
        .zip(times)
        .map(|(&s, &t)| {
            let mut row = spec.basis_row(t)?;
            for b in &mut row {
                *b *= s;
            }
            Ok(row)
        })
        .collect()
}

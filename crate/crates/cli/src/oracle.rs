//! Declared reference values for a run and their comparisons.

use met_core::{NormedSpace, Subspace};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Reference values a run is checked against. Every present field becomes one or more
/// pass/fail checks in the report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Oracle {
    /// Where the reference values come from ("eigen", "birkhoff", "tail-norm", ...).
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponents: Option<ValuesOracle>,
    /// Expected number of distinct exponents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    /// Adjoint-cocycle exponents must match the primal ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_exponents: Option<Tolerance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slow_spaces: Vec<SpanOracle>,
    /// Splitting blocks, indexed from 1.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<SpanOracle>,
    /// Bound on `grassmann_distance(Z_l + V_{l+1}, V_l)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct_sum: Option<f64>,
    /// Bound on the distance between the adjoint-derived fast spaces and the images of the
    /// leading consistent vectors of the past product.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duality: Option<f64>,
    /// Decay slopes must be at most `-(gap - margin)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cauchy_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<KappaOracle>,
    /// Head exponents must match a head-only run within this many combined standard errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_match: Option<f64>,
    /// Restricted-cocycle exponents must match the spectrum tail.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reduced: bool,
    /// Every volume inequality must hold on the generator.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inequalities: bool,
    /// The spectrum recomputed in the Euclidean norm must agree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_invariance: Option<Tolerance>,
    /// The excess-growth series must pass and the linear control must fail.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub temperedness: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    /// Absolute tolerance.
    #[serde(default)]
    pub tolerance: f64,
    /// Additional allowance in standard errors.
    #[serde(default)]
    pub se_factor: f64,
}

impl Tolerance {
    pub fn allowance(&self, se: f64) -> f64 {
        let se = if se.is_finite() { se } else { 0.0 };
        self.tolerance + self.se_factor * se
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuesOracle {
    pub values: Vec<f64>,
    #[serde(default)]
    pub tolerance: f64,
    #[serde(default)]
    pub se_factor: f64,
}

impl ValuesOracle {
    pub fn tol(&self) -> Tolerance {
        Tolerance {
            tolerance: self.tolerance,
            se_factor: self.se_factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanOracle {
    pub level: usize,
    /// Spanning vectors.
    pub span: Vec<Vec<f64>>,
    pub tolerance: f64,
}

impl SpanOracle {
    pub fn subspace(&self, space: NormedSpace) -> Result<Subspace, String> {
        let vs: Vec<DVector<f64>> = self
            .span
            .iter()
            .map(|v| DVector::from_column_slice(v))
            .collect();
        Subspace::span(space, &vs).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KappaOracle {
    pub value: f64,
    pub tolerance: f64,
    /// Exponents above `value + margin` are counted and must equal the head dimension.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    0.1
}

impl Oracle {
    pub fn validate(&self, dim: usize) -> Result<(), String> {
        if self.kind.trim().is_empty() {
            return Err("oracle kind must be named".into());
        }
        if let Some(e) = &self.exponents {
            if e.values.is_empty() || e.values.len() > dim {
                return Err(format!(
                    "oracle lists {} exponents for dimension {dim}",
                    e.values.len()
                ));
            }
        }
        for s in self.slow_spaces.iter().chain(&self.blocks) {
            if s.level == 0 {
                return Err("levels and blocks are numbered from 1".into());
            }
            if s.span.iter().any(|v| v.len() != dim) {
                return Err(format!(
                    "span vectors for level {} must have {dim} entries",
                    s.level
                ));
            }
        }
        Ok(())
    }
}

/// One declared comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    #[serde(with = "met_core::serde_ext::float")]
    pub value: f64,
    #[serde(with = "met_core::serde_ext::float")]
    pub expected: f64,
    #[serde(with = "met_core::serde_ext::float")]
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleCheck {
    /// `|value - expected| <= tolerance`, with equal infinities passing.
    pub fn close(name: impl Into<String>, value: f64, expected: f64, tolerance: f64) -> Self {
        let pass = value == expected || (value - expected).abs() <= tolerance;
        OracleCheck {
            name: name.into(),
            value,
            expected,
            tolerance,
            pass,
        }
    }

    /// `value <= bound`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        OracleCheck {
            name: name.into(),
            value,
            expected: bound,
            tolerance: 0.0,
            pass: value <= bound,
        }
    }

    pub fn flag(name: impl Into<String>, pass: bool) -> Self {
        let v = if pass { 1.0 } else { 0.0 };
        OracleCheck {
            name: name.into(),
            value: v,
            expected: 1.0,
            tolerance: 0.0,
            pass,
        }
    }

    /// A check that could not be evaluated.
    pub fn missing(name: impl Into<String>) -> Self {
        OracleCheck {
            name: name.into(),
            value: f64::NAN,
            expected: f64::NAN,
            tolerance: 0.0,
            pass: false,
        }
    }
}

//! Experiment configuration files.

use std::path::Path;

use met_core::cocycle::{BaseProcess, Generator, VolumeRoute};
use met_core::volume::matrix_from_rows;
use met_core::{Exponent, NormedSpace};
use serde::{Deserialize, Serialize};

use crate::oracle::Oracle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub space: SpaceConfig,
    pub base: BaseProcess,
    pub generator: GeneratorConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Oracle>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub dim: usize,
    pub p: Exponent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// One row-major matrix per symbol.
    pub matrices: Vec<Vec<Vec<f64>>>,
    /// Dimension of the leading head block when the matrices are block diagonal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_dim: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_grid: Vec<usize>,
    #[serde(default = "one")]
    pub n_samples: usize,
    /// Number of exponents to estimate (defaults to the dimension).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kmax: Option<usize>,
    #[serde(default = "default_gap")]
    pub gap_threshold: f64,
    /// Rate slack; defaults to a tenth of the smallest exponent gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Draw two-sided trajectories and compute the splitting.
    #[serde(default = "yes")]
    pub two_sided: bool,
    /// Product lengths for the filtration (defaults to `1..=20`, shortened when the
    /// exponent spread would exhaust floating-point resolution).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filtration_grid: Option<Vec<usize>>,
    /// Also estimate the spectrum of the adjoint cocycle.
    #[serde(default)]
    pub dual_spectrum: bool,
    #[serde(default = "default_route")]
    pub route: VolumeRoute,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced: Option<ReducedConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperedness: Option<TemperednessConfig>,
    /// Highest order for the volume-inequality suite on the generator (defaults to
    /// `min(3, dim)`; 0 skips the suite).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inequality_kmax: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedConfig {
    /// Levels to restrict to (defaults to every level past the first).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<usize>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookahead: Option<usize>,
    #[serde(default = "default_reduced_tol")]
    pub tolerance: f64,
    #[serde(default = "default_residual")]
    pub residual_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperednessConfig {
    pub length: usize,
    #[serde(default = "default_tempered_threshold")]
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_dir(),
            formats: default_formats(),
        }
    }
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_gap() -> f64 {
    0.05
}
fn default_route() -> VolumeRoute {
    VolumeRoute::Auto
}
fn default_steps() -> usize {
    50
}
fn default_reduced_tol() -> f64 {
    2e-2
}
fn default_residual() -> f64 {
    1e-6
}
fn default_tempered_threshold() -> f64 {
    0.05
}
fn default_dir() -> String {
    "out".into()
}
fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            ConfigError(format!(
                "line {}, column {}: {}",
                e.line(),
                e.column(),
                strip_position(&e)
            ))
        })?;
        cfg.validate().map_err(|msg| {
            let line = locate(text, &msg.0);
            ConfigError(match line {
                Some(l) => format!("line {l}: {}", msg.1),
                None => msg.1,
            })
        })?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn normed_space(&self) -> NormedSpace {
        NormedSpace::new(self.space.dim, self.space.p).expect("validated")
    }

    pub fn generator(&self) -> Generator {
        build_generator(self).expect("validated")
    }

    pub fn kmax(&self) -> usize {
        self.run.kmax.unwrap_or(self.space.dim)
    }

    /// Checks cross-field consistency. Errors carry the key to point at.
    fn validate(&self) -> Result<(), (&'static str, String)> {
        let d = self.space.dim;
        NormedSpace::new(d, self.space.p).map_err(|e| ("\"space\"", e.to_string()))?;
        build_generator(self).map_err(|e| ("\"generator\"", e))?;
        self.base
            .validate()
            .map_err(|e| ("\"base\"", e.to_string()))?;
        if self.base.alphabet_size() != self.generator.matrices.len() {
            return Err((
                "\"base\"",
                format!(
                    "base has {} symbols but the generator has {} matrices",
                    self.base.alphabet_size(),
                    self.generator.matrices.len()
                ),
            ));
        }
        let g = &self.run.n_grid;
        if g.is_empty() || g[0] == 0 || g.windows(2).any(|w| w[1] <= w[0]) {
            return Err((
                "\"n_grid\"",
                "n_grid must be strictly increasing positive lengths".into(),
            ));
        }
        if let Some(f) = &self.run.filtration_grid {
            if f.is_empty() || f[0] == 0 || f.windows(2).any(|w| w[1] <= w[0]) {
                return Err((
                    "\"filtration_grid\"",
                    "filtration_grid must be strictly increasing positive lengths".into(),
                ));
            }
        }
        if self.run.n_samples == 0 {
            return Err(("\"n_samples\"", "n_samples must be at least 1".into()));
        }
        let k = self.kmax();
        if k == 0 || k > d {
            return Err(("\"kmax\"", format!("kmax must lie in 1..={d}, got {k}")));
        }
        if !(self.run.gap_threshold > 0.0) {
            return Err(("\"gap_threshold\"", "gap_threshold must be positive".into()));
        }
        if let Some(e) = self.run.epsilon {
            if !(e > 0.0) {
                return Err(("\"epsilon\"", "epsilon must be positive".into()));
            }
        }
        if let Some(t) = &self.run.temperedness {
            if t.length < 2 {
                return Err((
                    "\"temperedness\"",
                    "temperedness length must be at least 2".into(),
                ));
            }
        }
        if let Some(r) = &self.run.reduced {
            if r.steps == 0 {
                return Err(("\"reduced\"", "reduced steps must be positive".into()));
            }
        }
        if self.outputs.formats.is_empty() {
            return Err((
                "\"formats\"",
                "at least one output format is required".into(),
            ));
        }
        if let Some(o) = &self.oracle {
            o.validate(d).map_err(|e| ("\"oracle\"", e))?;
        }
        Ok(())
    }
}

fn build_generator(cfg: &ExperimentConfig) -> Result<Generator, String> {
    let d = cfg.space.dim;
    let space = NormedSpace::new(d, cfg.space.p).map_err(|e| e.to_string())?;
    let mut ms = Vec::with_capacity(cfg.generator.matrices.len());
    for (i, rows) in cfg.generator.matrices.iter().enumerate() {
        let m = matrix_from_rows(rows).map_err(|e| format!("matrix {i}: {e}"))?;
        if m.nrows() != d || m.ncols() != d {
            return Err(format!(
                "matrix {i} is {}x{}, expected {d}x{d}",
                m.nrows(),
                m.ncols()
            ));
        }
        ms.push(m);
    }
    Generator::with_split(space, ms, cfg.generator.head_dim).map_err(|e| e.to_string())
}

fn strip_position(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.rfind(" at line ") {
        Some(i) => s[..i].to_string(),
        None => s,
    }
}

/// 1-based line of the first occurrence of `needle`.
fn locate(text: &str, needle: &str) -> Option<usize> {
    text.lines().position(|l| l.contains(needle)).map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "space": {"dim": 2, "p": "inf"},
  "base": {"kind": "fixed"},
  "generator": {"matrices": [[[2, 1], [0, 1]]]},
  "run": {"n_grid": [10, 20]}
}"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert!(c.space.p.is_inf());
        assert_eq!(c.run.n_samples, 1);
        assert_eq!(c.kmax(), 2);
        assert!(c.run.two_sided);
        assert_eq!(c.outputs.formats, vec![Format::Json, Format::Csv]);
        let again = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let text = MINIMAL.replace(
            "\"n_grid\": [10, 20]",
            "\"n_grid\": [10, 20], \"nsamples\": 3",
        );
        let e = ExperimentConfig::from_json(&text).unwrap_err().0;
        assert!(e.starts_with("line 5"), "{e}");
        assert!(e.contains("nsamples"), "{e}");
    }

    #[test]
    fn inconsistent_fields_are_rejected() {
        let text = MINIMAL.replace("[10, 20]", "[20, 10]");
        let e = ExperimentConfig::from_json(&text).unwrap_err().0;
        assert!(e.starts_with("line 5") && e.contains("increasing"), "{e}");
        let text = MINIMAL.replace("\"dim\": 2", "\"dim\": 3");
        let e = ExperimentConfig::from_json(&text).unwrap_err().0;
        assert!(e.starts_with("line 4") && e.contains("expected 3x3"), "{e}");
        let text = MINIMAL.replace(
            "\"kind\": \"fixed\"",
            "\"kind\": \"bernoulli\", \"probabilities\": [0.5, 0.5], \"seed\": 1",
        );
        let e = ExperimentConfig::from_json(&text).unwrap_err().0;
        assert!(e.contains("2 symbols"), "{e}");
    }
}

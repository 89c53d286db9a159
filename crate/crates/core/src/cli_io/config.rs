//! Analysis configuration, read from a TOML document.
//!
//! ```toml
//! input = "panel.csv"          # relative to the config file
//! cluster = "country"          # optional; rows are their own clusters otherwise
//! output = "out"               # relative to the config file
//!
//! [bootstrap]
//! iterations = 10000
//! seed = 20240101
//! unit = "cluster"             # or "row"
//! engine = { kind = "multinomial" }
//!
//! [test]
//! h = 0.0
//! alpha = 0.05
//! norm = "difference"          # "identity", or { matrix = [[...], ...] }
//! mc_draws = 20000
//! seed = 7
//!
//! [[comparison]]
//! kind = "regression"
//! name = "ols"
//! model = { outcome = "y", regressors = ["dem", "y_l1"], fixed_effects = ["country", "year"] }
//! coefficients = ["dem", "y_l1"]
//! derived = ["dem", "y_l1", "y_l2", "y_l3", "y_l4"]
//! baseline = { kind = "all_ones" }
//! adjusted = { kind = "residual_trim", multiplier = 1.96 }
//!
//! [[comparison]]
//! kind = "lstat"
//! name = "mean_x"
//! column = "x"
//! baseline = { kind = "all_ones" }
//! adjusted = { kind = "quantile_trim", columns = ["x"], lower_q = 0.02, upper_q = 0.98 }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bootstrap::{BootstrapPlan, Engine, ResampleUnit};
use crate::error::{Error, Result};
use crate::lstat::{LStatSpec, Transform};
use crate::mc_oracle::DgpSpec;
use crate::regress::ModelSpec;
use crate::robustness::TestSpec;
use crate::weights::WeightScheme;

fn default_iterations() -> usize {
    10_000
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub unit: ResampleUnit,
    #[serde(default)]
    pub engine: Engine,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            iterations: default_iterations(),
            seed: 0,
            unit: ResampleUnit::Cluster,
            engine: Engine::Multinomial,
        }
    }
}

impl BootstrapConfig {
    pub fn plan(&self) -> BootstrapPlan {
        BootstrapPlan {
            iterations: self.iterations,
            seed: self.seed,
            unit: self.unit,
            engine: self.engine,
        }
    }
}

/// Two estimators of the same parameters: `baseline` and `adjusted`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Comparison {
    Regression {
        name: String,
        model: ModelSpec,
        /// Coefficients to report; all regressors when empty.
        #[serde(default)]
        coefficients: Vec<String>,
        /// Treatment coefficient followed by the four lag coefficients;
        /// adds long-run effect, 25-period effect and persistence.
        #[serde(default)]
        derived: Option<[String; 5]>,
        baseline: WeightScheme,
        adjusted: WeightScheme,
    },
    Lstat {
        name: String,
        column: String,
        #[serde(default)]
        transform: Transform,
        baseline: WeightScheme,
        adjusted: WeightScheme,
    },
}

impl Comparison {
    pub fn name(&self) -> &str {
        match self {
            Comparison::Regression { name, .. } | Comparison::Lstat { name, .. } => name,
        }
    }

    /// Columns that must be numeric and present.
    pub fn columns(&self) -> Vec<String> {
        let mut out = Vec::new();
        let add_scheme = |s: &WeightScheme, out: &mut Vec<String>| match s {
            WeightScheme::QuantileTrim { columns, .. } => out.extend(columns.iter().cloned()),
            WeightScheme::Winsorize { column, .. } => out.push(column.clone()),
            WeightScheme::ResidualTrim { model: Some(m), .. } => out.extend(model_columns(m)),
            _ => {}
        };
        match self {
            Comparison::Regression {
                model,
                baseline,
                adjusted,
                ..
            } => {
                out.extend(model_columns(model));
                add_scheme(baseline, &mut out);
                add_scheme(adjusted, &mut out);
            }
            Comparison::Lstat {
                column,
                baseline,
                adjusted,
                ..
            } => {
                out.push(column.clone());
                add_scheme(baseline, &mut out);
                add_scheme(adjusted, &mut out);
            }
        }
        out
    }

    /// Fills in defaults: a residual-trim scheme without a model uses the
    /// comparison's model, and empty coefficient lists become all
    /// regressors.
    pub fn resolved(mut self) -> Result<Self> {
        match &mut self {
            Comparison::Regression {
                name,
                model,
                coefficients,
                derived,
                baseline,
                adjusted,
            } => {
                for scheme in [&mut *baseline, &mut *adjusted] {
                    if let WeightScheme::ResidualTrim {
                        model: m @ None, ..
                    } = scheme
                    {
                        *m = Some(model.clone());
                    }
                    scheme.validate()?;
                }
                if coefficients.is_empty() {
                    *coefficients = model.regressors.clone();
                }
                for c in coefficients.iter().chain(derived.iter().flatten()) {
                    if !model.regressors.contains(c) {
                        return Err(Error::Config(format!(
                            "comparison `{name}`: coefficient `{c}` is not a regressor"
                        )));
                    }
                }
            }
            Comparison::Lstat {
                name,
                baseline,
                adjusted,
                transform,
                ..
            } => {
                for scheme in [&*baseline, &*adjusted] {
                    if let WeightScheme::ResidualTrim { model: None, .. } = scheme {
                        return Err(Error::Config(format!(
                            "comparison `{name}`: residual_trim needs a model"
                        )));
                    }
                    scheme.validate()?;
                }
                transform.validate()?;
            }
        }
        Ok(self)
    }

    pub fn lstat_specs(&self) -> Option<[LStatSpec; 2]> {
        match self {
            Comparison::Lstat {
                column,
                transform,
                baseline,
                adjusted,
                ..
            } => Some([
                LStatSpec::new(column, transform.clone(), baseline.clone()),
                LStatSpec::new(column, transform.clone(), adjusted.clone()),
            ]),
            Comparison::Regression { .. } => None,
        }
    }
}

fn model_columns(m: &ModelSpec) -> Vec<String> {
    std::iter::once(&m.outcome)
        .chain(&m.regressors)
        .chain(&m.instruments)
        .chain(&m.fixed_effects)
        .cloned()
        .collect()
}

/// Monte Carlo study run by the `mc` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Statistics whose covariance is estimated by brute force.
    #[serde(default)]
    pub statistics: Vec<LStatSpec>,
    /// Comparison whose test size is estimated; uses `[bootstrap]` (per
    /// replication) and `[test]`.
    #[serde(default)]
    pub size: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub cluster: Option<String>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub test: TestSpec,
    #[serde(default, rename = "comparison")]
    pub comparisons: Vec<Comparison>,
    #[serde(default)]
    pub mc: Option<McConfig>,
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: AnalysisConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validated()
    }

    /// Reads a config file; relative `input` and `output` paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(input) = &cfg.input {
            if input.is_relative() {
                cfg.input = Some(base.join(input));
            }
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    fn validated(mut self) -> Result<Self> {
        self.comparisons = self
            .comparisons
            .into_iter()
            .map(Comparison::resolved)
            .collect::<Result<_>>()?;
        let mut names: Vec<&str> = self.comparisons.iter().map(Comparison::name).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!(
                "duplicate comparison name `{}`",
                w[0]
            )));
        }
        for name in &names {
            if name.is_empty()
                || !name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::Config(format!(
                    "comparison name `{name}` must be nonempty ASCII letters, digits, `_` or `-`"
                )));
            }
        }
        if let Some(mc) = &mut self.mc {
            if let Some(c) = mc.size.take() {
                mc.size = Some(c.resolved()?);
            }
        }
        self.bootstrap
            .plan()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.test
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(self)
    }

    /// Every numeric column the comparisons need.
    pub fn required_columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self
            .comparisons
            .iter()
            .flat_map(Comparison::columns)
            .collect();
        cols.retain(|c| Some(c) != self.cluster.as_ref());
        let mut seen = std::collections::HashSet::new();
        cols.retain(|c| seen.insert(c.clone()));
        cols
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
input = "panel.csv"
cluster = "country"

[bootstrap]
iterations = 200
seed = 3

[[comparison]]
kind = "regression"
name = "ols"
model = { outcome = "y", regressors = ["d", "y_l1"], fixed_effects = ["country"] }
baseline = { kind = "all_ones" }
adjusted = { kind = "residual_trim", multiplier = 1.96 }

[[comparison]]
kind = "lstat"
name = "mean_x"
column = "x"
baseline = { kind = "all_ones" }
adjusted = { kind = "quantile_trim", columns = ["x"], lower_q = 0.02, upper_q = 0.98 }
"#;

    #[test]
    fn parses_example() {
        let cfg = AnalysisConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.bootstrap.iterations, 200);
        assert_eq!(cfg.test.alpha, 0.05);
        assert_eq!(cfg.comparisons.len(), 2);
        match &cfg.comparisons[0] {
            Comparison::Regression {
                coefficients,
                adjusted,
                ..
            } => {
                assert_eq!(coefficients, &["d", "y_l1"]);
                assert!(matches!(
                    adjusted,
                    WeightScheme::ResidualTrim { model: Some(_), .. }
                ));
            }
            _ => panic!("expected regression"),
        }
        assert_eq!(cfg.required_columns(), ["y", "d", "y_l1", "x"]);
    }

    #[test]
    fn defaults_follow_the_appendix() {
        let cfg = AnalysisConfig::from_toml("").unwrap();
        assert_eq!(cfg.bootstrap.iterations, 10_000);
        assert_eq!(cfg.test.h, 0.0);
    }

    #[test]
    fn rejects_unknown_coefficient_and_keys() {
        let bad = EXAMPLE.replace("name = \"ols\"", "name = \"ols\"\ncoefficients = [\"z\"]");
        assert!(matches!(
            AnalysisConfig::from_toml(&bad),
            Err(Error::Config(_))
        ));
        let typo = EXAMPLE.replace("iterations = 200", "iteration = 200");
        assert!(matches!(
            AnalysisConfig::from_toml(&typo),
            Err(Error::Config(_))
        ));
        let dup = EXAMPLE.replace("name = \"mean_x\"", "name = \"ols\"");
        assert!(matches!(
            AnalysisConfig::from_toml(&dup),
            Err(Error::Config(_))
        ));
    }
}

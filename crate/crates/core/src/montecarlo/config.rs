//! Experiment configuration: a TOML document with fixed sections, unknown keys
//! rejected, plus `section.key=value` overrides applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::BandwidthSchedule;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::processes::{AutoregressiveModel, DensityFn, ErrorProcessSpec, ModelSpec, MIN_BURN_IN};

/// Half-width of the uniform perturbation of the true parameter used as the
/// Gauss-Newton starting point.
pub const START_PERTURBATION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub errors: ErrorsSection,
    #[serde(default)]
    pub null: NullSection,
    #[serde(default)]
    pub test: TestSection,
    #[serde(default)]
    pub bandwidth: BandwidthSchedule,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub sample: SampleSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorsSection {
    pub marginal: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default)]
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NullSection {
    pub density: String,
    pub params: Vec<f64>,
}

impl Default for NullSection {
    fn default() -> Self {
        NullSection { density: "std_normal".into(), params: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestSection {
    pub kernel: String,
    pub level: f64,
}

impl Default for TestSection {
    fn default() -> Self {
        TestSection { kernel: "epanechnikov".into(), level: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeChoice {
    Null,
    Alternative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub master_seed: u64,
    pub regime: RegimeChoice,
    pub burn_in: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            n_grid: vec![500, 1000, 2000],
            replications: 500,
            master_seed: 1,
            regime: RegimeChoice::Null,
            burn_in: MIN_BURN_IN,
        }
    }
}

/// A single series for the `simulate`, `fit` and `test` commands: simulated
/// at `(n, seed)` or read from `data`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub n: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection { n: 1000, seed: 1, data: None }
    }
}

/// Typed view of a validated configuration.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub model: ModelSpec,
    pub theta: Vec<f64>,
    pub errors: ErrorProcessSpec,
    pub f0: DensityFn,
    pub kernel: KernelSpec,
    pub level: f64,
    pub schedule: BandwidthSchedule,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides with dotted keys, then
    /// deserializes. Values are read as TOML and fall back to plain strings.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_name(&self.model.name).map_err(as_config)
    }

    pub fn error_spec(&self) -> Result<ErrorProcessSpec> {
        let marginal = DensityFn::from_name(&self.errors.marginal, &self.errors.params).map_err(as_config)?;
        ErrorProcessSpec::new(marginal, self.errors.rho).map_err(as_config)
    }

    pub fn null_density(&self) -> Result<DensityFn> {
        DensityFn::from_name(&self.null.density, &self.null.params).map_err(as_config)
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::from_name(&self.test.kernel).map_err(as_config)
    }

    /// Checks everything except the Monte Carlo grid.
    pub fn resolve(&self) -> Result<Resolved> {
        let model = self.model_spec()?;
        AutoregressiveModel::<f64>::check_admissible(&model, &self.model.theta).map_err(as_config)?;
        let errors = self.error_spec()?;
        let f0 = self.null_density()?;
        let kernel = self.kernel()?;
        let level = self.test.level;
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!("test.level must lie in (0, 1), got {level}")));
        }
        self.bandwidth.validate()?;
        Ok(Resolved { model, theta: self.model.theta.clone(), errors, f0, kernel, level, schedule: self.bandwidth })
    }

    /// Full validation for a Monte Carlo run.
    pub fn validate_experiment(&self) -> Result<Resolved> {
        let r = self.resolve()?;
        let e = &self.experiment;
        if e.n_grid.is_empty() {
            return Err(Error::Config("experiment.n_grid is empty".into()));
        }
        if e.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("experiment.n_grid must be strictly increasing, got {:?}", e.n_grid)));
        }
        let q = AutoregressiveModel::<f64>::dim(&r.model);
        if e.n_grid[0] < 10 * q {
            return Err(Error::Config(format!(
                "experiment.n_grid entries must be at least {} for a {q}-parameter model",
                10 * q
            )));
        }
        if e.replications == 0 {
            return Err(Error::Config("experiment.replications must be positive".into()));
        }
        if e.burn_in < MIN_BURN_IN {
            return Err(Error::Config(format!("experiment.burn_in must be at least {MIN_BURN_IN}, got {}", e.burn_in)));
        }
        if e.regime == RegimeChoice::Alternative && r.errors.marginal == r.f0 {
            return Err(Error::Config(
                "regime = \"alternative\" needs an error marginal different from the null density".into(),
            ));
        }
        check_start_box(&r.model, &r.theta)?;
        Ok(r)
    }
}

/// Every starting point `theta + U(-0.1, 0.1)^q` must be admissible. The
/// admissible regions are convex, so the corners of the box suffice.
fn check_start_box(model: &ModelSpec, theta: &[f64]) -> Result<()> {
    let q = theta.len();
    for mask in 0..(1usize << q) {
        let corner: Vec<f64> = theta
            .iter()
            .enumerate()
            .map(|(j, t)| if mask >> j & 1 == 1 { t + START_PERTURBATION } else { t - START_PERTURBATION })
            .collect();
        if let Err(e) = AutoregressiveModel::<f64>::check_admissible(model, &corner) {
            return Err(Error::Config(format!(
                "starting points within +-{START_PERTURBATION} of theta leave the admissible region: {e}"
            )));
        }
    }
    Ok(())
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) =
        item.split_once('=').ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("nonempty");
    let mut cursor = table;
    for part in parents {
        let entry = cursor.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[model]
name = "linear_ar"
theta = [0.5]

[errors]
marginal = "std_normal"
"#;

    #[test]
    fn defaults_fill_optional_sections() {
        let c = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(c.test.kernel, "epanechnikov");
        assert_eq!(c.bandwidth.gamma, 0.2);
        assert_eq!(c.experiment.burn_in, 500);
        c.validate_experiment().unwrap();
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_toml_str(&format!("{BASE}\n[test]\nkernal = \"quartic\"\n")).unwrap_err();
        assert!(err.to_string().contains("kernal"), "{err}");
        let err = ExperimentConfig::with_overrides(BASE, &["experiment.replicates=3".into()]).unwrap_err();
        assert!(err.to_string().contains("replicates"), "{err}");
    }

    #[test]
    fn overrides_apply_with_types() {
        let c = ExperimentConfig::with_overrides(
            BASE,
            &[
                "experiment.n_grid=[100, 200, 300]".into(),
                "errors.rho=0.5".into(),
                "test.kernel=quartic".into(),
                "experiment.regime=alternative".into(),
                "errors.marginal=laplace_unit_var".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.experiment.n_grid, vec![100, 200, 300]);
        assert_eq!(c.errors.rho, 0.5);
        assert_eq!(c.test.kernel, "quartic");
        c.validate_experiment().unwrap();
        assert!(ExperimentConfig::with_overrides(BASE, &["novalue".into()]).is_err());
    }

    #[test]
    fn invalid_settings_rejected() {
        let bad = |o: &str| ExperimentConfig::with_overrides(BASE, &[o.into()]).unwrap().validate_experiment();
        let gamma = bad("bandwidth.gamma=0.6").unwrap_err();
        assert!(matches!(gamma, Error::Config(_)));
        assert!(gamma.to_string().contains("n h^2"));
        assert!(bad("model.theta=[1.0]").is_err());
        assert!(bad("model.theta=[0.95]").is_err());
        assert!(bad("experiment.n_grid=[200, 100]").is_err());
        assert!(bad("errors.rho=1.0").is_err());
        assert!(bad("test.level=1.5").is_err());
        assert!(bad("test.kernel=gaussian").is_err());
        assert!(bad("experiment.regime=alternative").is_err());
        assert!(bad("experiment.burn_in=10").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::with_overrides(BASE, &["sample.data=\"obs.txt\"".into()]).unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }
}

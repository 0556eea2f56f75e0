//! Experiment specifications: a `[batch]` table and one `[scenario.NAME]`
//! table per run.
//!
//! ```toml
//! [batch]
//! model = "pendulum"
//!
//! [scenario.zoh]
//! prediction = "zoh"
//! h = "masp"
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Deserialize;

pub const PENDULUM_COMPARE: &str = include_str!("../../scenarios/pendulum_compare.toml");

/// Specs shipped with the binary, addressable by name. The second entry is a
/// legacy alias kept for existing scripts.
pub const BUNDLED_SPECS: &[(&str, &str)] = &[
    ("pendulum_compare", PENDULUM_COMPARE),
    ("pendulum_fig2", PENDULUM_COMPARE),
];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub batch: BatchSpec,
    /// Scenarios keyed by name; iteration is sorted by name.
    #[serde(default, rename = "scenario")]
    pub scenarios: BTreeMap<String, ScenarioSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub model: String,
    pub c: Option<f64>,
    pub sigma: Option<f64>,
    pub grid: Option<usize>,
    /// Constants manifest to pin; relative paths resolve against the spec
    /// file. Certified afresh when absent.
    pub constants: Option<PathBuf>,
    /// Output directory, overridden by the command line.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionName {
    Zoh,
    ScaledEuler,
    Rk4,
    LookupTable,
    ReferenceExact,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Event,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKeyword {
    /// The certified σ-MASP.
    Masp,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum StepSpec {
    Seconds(f64),
    Keyword(StepKeyword),
}

impl Default for StepSpec {
    fn default() -> Self {
        StepSpec::Keyword(StepKeyword::Masp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Convergence,
    Nonmonotone,
}

fn default_checks() -> Vec<CheckName> {
    vec![CheckName::Convergence, CheckName::Nonmonotone]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub prediction: PredictionName,
    pub euler_scale: Option<f64>,
    pub table_points: Option<usize>,
    pub reference_substeps: Option<usize>,
    #[serde(default)]
    pub mode: ModeName,
    pub x0: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    #[serde(default)]
    pub h: StepSpec,
    pub nu: Option<u64>,
    pub substeps: Option<usize>,
    pub decimation: Option<usize>,
    /// Write every n-th trace row to CSV (transmissions are always written).
    pub csv_stride: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub unsafe_h_override: bool,
    #[serde(default = "default_checks")]
    pub checks: Vec<CheckName>,
}

impl ExperimentSpec {
    /// Parses a spec; errors carry line and column.
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn bundled(name: &str) -> Option<&'static str> {
        BUNDLED_SPECS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_spec_parses() {
        let spec = ExperimentSpec::parse(PENDULUM_COMPARE).unwrap();
        assert_eq!(spec.batch.model, "pendulum");
        let names: Vec<&String> = spec.scenarios.keys().collect();
        assert_eq!(names.len(), 2);
        assert!(spec.scenarios.values().any(|s| s.prediction == PredictionName::Zoh));
        assert!(spec
            .scenarios
            .values()
            .any(|s| s.prediction == PredictionName::ScaledEuler && s.euler_scale == Some(1.05)));
    }

    #[test]
    fn defaults_and_step_forms() {
        let spec = ExperimentSpec::parse(
            "[batch]\nmodel = \"pendulum\"\n[scenario.a]\nprediction = \"rk4\"\n[scenario.b]\nprediction = \"zoh\"\nh = 1e-5\nmode = \"periodic\"\nchecks = []\n",
        )
        .unwrap();
        let a = &spec.scenarios["a"];
        assert_eq!(a.h, StepSpec::Keyword(StepKeyword::Masp));
        assert_eq!(a.mode, ModeName::Event);
        assert_eq!(a.checks, default_checks());
        let b = &spec.scenarios["b"];
        assert_eq!(b.h, StepSpec::Seconds(1e-5));
        assert_eq!(b.mode, ModeName::Periodic);
        assert!(b.checks.is_empty());
    }

    #[test]
    fn errors_report_line_numbers() {
        let err = ExperimentSpec::parse("[batch]\nmodel = \"pendulum\"\n\n[scenario.a]\nprediction = \"magic\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 5"), "{msg}");
        let err = ExperimentSpec::parse("[batch]\nmodel = \"pendulum\"\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn empty_scenario_list_is_allowed() {
        let spec = ExperimentSpec::parse("[batch]\nmodel = \"pendulum\"\n").unwrap();
        assert!(spec.scenarios.is_empty());
        assert!(ExperimentSpec::bundled("pendulum_compare").is_some());
        assert!(ExperimentSpec::bundled("nope").is_none());
    }
}

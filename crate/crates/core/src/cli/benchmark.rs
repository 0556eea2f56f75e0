//! Settings of the pendulum benchmark, embedded from
//! `scenarios/pendulum.toml`.

use serde::Deserialize;

pub const BENCHMARK_TOML: &str = include_str!("../../scenarios/pendulum.toml");

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookupTableSettings {
    pub points: usize,
    pub step: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumBenchmark {
    pub model: String,
    pub omega0: f64,
    pub c: f64,
    pub sigma: f64,
    pub grid: usize,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub euler_scale: f64,
    pub substeps: usize,
    pub gamma_rate: f64,
    pub lookup_table: LookupTableSettings,
}

impl PendulumBenchmark {
    pub fn load() -> Result<Self, toml::de::Error> {
        toml::from_str(BENCHMARK_TOML)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{pendulum_model, PENDULUM_LEVEL, PENDULUM_OMEGA0, PENDULUM_SIGMA};

    #[test]
    fn embedded_settings_parse_and_match_model_constants() {
        let b = PendulumBenchmark::load().unwrap();
        assert_eq!(b.model, "pendulum");
        assert_eq!(b.omega0, PENDULUM_OMEGA0);
        assert_eq!(b.c, PENDULUM_LEVEL);
        assert_eq!(b.sigma, PENDULUM_SIGMA);
        assert_eq!(b.x0.len(), 2);
    }

    #[test]
    fn recorded_gamma_rate_is_reproduced() {
        let b = PendulumBenchmark::load().unwrap();
        let rate = pendulum_model(b.omega0).unwrap().gamma().linear_rate().unwrap();
        assert!((rate - b.gamma_rate).abs() <= 1e-12 * b.gamma_rate, "{rate:.17e}");
    }

    #[test]
    fn initial_state_lies_in_level_set() {
        let b = PendulumBenchmark::load().unwrap();
        let m = pendulum_model(b.omega0).unwrap();
        assert!(m.v(&b.x0) <= b.c);
    }
}

//! TOML run configuration.
//!
//! ```toml
//! schema_version = 1
//! master_seed = 20240601
//!
//! [[sweep]]
//! name = "trust"              # optional, defaults to the experiment name
//! experiment = "trust_limit"  # mode_stability | gate_limit | trust_limit | retriever_limit
//! n_grid = [2000, 20000]      # default [2000, 20000, 200000]
//! beta = 0.6                  # k = ceil(n^beta); or give `k = [...]`
//! reps = 50                   # default 200
//! queries = [[0.0, 0.0]]      # or `sample_queries = 4`
//! zeta = 0.0                  # default 0
//! delta = 0.3                 # default 0.3
//! bandwidth = 1.0             # default 1
//!
//! [sweep.scenario]
//! dim = 2
//! num_labels = 3
//! input_law = { kind = "uniform_ball", radius = 1.0 }
//! conditional = { weights = [[3.0, 0.0], [-1.5, 2.6], [-1.5, -2.6]] }
//! ```
//!
//! Each sweep runs under its own seed, derived from `master_seed` and the
//! sweep's position in the file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{run_sweep, ExperimentKind, ExperimentReport, KRule, QuerySet, SweepConfig};
use crate::scenario::{Scenario, ScenarioSpec};
use crate::seed::{derive_seed, tag};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_N_GRID: [usize; 3] = [2_000, 20_000, 200_000];
pub const DEFAULT_BETA: f64 = 0.6;
pub const DEFAULT_REPS: u32 = 200;
pub const DEFAULT_DELTA: f64 = 0.3;

fn default_n_grid() -> Vec<usize> {
    DEFAULT_N_GRID.to_vec()
}

fn default_reps() -> u32 {
    DEFAULT_REPS
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_bandwidth() -> f64 {
    crate::retrieval::DEFAULT_BANDWIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    #[serde(rename = "sweep")]
    pub sweeps: Vec<SweepEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub experiment: ExperimentKind,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(default = "default_reps")]
    pub reps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_queries: Option<usize>,
    #[serde(default)]
    pub zeta: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    pub scenario: ScenarioSpec,
}

impl SweepEntry {
    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or(self.experiment.as_str())
    }
}

impl RunConfig {
    /// Parses and validates a TOML document. Parse errors carry the line and
    /// the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let config: RunConfig = serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configs serialize to TOML")
    }

    fn check(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "config schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.sweeps.is_empty() {
            return Err(Error::InvalidConfig("config defines no [[sweep]] tables".into()));
        }
        let mut names: Vec<&str> = self.sweeps.iter().map(SweepEntry::name).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig(format!("duplicate sweep name `{}`", w[0])));
        }
        self.sweep_configs().map(|_| ())
    }

    /// Resolves every sweep into a validated [`SweepConfig`].
    pub fn sweep_configs(&self) -> Result<Vec<SweepConfig>> {
        self.sweeps
            .iter()
            .enumerate()
            .map(|(i, entry)| {
                let name = entry.name().to_string();
                let ctx = |e: Error| Error::InvalidConfig(format!("sweep `{name}`: {e}"));
                let k_rule = match (entry.beta, &entry.k) {
                    (Some(_), Some(_)) => return Err(ctx(Error::InvalidConfig("give either `beta` or `k`, not both".into()))),
                    (None, Some(ks)) => KRule::Explicit(ks.clone()),
                    (beta, None) => KRule::Power { beta: beta.unwrap_or(DEFAULT_BETA) },
                };
                let queries = match (&entry.queries, entry.sample_queries) {
                    (Some(_), Some(_)) => {
                        return Err(ctx(Error::InvalidConfig("give either `queries` or `sample_queries`, not both".into())))
                    }
                    (Some(qs), None) => QuerySet::Explicit(qs.clone()),
                    (None, Some(count)) => QuerySet::Sampled { count },
                    (None, None) => return Err(ctx(Error::InvalidConfig("missing key `queries` or `sample_queries`".into()))),
                };
                let scenario = Scenario::new(entry.scenario.clone()).map_err(ctx)?;
                let config = SweepConfig {
                    name: name.clone(),
                    experiment: entry.experiment,
                    scenario,
                    n_grid: entry.n_grid.clone(),
                    k_rule,
                    reps: entry.reps,
                    queries,
                    zeta: entry.zeta,
                    delta: entry.delta,
                    bandwidth: entry.bandwidth,
                    master_seed: derive_seed(self.master_seed, i as u64, tag(b"sweep")),
                };
                config.validate()?;
                Ok(config)
            })
            .collect()
    }
}

/// Runs every sweep in file order. `threads = Some(1)` runs serially;
/// `None` uses one thread per core. Output does not depend on the choice.
pub fn run_config(config: &RunConfig, threads: Option<usize>) -> Result<Vec<ExperimentReport>> {
    let sweeps = config.sweep_configs()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter { name: "threads", reason: e.to_string() })?;
    pool.install(|| sweeps.iter().map(run_sweep).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
master_seed = 7

[[sweep]]
experiment = "trust_limit"
n_grid = [200]
k = [5]
reps = 3
queries = [[0.0, 0.0]]

[sweep.scenario]
dim = 2
num_labels = 2
input_law = { kind = "uniform_ball", radius = 1.0 }
conditional = { weights = [[1.0, 0.0], [-1.0, 0.0]] }
"#;

    #[test]
    fn parses_with_defaults() {
        let config = RunConfig::from_toml_str(MINIMAL).unwrap();
        let sweep = &config.sweeps[0];
        assert_eq!(sweep.name(), "trust_limit");
        assert_eq!(sweep.delta, 0.3);
        assert_eq!(sweep.bandwidth, 1.0);
        assert_eq!(sweep.zeta, 0.0);
        let resolved = config.sweep_configs().unwrap();
        assert_eq!(resolved[0].k_at(0), 5);
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace("experiment = \"trust_limit\"\n", "");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("experiment"), "{err}");
        let text = MINIMAL.replace("master_seed = 7\n", "");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("master_seed"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = MINIMAL.replace("reps = 3", "reps = = 3");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("line 9"), "{err}");
    }

    #[test]
    fn rejects_bad_schema_and_conflicts() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(Error::SchemaMismatch(_))));
        let text = MINIMAL.replace("k = [5]", "k = [5]\nbeta = 0.5");
        assert!(RunConfig::from_toml_str(&text).is_err());
        let text = MINIMAL.replace("k = [5]", "k = [200]");
        assert!(RunConfig::from_toml_str(&text).unwrap_err().to_string().contains("k = 200"));
    }

    #[test]
    fn toml_and_json_round_trip() {
        let config = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(RunConfig::from_toml_str(&config.to_toml_string()).unwrap(), config);
        let json = serde_json::to_value(&config).unwrap();
        assert_eq!(RunConfig::from_json_value(json).unwrap(), config);
    }

    #[test]
    fn runs_identically_on_any_pool() {
        let config = RunConfig::from_toml_str(MINIMAL).unwrap();
        let serial = run_config(&config, Some(1)).unwrap();
        let parallel = run_config(&config, Some(4)).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial[0].cells.len(), 1);
    }
}

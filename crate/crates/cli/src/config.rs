use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub n: usize,
    pub k: usize,
    pub t_max: usize,
    pub replicates: usize,
    pub seed_base: u64,
    pub seed_events: Vec<SeedEvent>,
    pub policy: PolicySpec,
    /// Event records (JSON lines); required for the llm policy.
    #[serde(default)]
    pub events_file: Option<PathBuf>,
    /// Cluster model used to label seed events without an explicit severity.
    #[serde(default)]
    pub cluster_model: Option<PathBuf>,
    /// Grouping used for group curves, group-rate tables and fit shares.
    #[serde(default)]
    pub grouping: Option<PathBuf>,
    #[serde(default = "default_bounds")]
    pub tau_bounds: [[f64; 2]; 2],
    #[serde(default)]
    pub skip_saturated: bool,
}

fn default_bounds() -> [[f64; 2]; 2] {
    [[0.0, 1.0], [0.0, 1.0]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedEvent {
    pub event_id: String,
    #[serde(default)]
    pub severity: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Table {
        #[serde(default)]
        uniform: Option<f64>,
        /// One rate per group id (1-based order), both severities.
        #[serde(default)]
        group_rates: Option<Vec<f64>>,
        /// Keys "0" (peaceful) and "1" (severe), one rate per group id.
        #[serde(default)]
        group_rates_by_severity: Option<BTreeMap<String, Vec<f64>>>,
    },
    Logistic {
        params: PathBuf,
    },
    Replay {
        log: PathBuf,
    },
    Llm {
        cache_dir: PathBuf,
        #[serde(default)]
        templates: Option<PathBuf>,
        #[serde(default = "default_temperature")]
        temperature: [f64; 2],
        #[serde(default)]
        chat_url: Option<String>,
        #[serde(default)]
        model: Option<String>,
        #[serde(default)]
        rationale: bool,
        #[serde(default)]
        max_in_flight: Option<usize>,
    },
}

fn default_temperature() -> [f64; 2] {
    [0.7, 1.3]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::config(format!("field `{field}`: {msg}")));
        if self.schema_version != SCHEMA_VERSION {
            return bad("schema_version", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version));
        }
        if self.k == 0 || self.k >= self.n {
            return bad("k", format!("degree {} must be in 1..n (n = {})", self.k, self.n));
        }
        if self.n * self.k % 2 == 1 {
            return bad("n", format!("n·k = {} must be even", self.n * self.k));
        }
        if self.t_max == 0 {
            return bad("t_max", "must be at least 1".into());
        }
        if self.replicates == 0 {
            return bad("replicates", "must be at least 1".into());
        }
        if self.seed_events.is_empty() {
            return bad("seed_events", "at least one seed event is required".into());
        }
        for (i, e) in self.seed_events.iter().enumerate() {
            if let Some(s) = e.severity {
                if s > 1 {
                    return bad(&format!("seed_events[{i}].severity"), format!("{s} is not 0 or 1"));
                }
            } else if self.cluster_model.is_none() {
                return bad(
                    &format!("seed_events[{i}].severity"),
                    "missing, and no cluster_model to derive it from".into(),
                );
            }
        }
        for (i, b) in self.tau_bounds.iter().enumerate() {
            if !(b[0] >= 0.0 && b[0] < b[1] && b[1].is_finite()) {
                return bad(&format!("tau_bounds[{i}]"), format!("{b:?} is not a valid interval"));
            }
        }
        match &self.policy {
            PolicySpec::Table {
                uniform,
                group_rates,
                group_rates_by_severity,
            } => {
                let given = usize::from(uniform.is_some())
                    + usize::from(group_rates.is_some())
                    + usize::from(group_rates_by_severity.is_some());
                if given != 1 {
                    return bad(
                        "policy",
                        "table policy needs exactly one of uniform, group_rates, group_rates_by_severity".into(),
                    );
                }
                if (group_rates.is_some() || group_rates_by_severity.is_some()) && self.grouping.is_none() {
                    return bad("grouping", "group rates need a grouping file".into());
                }
                if let Some(m) = group_rates_by_severity {
                    for key in m.keys() {
                        if key != "0" && key != "1" {
                            return bad("policy.group_rates_by_severity", format!("unknown severity key {key:?}"));
                        }
                    }
                }
            }
            PolicySpec::Llm { temperature, .. } => {
                if self.events_file.is_none() {
                    return bad("events_file", "required by the llm policy".into());
                }
                if !(temperature[0] >= 0.0 && temperature[0] <= temperature[1]) {
                    return bad("policy.temperature", format!("{temperature:?} is not a valid range"));
                }
            }
            PolicySpec::Logistic { .. } | PolicySpec::Replay { .. } => {}
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.events_file, &mut self.cluster_model, &mut self.grouping]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        match &mut self.policy {
            PolicySpec::Logistic { params } => fix(params),
            PolicySpec::Replay { log } => fix(log),
            PolicySpec::Llm {
                cache_dir, templates, ..
            } => {
                fix(cache_dir);
                if let Some(t) = templates {
                    fix(t);
                }
            }
            PolicySpec::Table { .. } => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "n": 16, "k": 3, "t_max": 5, "replicates": 2, "seed_base": 0,
            "seed_events": [{"event_id": "e", "severity": 0}],
            "policy": {"kind": "table", "uniform": 0.5}
        })
    }

    #[test]
    fn minimal_config_is_valid() {
        let cfg: ExperimentConfig = serde_json::from_value(minimal()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.tau_bounds, [[0.0, 1.0], [0.0, 1.0]]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = minimal();
        v["replicats"] = 3.into();
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn odd_stub_count_rejected() {
        let mut v = minimal();
        v["n"] = 15.into();
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("field `n`"), "{err}");
    }
}

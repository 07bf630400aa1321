use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use log::{info, warn};
use rayon::prelude::*;
use serde_json::json;
use spreadlab_core::contagion::{aggregate_runs, EventContext, ReplicateSetup, SimulationRun};
use spreadlab_core::events::{ingest_events, ClusterModel, Severity};
use spreadlab_core::gateway::{Gateway, GatewayConfig, HttpTransport, ResponseCache, Templates, Transport};
use spreadlab_core::logistic::LogisticParams;
use spreadlab_core::policy::{
    read_decision_log, write_decision_log, DecisionPolicy, DecisionRecord, LlmPolicy, LogisticPolicy, ReplayPolicy,
    TablePolicy,
};
use spreadlab_core::traits::ProfileGrouping;

use crate::config::{ExperimentConfig, PolicySpec};
use crate::error::CliError;
use crate::io::{self, OutDir};

enum PolicySource {
    Shared(Box<dyn DecisionPolicy>),
    Replay(Vec<DecisionRecord>),
}

impl PolicySource {
    fn run_one(&self, setup: &ReplicateSetup, event: &EventContext, i: usize) -> Result<SimulationRun, CliError> {
        Ok(match self {
            Self::Shared(p) => setup.run_one(p.as_ref(), event, i)?,
            Self::Replay(records) => {
                let p = ReplayPolicy::for_run(records, &setup.run_id(event, i));
                setup.run_one(&p, event, i)?
            }
        })
    }
}

pub fn load_grouping(path: &Path) -> Result<ProfileGrouping, CliError> {
    io::read_json(path, "grouping file")
}

fn build_policy(cfg: &ExperimentConfig, grouping: Option<&ProfileGrouping>, offline: bool) -> Result<PolicySource, CliError> {
    let bad_policy = |e: spreadlab_core::policy::PolicyError| CliError::config(format!("field `policy`: {e}"));
    Ok(match &cfg.policy {
        PolicySpec::Table {
            uniform,
            group_rates,
            group_rates_by_severity,
        } => {
            let table = if let Some(p) = uniform {
                TablePolicy::uniform(*p).map_err(bad_policy)?
            } else {
                let g = grouping.ok_or_else(|| CliError::config("field `grouping`: required by group rates"))?;
                if let Some(rates) = group_rates {
                    check_group_count(g, rates.len())?;
                    TablePolicy::by_group_any_severity(g, rates).map_err(bad_policy)?
                } else {
                    let by_sev = group_rates_by_severity.as_ref().expect("validated");
                    let mut entries = Vec::new();
                    for (key, rates) in by_sev {
                        check_group_count(g, rates.len())?;
                        let s = if key == "0" { Severity::Peaceful } else { Severity::Severe };
                        entries.extend(rates.iter().enumerate().map(|(i, &p)| ((i + 1, s), p)));
                    }
                    TablePolicy::by_group(g, entries).map_err(bad_policy)?
                }
            };
            PolicySource::Shared(Box::new(table))
        }
        PolicySpec::Logistic { params } => {
            let v: serde_json::Value = io::read_json(params, "logistic parameters")?;
            let params = LogisticParams::from_json(&v)
                .map_err(|e| CliError::config(format!("field `policy.params`: {e}")))?;
            PolicySource::Shared(Box::new(LogisticPolicy::new(params)))
        }
        PolicySpec::Replay { log } => {
            io::require(log, "replay log")?;
            let records = read_decision_log(fs::File::open(log)?)
                .map_err(|e| CliError::config(format!("field `policy.log`: {e}")))?;
            PolicySource::Replay(records)
        }
        PolicySpec::Llm {
            cache_dir,
            templates,
            temperature,
            chat_url,
            model,
            rationale,
            max_in_flight,
        } => {
            let events_file = cfg.events_file.as_ref().expect("validated");
            io::require(events_file, "events file")?;
            let events = ingest_events(events_file)?;
            let templates = match templates {
                Some(dir) => Templates::load_dir(dir)?,
                None => Templates::default(),
            };
            let mut gw = GatewayConfig::from_env();
            if let Some(url) = chat_url {
                gw.chat_url = url.clone();
            }
            if let Some(m) = model {
                gw.chat_model = m.clone();
            }
            if let Some(n) = max_in_flight {
                gw.max_in_flight = (*n).max(1);
            }
            let transport: Option<Arc<dyn Transport>> = if offline {
                None
            } else {
                Some(Arc::new(HttpTransport::new(Duration::from_secs(60))))
            };
            let gateway = Gateway::new(gw, transport, ResponseCache::open(cache_dir)?);
            let policy = LlmPolicy::new(Arc::new(gateway), templates, events, (temperature[0], temperature[1]), !offline)?
                .with_rationale(*rationale);
            PolicySource::Shared(Box::new(policy))
        }
    })
}

fn check_group_count(g: &ProfileGrouping, rates: usize) -> Result<(), CliError> {
    if g.num_groups() != rates {
        return Err(CliError::config(format!(
            "field `policy`: {rates} group rates for a grouping with {} groups",
            g.num_groups()
        )));
    }
    Ok(())
}

fn seed_events(cfg: &ExperimentConfig) -> Result<Vec<EventContext>, CliError> {
    let model: Option<ClusterModel> = match &cfg.cluster_model {
        Some(p) => Some(io::read_json(p, "cluster model")?),
        None => None,
    };
    cfg.seed_events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let severity = match e.severity {
                Some(s) => Severity::try_from(s).map_err(CliError::config)?,
                None => model
                    .as_ref()
                    .and_then(|m| m.severity_of(&e.event_id))
                    .ok_or_else(|| {
                        CliError::config(format!(
                            "field `seed_events[{i}]`: event {:?} is not in the cluster model",
                            e.event_id
                        ))
                    })?,
            };
            Ok(EventContext {
                event_id: e.event_id.clone(),
                severity,
            })
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig, out: &Path, force: bool, offline: bool) -> Result<(), CliError> {
    let grouping = cfg.grouping.as_deref().map(load_grouping).transpose()?;
    let events = seed_events(cfg)?;
    let policy = build_policy(cfg, grouping.as_ref(), offline)?;
    let dir = OutDir::fresh(out, force)?;
    let runs_dir = dir.root.join("runs");
    if runs_dir.exists() {
        fs::remove_dir_all(&runs_dir)?;
    }
    fs::create_dir_all(&runs_dir)?;

    let mut all_runs: Vec<SimulationRun> = Vec::new();
    for (e_idx, event) in events.iter().enumerate() {
        let setup = ReplicateSetup {
            n: cfg.n,
            k: cfg.k,
            t_max: cfg.t_max,
            seed_base: cfg.seed_base.wrapping_add((e_idx * cfg.replicates) as u64),
            replicates: cfg.replicates,
            skip_saturated: cfg.skip_saturated,
        };
        let runs: Vec<SimulationRun> = (0..cfg.replicates)
            .into_par_iter()
            .map(|i| policy.run_one(&setup, event, i))
            .collect::<Result<_, _>>()?;
        let final_mean = runs.iter().map(|r| r.curve[cfg.t_max]).sum::<f64>() / runs.len() as f64;
        info!(
            "event {} ({}): {} runs, mean E({}) = {:.4}",
            event.event_id,
            event.severity.label(),
            runs.len(),
            cfg.t_max,
            final_mean
        );
        all_runs.extend(runs);
    }

    for r in &all_runs {
        io::write_json(&runs_dir.join(format!("{}.json", r.run_id)), r)?;
    }
    let records: Vec<DecisionRecord> = all_runs.iter().flat_map(|r| r.decision_log().cloned()).collect();
    let w = io::create(&dir.root.join("exposures.csv"))?;
    write_decision_log(&records, w)?;

    let agg = aggregate_runs(&all_runs, grouping.as_ref())?;
    let w = io::create(&dir.root.join("aggregate.csv"))?;
    agg.write_csv(w)?;
    for s in Severity::ALL {
        let part: Vec<SimulationRun> = all_runs.iter().filter(|r| r.severity == s).cloned().collect();
        let path = dir.root.join(format!("aggregate_{}.csv", s.label()));
        if part.is_empty() {
            if path.exists() {
                fs::remove_file(&path)?;
            }
            warn!("no {} seed events; skipping its aggregate", s.label());
            continue;
        }
        aggregate_runs(&part, grouping.as_ref())?.write_csv(io::create(&path)?)?;
    }

    let manifest = json!({
        "created_at": chrono::Utc::now().to_rfc3339(),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "runs": all_runs.len(),
        "decisions": records.len(),
        "config": cfg,
    });
    io::write_json(&dir.root.join("manifest.json"), &manifest)?;
    println!(
        "{} runs, {} decisions written to {}",
        all_runs.len(),
        records.len(),
        dir.root.display()
    );
    Ok(())
}

//! Goodness-of-fit measures and disaggregated mean curves.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contagion::{aggregate_runs, AggregateCurve, ContagionError, SimulationRun};
use crate::events::Severity;
use crate::traits::ProfileGrouping;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty series")]
    Empty,
    #[error("mean of observed series is zero")]
    ZeroMeanObserved,
    #[error("missing metadata: {0}")]
    MissingMetadata(String),
    #[error(transparent)]
    Contagion(#[from] ContagionError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn check(pred: &[f64], obs: &[f64]) -> Result<(), MetricsError> {
    if pred.len() != obs.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), obs.len()));
    }
    if obs.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64, MetricsError> {
    check(pred, obs)?;
    let ss: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok((ss / obs.len() as f64).sqrt())
}

/// RMSE over the mean of the observed series.
pub fn nrmse(pred: &[f64], obs: &[f64]) -> Result<f64, MetricsError> {
    check(pred, obs)?;
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    if mean == 0.0 {
        return Err(MetricsError::ZeroMeanObserved);
    }
    Ok(rmse(pred, obs)? / mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub series: String,
    pub rmse: f64,
    pub nrmse: Option<f64>,
    pub horizon: usize,
}

impl FitReport {
    /// NRMSE is left empty when the observed mean is zero.
    pub fn new(series: impl Into<String>, pred: &[f64], obs: &[f64]) -> Result<Self, MetricsError> {
        let rmse = rmse(pred, obs)?;
        let nrmse = match nrmse(pred, obs) {
            Ok(v) => Some(v),
            Err(MetricsError::ZeroMeanObserved) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            series: series.into(),
            rmse,
            nrmse,
            horizon: obs.len() - 1,
        })
    }
}

pub fn write_report_csv<W: Write>(reports: &[FitReport], w: W) -> Result<(), MetricsError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["series", "rmse", "nrmse", "horizon"])?;
    for r in reports {
        wtr.write_record([
            r.series.clone(),
            r.rmse.to_string(),
            r.nrmse.map(|v| v.to_string()).unwrap_or_default(),
            r.horizon.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Columns `t, observed_mean, observed_std, model_curve`.
pub fn write_plot_csv<W: Write>(observed: &AggregateCurve, model: &[f64], w: W) -> Result<(), MetricsError> {
    check(model, &observed.mean)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "observed_mean", "observed_std", "model_curve"])?;
    for t in 0..model.len() {
        wtr.write_record([
            t.to_string(),
            observed.mean[t].to_string(),
            observed.std[t].to_string(),
            model[t].to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub enum Disaggregation<'a> {
    Severity,
    TraitGroup(&'a ProfileGrouping),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCurve {
    pub label: String,
    /// `None` when no run or agent falls in this partition.
    pub curve: Option<AggregateCurve>,
}

/// Mean curves per severity (partitioning runs) or per trait group
/// (partitioning agents, fractions over the full population).
pub fn disaggregate(runs: &[SimulationRun], by: Disaggregation<'_>) -> Result<Vec<LabeledCurve>, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::Empty);
    }
    match by {
        Disaggregation::Severity => Severity::ALL
            .iter()
            .map(|&s| {
                let part: Vec<SimulationRun> = runs.iter().filter(|r| r.severity == s).cloned().collect();
                let curve = if part.is_empty() {
                    None
                } else {
                    Some(aggregate_runs(&part, None)?)
                };
                Ok(LabeledCurve {
                    label: s.label().to_string(),
                    curve,
                })
            })
            .collect(),
        Disaggregation::TraitGroup(grouping) => {
            let lookup = grouping.lookup_table();
            for r in runs {
                if let Some(p) = r.profiles.iter().find(|p| lookup[p.index()].is_none()) {
                    return Err(MetricsError::MissingMetadata(format!("profile {p} has no group")));
                }
            }
            let agg = aggregate_runs(runs, Some(grouping))?;
            Ok(grouping
                .groups
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let present = runs.iter().any(|r| r.profiles.iter().any(|p| g.profiles.contains(p)));
                    LabeledCurve {
                        label: format!("group{}", g.id),
                        curve: present.then(|| AggregateCurve {
                            runs: agg.runs,
                            mean: agg.group_mean[i].clone(),
                            std: agg.group_std[i].clone(),
                            group_mean: vec![],
                            group_std: vec![],
                        }),
                    }
                })
                .collect())
        }
    }
}

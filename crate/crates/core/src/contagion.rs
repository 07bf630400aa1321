//! Synchronous SI spreading of one news event over a graph of agents.
//!
//! A run seeds one engaged agent, then for `t_max` iterations prompts every
//! unengaged agent once per engaged neighbor. Randomness is split into two
//! ChaCha streams derived from the run seed: stream 0 drives structural
//! choices (seeding order) and stream 1 feeds the policy. Replaying recorded
//! decisions therefore retraces the same structure exactly.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Severity;
use crate::graph::{generate_k_regular, Graph, GraphError};
use crate::logistic::{ExposureDataset, ExposureRow};
use crate::policy::{DecisionContext, DecisionPolicy, DecisionRecord, PolicyError};
use crate::traits::{assign_profiles, ProfileGrouping, TraitProfile};

/// One prompt outcome; the same shape as the decision log.
pub type ExposureRecord = DecisionRecord;

#[derive(Debug, Error)]
pub enum ContagionError {
    #[error("seeding failed: all {attempts} agents declined")]
    SeedingFailure { attempts: usize },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("no runs to aggregate")]
    Empty,
    #[error("runs have different horizons ({0} vs {1})")]
    MismatchedHorizon(usize, usize),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventContext {
    pub event_id: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_max: usize,
    /// Skip unengaged agents whose neighbors are all engaged already.
    #[serde(default)]
    pub skip_saturated: bool,
    pub run_id: String,
}

impl SimConfig {
    pub fn new(t_max: usize, run_id: impl Into<String>) -> Self {
        Self {
            t_max,
            skip_saturated: false,
            run_id: run_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimState {
    pub engaged: Vec<bool>,
    pub iteration: usize,
}

impl SimState {
    pub fn empty(n: usize) -> Self {
        Self {
            engaged: vec![false; n],
            iteration: 0,
        }
    }

    pub fn engaged_count(&self) -> usize {
        self.engaged.iter().filter(|&&e| e).count()
    }

    pub fn fraction(&self) -> f64 {
        self.engaged_count() as f64 / self.engaged.len() as f64
    }
}

/// Streams for one run.
pub struct RunRngs {
    pub structure: ChaCha8Rng,
    pub decisions: ChaCha8Rng,
}

impl RunRngs {
    pub fn from_seed(seed: u64) -> Self {
        let mut structure = ChaCha8Rng::seed_from_u64(seed);
        structure.set_stream(0);
        let mut decisions = ChaCha8Rng::seed_from_u64(seed);
        decisions.set_stream(1);
        Self { structure, decisions }
    }
}

fn context<'a>(
    profiles: &[TraitProfile],
    event: &'a EventContext,
    agent: usize,
    iteration: usize,
    exposure_index: usize,
) -> DecisionContext<'a> {
    DecisionContext {
        profile: profiles[agent],
        severity: event.severity,
        agent_id: agent,
        iteration,
        exposure_index,
        event_id: &event.event_id,
    }
}

/// Outcome of seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct Seeding {
    pub agent: usize,
    pub attempts: usize,
    /// Every seeding prompt, logged at iteration 0.
    pub records: Vec<ExposureRecord>,
}

/// Prompts agents in a random order without replacement until one says yes.
pub fn seed_initial(
    profiles: &[TraitProfile],
    policy: &dyn DecisionPolicy,
    event: &EventContext,
    run_id: &str,
    rngs: &mut RunRngs,
) -> Result<Seeding, ContagionError> {
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.shuffle(&mut rngs.structure);
    let mut records = Vec::new();
    for (i, &agent) in order.iter().enumerate() {
        let ctx = context(profiles, event, agent, 0, 0);
        let d = policy.decide(&ctx, &mut rngs.decisions)?;
        records.push(DecisionRecord::new(run_id, &ctx, &d));
        if d.yes {
            return Ok(Seeding {
                agent,
                attempts: i + 1,
                records,
            });
        }
    }
    Err(ContagionError::SeedingFailure {
        attempts: profiles.len(),
    })
}

/// One synchronous iteration. Engagement is read from `state` as it was at
/// the start; returns the next state and the prompts made.
pub fn step(
    state: &SimState,
    graph: &Graph,
    profiles: &[TraitProfile],
    policy: &dyn DecisionPolicy,
    event: &EventContext,
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(SimState, Vec<ExposureRecord>), ContagionError> {
    let iteration = state.iteration + 1;
    let mut next = state.engaged.clone();
    let mut exposures = Vec::new();
    for agent in 0..graph.n() {
        if state.engaged[agent] {
            continue;
        }
        let m = graph.neighbors(agent).iter().filter(|&&j| state.engaged[j]).count();
        if m == 0 || (config.skip_saturated && m == graph.degree(agent)) {
            continue;
        }
        for e in 0..m {
            let ctx = context(profiles, event, agent, iteration, e);
            let d = policy.decide(&ctx, rng)?;
            next[agent] |= d.yes;
            exposures.push(DecisionRecord::new(&config.run_id, &ctx, &d));
        }
    }
    Ok((
        SimState {
            engaged: next,
            iteration,
        },
        exposures,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub run_id: String,
    pub n: usize,
    pub k: usize,
    pub t_max: usize,
    pub seed: u64,
    pub event_id: String,
    pub severity: Severity,
    pub seed_agent: usize,
    pub seed_attempts: usize,
    pub profiles: Vec<TraitProfile>,
    /// Iteration at which each agent became engaged.
    pub engaged_at: Vec<Option<usize>>,
    /// Engaged fraction at t = 0..=t_max.
    pub curve: Vec<f64>,
    #[serde(skip)]
    pub seeding: Vec<ExposureRecord>,
    #[serde(skip)]
    pub exposures: Vec<ExposureRecord>,
}

impl SimulationRun {
    /// Engaged fraction per group over the whole population; group `g`
    /// (1-based id) is at index `g - 1`.
    pub fn group_curves(&self, grouping: &ProfileGrouping) -> Vec<Vec<f64>> {
        let lookup = grouping.lookup_table();
        let n = self.n as f64;
        let mut out = vec![vec![0.0; self.t_max + 1]; grouping.num_groups()];
        for (agent, at) in self.engaged_at.iter().enumerate() {
            let (Some(at), Some(g)) = (at, lookup[self.profiles[agent].index()]) else {
                continue;
            };
            for v in &mut out[g - 1][*at..] {
                *v += 1.0 / n;
            }
        }
        out
    }

    pub fn curve(&self, grouping: Option<&ProfileGrouping>) -> EngagementCurve {
        EngagementCurve {
            total: self.curve.clone(),
            groups: grouping.map(|g| self.group_curves(g)).unwrap_or_default(),
        }
    }

    /// Post-seeding prompts as logistic training rows.
    pub fn exposure_rows(&self) -> impl Iterator<Item = ExposureRow> + '_ {
        self.exposures.iter().map(|r| ExposureRow {
            profile: r.profile_bits,
            severity: r.severity,
            engaged: r.decision,
        })
    }

    /// Seeding prompts followed by exposures, in decision order.
    pub fn decision_log(&self) -> impl Iterator<Item = &DecisionRecord> {
        self.seeding.iter().chain(&self.exposures)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementCurve {
    pub total: Vec<f64>,
    pub groups: Vec<Vec<f64>>,
}

/// Seeds, then runs `config.t_max` synchronous steps.
pub fn run(
    graph: &Graph,
    profiles: &[TraitProfile],
    policy: &dyn DecisionPolicy,
    event: &EventContext,
    config: &SimConfig,
    seed: u64,
) -> Result<SimulationRun, ContagionError> {
    if config.t_max == 0 {
        return Err(ContagionError::InvalidParameters("t_max must be at least 1".into()));
    }
    if profiles.len() != graph.n() {
        return Err(ContagionError::InvalidParameters(format!(
            "{} profiles for {} agents",
            profiles.len(),
            graph.n()
        )));
    }
    let mut rngs = RunRngs::from_seed(seed);
    let seeding = seed_initial(profiles, policy, event, &config.run_id, &mut rngs)?;
    let mut state = SimState::empty(graph.n());
    state.engaged[seeding.agent] = true;
    let mut engaged_at = vec![None; graph.n()];
    engaged_at[seeding.agent] = Some(0);
    let mut curve = vec![state.fraction()];
    let mut exposures = Vec::new();
    for _ in 0..config.t_max {
        let (next, mut ex) = step(&state, graph, profiles, policy, event, config, &mut rngs.decisions)?;
        for (a, at) in engaged_at.iter_mut().enumerate() {
            if at.is_none() && next.engaged[a] {
                *at = Some(next.iteration);
            }
        }
        exposures.append(&mut ex);
        curve.push(next.fraction());
        state = next;
    }
    Ok(SimulationRun {
        run_id: config.run_id.clone(),
        n: graph.n(),
        k: graph.k(),
        t_max: config.t_max,
        seed,
        event_id: event.event_id.clone(),
        severity: event.severity,
        seed_agent: seeding.agent,
        seed_attempts: seeding.attempts,
        profiles: profiles.to_vec(),
        engaged_at,
        curve,
        seeding: seeding.records,
        exposures,
    })
}

/// Replicate layout: replicate `i` uses seed `seed_base + i` for its graph,
/// its profile assignment and its run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSetup {
    pub n: usize,
    pub k: usize,
    pub t_max: usize,
    pub seed_base: u64,
    pub replicates: usize,
    #[serde(default)]
    pub skip_saturated: bool,
}

impl ReplicateSetup {
    pub fn run_id(&self, event: &EventContext, i: usize) -> String {
        format!("{}-{:04}", event.event_id, i)
    }

    pub fn run_one(
        &self,
        policy: &dyn DecisionPolicy,
        event: &EventContext,
        i: usize,
    ) -> Result<SimulationRun, ContagionError> {
        let seed = self.seed_base.wrapping_add(i as u64);
        let graph = generate_k_regular(self.n, self.k, seed)?;
        let profiles = assign_profiles(self.n, seed);
        let config = SimConfig {
            t_max: self.t_max,
            skip_saturated: self.skip_saturated,
            run_id: self.run_id(event, i),
        };
        run(&graph, &profiles.0, policy, event, &config, seed)
    }

    /// All replicates, in parallel, returned in replicate order.
    pub fn run_all(&self, policy: &dyn DecisionPolicy, event: &EventContext) -> Result<Vec<SimulationRun>, ContagionError> {
        (0..self.replicates)
            .into_par_iter()
            .map(|i| self.run_one(policy, event, i))
            .collect()
    }
}

/// Pointwise mean and sample standard deviation of a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub runs: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub group_mean: Vec<Vec<f64>>,
    pub group_std: Vec<Vec<f64>>,
}

fn mean_std(series: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let len = series[0].len();
    let r = series.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for t in 0..len {
        let m = series.iter().map(|s| s[t]).sum::<f64>() / r;
        mean[t] = m;
        if series.len() > 1 {
            let ss: f64 = series.iter().map(|s| (s[t] - m).powi(2)).sum();
            std[t] = (ss / (r - 1.0)).sqrt();
        }
    }
    (mean, std)
}

pub fn aggregate_curves(curves: &[EngagementCurve]) -> Result<AggregateCurve, ContagionError> {
    let first = curves.first().ok_or(ContagionError::Empty)?;
    for c in curves {
        if c.total.len() != first.total.len() {
            return Err(ContagionError::MismatchedHorizon(first.total.len(), c.total.len()));
        }
        if c.groups.len() != first.groups.len() {
            return Err(ContagionError::InvalidParameters("runs disagree on group count".into()));
        }
    }
    let totals: Vec<&[f64]> = curves.iter().map(|c| c.total.as_slice()).collect();
    let (mean, std) = mean_std(&totals);
    let (group_mean, group_std) = (0..first.groups.len())
        .map(|g| {
            let gs: Vec<&[f64]> = curves.iter().map(|c| c.groups[g].as_slice()).collect();
            mean_std(&gs)
        })
        .unzip();
    Ok(AggregateCurve {
        runs: curves.len(),
        mean,
        std,
        group_mean,
        group_std,
    })
}

pub fn aggregate_runs(runs: &[SimulationRun], grouping: Option<&ProfileGrouping>) -> Result<AggregateCurve, ContagionError> {
    let curves: Vec<EngagementCurve> = runs.iter().map(|r| r.curve(grouping)).collect();
    aggregate_curves(&curves)
}

impl AggregateCurve {
    pub fn horizon(&self) -> usize {
        self.mean.len() - 1
    }

    /// Columns `t, mean_E, std_E` then `mean_E_g<i>` per group.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ContagionError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "mean_E".into(), "std_E".into()];
        header.extend((1..=self.group_mean.len()).map(|g| format!("mean_E_g{g}")));
        wtr.write_record(&header)?;
        for t in 0..self.mean.len() {
            let mut row = vec![t.to_string(), self.mean[t].to_string(), self.std[t].to_string()];
            row.extend(self.group_mean.iter().map(|g| g[t].to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Logistic training set from all post-seeding exposures of `runs`.
pub fn exposure_dataset<'a>(runs: impl IntoIterator<Item = &'a SimulationRun>) -> ExposureDataset {
    ExposureDataset::new(runs.into_iter().flat_map(|r| r.exposure_rows()).collect())
}

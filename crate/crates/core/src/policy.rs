//! Share/not-share decision policies.
//!
//! The contagion engine only talks to [`DecisionPolicy`], so the same run
//! loop works with fixed rates, a fitted logistic model, a recorded log or a
//! live language model.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventRecord, Severity};
use crate::gateway::{render_prompts, Gateway, GatewayError, Templates};
use crate::logistic::{LogisticError, LogisticParams};
use crate::traits::{ProfileGrouping, TraitProfile};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no rate for {0}")]
    MissingKey(String),
    #[error("rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("decision log exhausted")]
    LogExhausted,
    #[error("decision log key mismatch: expected {expected}, got {got}")]
    KeyMismatch { expected: String, got: String },
    #[error("unknown event {0:?}")]
    UnknownEvent(String),
    #[error("invalid temperature range [{0}, {1}]")]
    InvalidTemperature(f64, f64),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Logistic(#[from] LogisticError),
    #[error("decision log csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("decision log row {row}: {message}")]
    BadRecord { row: usize, message: String },
}

/// Everything a policy may condition on for one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionContext<'a> {
    pub profile: TraitProfile,
    pub severity: Severity,
    pub agent_id: usize,
    pub iteration: usize,
    /// Position of this prompt among the agent's prompts in this iteration.
    pub exposure_index: usize,
    pub event_id: &'a str,
}

impl DecisionContext<'_> {
    fn key(&self) -> String {
        format!(
            "(agent {}, iteration {}, exposure {})",
            self.agent_id, self.iteration, self.exposure_index
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub yes: bool,
    pub temperature: Option<f64>,
    pub rationale: Option<String>,
}

impl Decision {
    pub fn plain(yes: bool) -> Self {
        Self {
            yes,
            temperature: None,
            rationale: None,
        }
    }
}

pub trait DecisionPolicy: Send + Sync {
    fn decide(&self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<Decision, PolicyError>;

    /// Yes-probability for `ctx` when the policy has a closed form.
    fn probability(&self, _ctx: &DecisionContext<'_>) -> Result<Option<f64>, PolicyError> {
        Ok(None)
    }
}

fn bernoulli(p: f64, rng: &mut dyn RngCore) -> bool {
    // p = 0 and p = 1 are exact.
    rng.random::<f64>() < p
}

fn check_rate(p: f64) -> Result<f64, PolicyError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(PolicyError::InvalidRate(p))
    }
}

#[derive(Debug, Clone)]
enum TableKey {
    Uniform(f64),
    Profile(HashMap<(TraitProfile, Severity), f64>),
    Group {
        lookup: [Option<usize>; 32],
        rates: HashMap<(usize, Severity), f64>,
    },
}

/// Fixed sharing rates keyed by profile, by group, or a single rate.
#[derive(Debug, Clone)]
pub struct TablePolicy {
    table: TableKey,
}

impl TablePolicy {
    pub fn uniform(p: f64) -> Result<Self, PolicyError> {
        Ok(Self {
            table: TableKey::Uniform(check_rate(p)?),
        })
    }

    pub fn by_profile(rates: impl IntoIterator<Item = ((TraitProfile, Severity), f64)>) -> Result<Self, PolicyError> {
        let rates = rates
            .into_iter()
            .map(|(k, p)| check_rate(p).map(|p| (k, p)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            table: TableKey::Profile(rates),
        })
    }

    /// Rates keyed by 1-based group id of `grouping`.
    pub fn by_group(
        grouping: &ProfileGrouping,
        rates: impl IntoIterator<Item = ((usize, Severity), f64)>,
    ) -> Result<Self, PolicyError> {
        let rates = rates
            .into_iter()
            .map(|(k, p)| check_rate(p).map(|p| (k, p)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            table: TableKey::Group {
                lookup: grouping.lookup_table(),
                rates,
            },
        })
    }

    /// Same group rate for both severities.
    pub fn by_group_any_severity(grouping: &ProfileGrouping, rates: &[f64]) -> Result<Self, PolicyError> {
        let entries = rates
            .iter()
            .enumerate()
            .flat_map(|(i, &p)| Severity::ALL.map(|s| ((i + 1, s), p)));
        Self::by_group(grouping, entries)
    }

    pub fn rate(&self, profile: TraitProfile, severity: Severity) -> Result<f64, PolicyError> {
        let missing = || PolicyError::MissingKey(format!("profile {profile}, severity {}", severity.as_u8()));
        match &self.table {
            TableKey::Uniform(p) => Ok(*p),
            TableKey::Profile(m) => m.get(&(profile, severity)).copied().ok_or_else(missing),
            TableKey::Group { lookup, rates } => {
                let g = lookup[profile.index()].ok_or_else(missing)?;
                rates.get(&(g, severity)).copied().ok_or_else(missing)
            }
        }
    }
}

impl DecisionPolicy for TablePolicy {
    fn decide(&self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<Decision, PolicyError> {
        let p = self.rate(ctx.profile, ctx.severity)?;
        Ok(Decision::plain(bernoulli(p, rng)))
    }

    fn probability(&self, ctx: &DecisionContext<'_>) -> Result<Option<f64>, PolicyError> {
        self.rate(ctx.profile, ctx.severity).map(Some)
    }
}

/// Bernoulli draws from a fitted logistic model.
#[derive(Debug, Clone)]
pub struct LogisticPolicy {
    params: LogisticParams,
}

impl LogisticPolicy {
    pub fn new(params: LogisticParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &LogisticParams {
        &self.params
    }
}

impl DecisionPolicy for LogisticPolicy {
    fn decide(&self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<Decision, PolicyError> {
        let p = self.params.predict(ctx.profile, ctx.severity)?;
        Ok(Decision::plain(bernoulli(p, rng)))
    }

    fn probability(&self, ctx: &DecisionContext<'_>) -> Result<Option<f64>, PolicyError> {
        Ok(Some(self.params.predict(ctx.profile, ctx.severity)?))
    }
}

/// One logged prompt outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub run_id: String,
    pub iteration: usize,
    pub agent_id: usize,
    pub profile_bits: TraitProfile,
    pub event_id: String,
    pub severity: Severity,
    pub exposure_index: usize,
    #[serde(with = "bool_as_int")]
    pub decision: bool,
    pub temperature: Option<f64>,
    pub rationale: Option<String>,
}

mod bool_as_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(serde::de::Error::custom(format!("decision must be 0 or 1, got {v}"))),
        }
    }
}

impl DecisionRecord {
    pub fn new(run_id: &str, ctx: &DecisionContext<'_>, decision: &Decision) -> Self {
        Self {
            run_id: run_id.to_string(),
            iteration: ctx.iteration,
            agent_id: ctx.agent_id,
            profile_bits: ctx.profile,
            event_id: ctx.event_id.to_string(),
            severity: ctx.severity,
            exposure_index: ctx.exposure_index,
            decision: decision.yes,
            temperature: decision.temperature,
            rationale: decision.rationale.clone(),
        }
    }
}

pub fn write_decision_log<W: Write>(records: &[DecisionRecord], w: W) -> Result<(), PolicyError> {
    let mut wtr = csv::Writer::from_writer(w);
    if records.is_empty() {
        wtr.write_record([
            "run_id",
            "iteration",
            "agent_id",
            "profile_bits",
            "event_id",
            "severity",
            "exposure_index",
            "decision",
            "temperature",
            "rationale",
        ])?;
    }
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_decision_log<R: Read>(r: R) -> Result<Vec<DecisionRecord>, PolicyError> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize()
        .enumerate()
        .map(|(i, rec)| {
            rec.map_err(|e| PolicyError::BadRecord {
                row: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Answers from a recorded decision stream, in order.
pub struct ReplayPolicy {
    queue: Mutex<VecDeque<DecisionRecord>>,
}

impl ReplayPolicy {
    pub fn new(records: impl IntoIterator<Item = DecisionRecord>) -> Self {
        Self {
            queue: Mutex::new(records.into_iter().collect()),
        }
    }

    /// Records of one run only, in log order.
    pub fn for_run(records: &[DecisionRecord], run_id: &str) -> Self {
        Self::new(records.iter().filter(|r| r.run_id == run_id).cloned())
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl DecisionPolicy for ReplayPolicy {
    fn decide(&self, ctx: &DecisionContext<'_>, _rng: &mut dyn RngCore) -> Result<Decision, PolicyError> {
        let mut q = self.queue.lock().unwrap();
        let next = q.front().ok_or(PolicyError::LogExhausted)?;
        if (next.agent_id, next.iteration, next.exposure_index) != (ctx.agent_id, ctx.iteration, ctx.exposure_index) {
            return Err(PolicyError::KeyMismatch {
                expected: format!(
                    "(agent {}, iteration {}, exposure {})",
                    next.agent_id, next.iteration, next.exposure_index
                ),
                got: ctx.key(),
            });
        }
        let rec = q.pop_front().expect("front exists");
        Ok(Decision {
            yes: rec.decision,
            temperature: rec.temperature,
            rationale: rec.rationale,
        })
    }
}

/// Asks a language model through the gateway.
pub struct LlmPolicy {
    gateway: Arc<Gateway>,
    templates: Templates,
    events: BTreeMap<String, EventRecord>,
    temperature: (f64, f64),
    online: bool,
    with_rationale: bool,
}

impl LlmPolicy {
    pub fn new(
        gateway: Arc<Gateway>,
        templates: Templates,
        events: impl IntoIterator<Item = EventRecord>,
        temperature: (f64, f64),
        online: bool,
    ) -> Result<Self, PolicyError> {
        let (lo, hi) = temperature;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(PolicyError::InvalidTemperature(lo, hi));
        }
        Ok(Self {
            gateway,
            templates,
            events: events.into_iter().map(|e| (e.id.clone(), e)).collect(),
            temperature,
            online,
            with_rationale: false,
        })
    }

    /// Also request a rationale for every decision.
    pub fn with_rationale(mut self, on: bool) -> Self {
        self.with_rationale = on;
        self
    }

    fn sample_index(ctx: &DecisionContext<'_>) -> u64 {
        ((ctx.agent_id as u64) << 40) ^ ((ctx.iteration as u64) << 20) ^ ctx.exposure_index as u64
    }
}

impl DecisionPolicy for LlmPolicy {
    fn decide(&self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<Decision, PolicyError> {
        let event = self
            .events
            .get(ctx.event_id)
            .ok_or_else(|| PolicyError::UnknownEvent(ctx.event_id.to_string()))?;
        let (lo, hi) = self.temperature;
        let temperature = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let bundle = render_prompts(&self.templates, ctx.profile, event)?;
        let sample = Self::sample_index(ctx);
        let outcome = self.gateway.query_decision(&bundle, temperature, sample, self.online)?;
        let rationale = if self.with_rationale {
            Some(self.gateway.query_rationale(&bundle, temperature, sample, self.online)?.0)
        } else {
            None
        };
        Ok(Decision {
            yes: outcome.decision,
            temperature: Some(temperature),
            rationale,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, RecordingTransport, ResponseCache};
    use crate::logistic::LinearTraitParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(profile: &str, severity: Severity) -> DecisionContext<'static> {
        DecisionContext {
            profile: profile.parse().unwrap(),
            severity,
            agent_id: 3,
            iteration: 1,
            exposure_index: 0,
            event_id: "ev",
        }
    }

    fn yes_rate(policy: &dyn DecisionPolicy, c: &DecisionContext<'_>, draws: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..draws).filter(|_| policy.decide(c, &mut rng).unwrap().yes).count() as f64 / draws as f64
    }

    #[test]
    fn extreme_rates_are_exact() {
        let c = ctx("10101", Severity::Peaceful);
        assert_eq!(yes_rate(&TablePolicy::uniform(0.0).unwrap(), &c, 10_000, 1), 0.0);
        assert_eq!(yes_rate(&TablePolicy::uniform(1.0).unwrap(), &c, 10_000, 1), 1.0);
    }

    #[test]
    fn empirical_rate_within_three_sigma() {
        let p = 0.8154;
        let rate = yes_rate(&TablePolicy::uniform(p).unwrap(), &ctx("00000", Severity::Severe), 100_000, 9);
        assert!((rate - p).abs() <= 0.004, "{rate}");
    }

    #[test]
    fn rates_are_validated() {
        assert!(matches!(TablePolicy::uniform(1.2), Err(PolicyError::InvalidRate(_))));
        assert!(matches!(TablePolicy::uniform(f64::NAN), Err(PolicyError::InvalidRate(_))));
    }

    #[test]
    fn missing_key_is_reported() {
        let p = TablePolicy::by_profile([(("00000".parse().unwrap(), Severity::Peaceful), 0.3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(p.decide(&ctx("00000", Severity::Peaceful), &mut rng).is_ok());
        assert!(matches!(
            p.decide(&ctx("00000", Severity::Severe), &mut rng),
            Err(PolicyError::MissingKey(_))
        ));
    }

    #[test]
    fn group_rates_follow_grouping() {
        let low: Vec<TraitProfile> = (0..16).map(|i| TraitProfile::from_index(i).unwrap()).collect();
        let high: Vec<TraitProfile> = (16..32).map(|i| TraitProfile::from_index(i).unwrap()).collect();
        let g = ProfileGrouping::two_groups(low, high);
        let p = TablePolicy::by_group_any_severity(&g, &[0.0533, 0.8154]).unwrap();
        assert_eq!(p.rate("01111".parse().unwrap(), Severity::Severe).unwrap(), 0.0533);
        assert_eq!(p.rate("10000".parse().unwrap(), Severity::Peaceful).unwrap(), 0.8154);
    }

    #[test]
    fn logistic_probabilities() {
        let zero = LogisticPolicy::new(LogisticParams::Linear(LinearTraitParams {
            beta_traits: [0.0; 5],
            beta_s: 0.0,
            intercept: 0.0,
        }));
        assert_eq!(zero.probability(&ctx("11011", Severity::Severe)).unwrap(), Some(0.5));

        let fitted = LogisticPolicy::new(LogisticParams::Linear(LinearTraitParams {
            beta_traits: [7.625, 2.069, 0.459, -1.091, -0.509],
            beta_s: -1.224,
            intercept: -3.072,
        }));
        let low = fitted.probability(&ctx("00000", Severity::Peaceful)).unwrap().unwrap();
        assert!((low - 1.0 / (1.0 + 3.072f64.exp())).abs() < 1e-12);
        assert!((low - 0.04428).abs() < 1e-5);
        let open = fitted.probability(&ctx("10000", Severity::Severe)).unwrap().unwrap();
        assert!((open - 0.9654).abs() < 5e-4, "{open}");
    }

    #[test]
    fn fixed_stream_is_deterministic() {
        let p = TablePolicy::uniform(0.4).unwrap();
        let c = ctx("00000", Severity::Peaceful);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| p.decide(&c, &mut rng).unwrap().yes).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    fn record(agent: usize, iteration: usize, yes: bool) -> DecisionRecord {
        DecisionRecord {
            run_id: "r0".into(),
            iteration,
            agent_id: agent,
            profile_bits: "10010".parse().unwrap(),
            event_id: "ev".into(),
            severity: Severity::Severe,
            exposure_index: 0,
            decision: yes,
            temperature: None,
            rationale: None,
        }
    }

    #[test]
    fn replay_returns_recorded_answers() {
        let p = ReplayPolicy::new([record(3, 1, true)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(p.decide(&ctx("10010", Severity::Severe), &mut rng).unwrap().yes);
        assert!(matches!(
            p.decide(&ctx("10010", Severity::Severe), &mut rng),
            Err(PolicyError::LogExhausted)
        ));
    }

    #[test]
    fn replay_key_mismatch() {
        let p = ReplayPolicy::new([record(4, 1, true)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            p.decide(&ctx("10010", Severity::Severe), &mut rng),
            Err(PolicyError::KeyMismatch { .. })
        ));
        assert_eq!(p.remaining(), 1);
    }

    #[test]
    fn decision_log_csv_roundtrip() {
        let mut a = record(1, 0, true);
        a.temperature = Some(0.83);
        a.rationale = Some("I like it, \"a lot\"".into());
        let b = record(2, 4, false);
        let mut buf = Vec::new();
        write_decision_log(&[a.clone(), b.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "run_id,iteration,agent_id,profile_bits,event_id,severity,exposure_index,decision,temperature,rationale\n"
        ));
        assert!(text.contains("r0,4,2,10010,ev,1,0,0,,\n"));
        assert_eq!(read_decision_log(buf.as_slice()).unwrap(), vec![a, b]);
    }

    #[test]
    fn llm_policy_samples_temperature_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let rec = Arc::new(RecordingTransport::fixed_reply("Yes, I would share it."));
        let gw = Arc::new(Gateway::new(
            GatewayConfig::default(),
            Some(rec.clone()),
            ResponseCache::open(dir.path()).unwrap(),
        ));
        let ev = EventRecord {
            id: "ev".into(),
            text: "Crowds gathered.".into(),
            disorder_type: String::new(),
            event_type: String::new(),
            sub_event_type: String::new(),
        };
        let p = LlmPolicy::new(gw.clone(), Templates::default(), [ev.clone()], (0.7, 1.3), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = ctx("01010", Severity::Peaceful);
        let d = p.decide(&c, &mut rng).unwrap();
        assert!(d.yes);
        let t = d.temperature.unwrap();
        assert!((0.7..=1.3).contains(&t));
        assert_eq!(rec.call_count(), 1);

        // Same rng stream offline: served from cache.
        let offline = LlmPolicy::new(gw, Templates::default(), [ev], (0.7, 1.3), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(offline.decide(&c, &mut rng).unwrap().temperature, Some(t));
        assert_eq!(rec.call_count(), 1);
    }
}

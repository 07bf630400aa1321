//! Binary Big Five profiles, balanced assignment to agents, per-profile
//! response ratios and Tukey HSD grouping of profiles.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_TRAITS: usize = 5;
pub const NUM_PROFILES: usize = 1 << NUM_TRAITS;

#[derive(Debug, Error)]
pub enum TraitsError {
    #[error("invalid profile string {0:?}")]
    BadProfile(String),
    #[error("cell ({profile}, {event_id}) has no trials")]
    EmptyCell { profile: TraitProfile, event_id: String },
    #[error("cell ({profile}, {event_id}) has {yes} yes answers out of {trials} trials")]
    InconsistentCell {
        profile: TraitProfile,
        event_id: String,
        trials: u32,
        yes: u32,
    },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("profile {0} has fewer than 2 samples")]
    InsufficientSamples(TraitProfile),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One of the five binarized personality dimensions, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trait {
    Openness,
    Conscientiousness,
    Extraversion,
    Neuroticism,
    Agreeableness,
}

impl Trait {
    pub const ALL: [Trait; NUM_TRAITS] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Neuroticism,
        Trait::Agreeableness,
    ];

    pub fn position(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Trait::Openness => "openness",
            Trait::Conscientiousness => "conscientiousness",
            Trait::Extraversion => "extraversion",
            Trait::Neuroticism => "neuroticism",
            Trait::Agreeableness => "agreeableness",
        }
    }
}

/// A 5-bit trait vector. Bit order is (O, C, E, N, A) with openness as the
/// most significant bit, so `index()` sorts profiles as their binary strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraitProfile(u8);

impl TraitProfile {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < NUM_PROFILES).then_some(Self(index as u8))
    }

    pub fn from_bits(bits: [bool; NUM_TRAITS]) -> Self {
        let idx = bits
            .iter()
            .fold(0u8, |acc, &b| (acc << 1) | u8::from(b));
        Self(idx)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_high(self, t: Trait) -> bool {
        (self.0 >> (NUM_TRAITS - 1 - t.position())) & 1 == 1
    }

    pub fn bits(self) -> [bool; NUM_TRAITS] {
        Trait::ALL.map(|t| self.is_high(t))
    }
}

impl fmt::Display for TraitProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for TraitProfile {
    type Err = TraitsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.len() != NUM_TRAITS {
            return Err(TraitsError::BadProfile(s.to_string()));
        }
        let mut bits = [false; NUM_TRAITS];
        for (slot, c) in bits.iter_mut().zip(s.chars()) {
            *slot = match c {
                '0' => false,
                '1' => true,
                _ => return Err(TraitsError::BadProfile(s.to_string())),
            };
        }
        Ok(Self::from_bits(bits))
    }
}

impl Serialize for TraitProfile {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TraitProfile {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All 32 profiles in ascending binary order.
pub fn enumerate_profiles() -> Vec<TraitProfile> {
    (0..NUM_PROFILES).map(|i| TraitProfile(i as u8)).collect()
}

/// Agent index -> profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileAssignment(pub Vec<TraitProfile>);

impl ProfileAssignment {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn profile(&self, agent: usize) -> TraitProfile {
        self.0[agent]
    }

    pub fn counts(&self) -> [usize; NUM_PROFILES] {
        let mut c = [0; NUM_PROFILES];
        for p in &self.0 {
            c[p.index()] += 1;
        }
        c
    }
}

/// Balanced random assignment: every profile appears `n / 32` times, and the
/// `n % 32` leftover slots go to distinct randomly chosen profiles.
pub fn assign_profiles(n: usize, seed: u64) -> ProfileAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = enumerate_profiles();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n / NUM_PROFILES {
        out.extend_from_slice(&all);
    }
    let mut extras = all;
    extras.shuffle(&mut rng);
    out.extend_from_slice(&extras[..n % NUM_PROFILES]);
    out.shuffle(&mut rng);
    ProfileAssignment(out)
}

/// Trial tally for one (profile, event) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RatioCell {
    pub trials: u32,
    pub yes: u32,
}

impl RatioCell {
    pub fn ratio(&self) -> f64 {
        f64::from(self.yes) / f64::from(self.trials)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RatioRow {
    profile: TraitProfile,
    event_id: String,
    trials: u32,
    yes_count: u32,
    ratio: f64,
}

/// Yes-ratio per (profile, event), the raw material for trait grouping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResponseRatioTable {
    cells: BTreeMap<(TraitProfile, String), RatioCell>,
}

impl ResponseRatioTable {
    /// Tallies raw `(profile, event_id, said_yes)` outcomes.
    pub fn from_outcomes<'a, I>(outcomes: I) -> Self
    where
        I: IntoIterator<Item = (TraitProfile, &'a str, bool)>,
    {
        let mut cells: BTreeMap<(TraitProfile, String), RatioCell> = BTreeMap::new();
        for (profile, event, yes) in outcomes {
            let cell = cells.entry((profile, event.to_string())).or_default();
            cell.trials += 1;
            cell.yes += u32::from(yes);
        }
        Self { cells }
    }

    pub fn from_cells<I>(cells: I) -> Result<Self, TraitsError>
    where
        I: IntoIterator<Item = (TraitProfile, String, RatioCell)>,
    {
        let mut out = BTreeMap::new();
        for (profile, event_id, cell) in cells {
            if cell.trials == 0 {
                return Err(TraitsError::EmptyCell { profile, event_id });
            }
            if cell.yes > cell.trials {
                return Err(TraitsError::InconsistentCell {
                    profile,
                    event_id,
                    trials: cell.trials,
                    yes: cell.yes,
                });
            }
            out.insert((profile, event_id), cell);
        }
        Ok(Self { cells: out })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, profile: TraitProfile, event_id: &str) -> Option<RatioCell> {
        self.cells.get(&(profile, event_id.to_string())).copied()
    }

    pub fn ratio(&self, profile: TraitProfile, event_id: &str) -> Option<f64> {
        self.get(profile, event_id).map(|c| c.ratio())
    }

    /// Per-profile list of event ratios, the samples fed to [`tukey_grouping`].
    pub fn samples_by_profile(&self) -> BTreeMap<TraitProfile, Vec<f64>> {
        let mut out: BTreeMap<TraitProfile, Vec<f64>> = BTreeMap::new();
        for ((profile, _), cell) in &self.cells {
            out.entry(*profile).or_default().push(cell.ratio());
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TraitsError> {
        let mut wtr = csv::Writer::from_writer(w);
        for ((profile, event_id), cell) in &self.cells {
            wtr.serialize(RatioRow {
                profile: *profile,
                event_id: event_id.clone(),
                trials: cell.trials,
                yes_count: cell.yes,
                ratio: cell.ratio(),
            })?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TraitsError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut cells = Vec::new();
        for row in rdr.deserialize() {
            let row: RatioRow = row?;
            cells.push((
                row.profile,
                row.event_id,
                RatioCell {
                    trials: row.trials,
                    yes: row.yes_count,
                },
            ));
        }
        Self::from_cells(cells)
    }
}

/// Number of Monte Carlo draws behind [`studentized_range_quantile`].
pub const STUDENTIZED_RANGE_SAMPLES: usize = 1 << 21;
const STUDENTIZED_RANGE_BATCHES: usize = 16;
const STUDENTIZED_RANGE_SEED: u64 = 0x5eed_7a11_0ca1_e5ed;

fn quantile_cache() -> &'static Mutex<HashMap<(usize, u64, u64), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64, u64), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Upper `alpha` critical value of the studentized range distribution for
/// `groups` means and `df` error degrees of freedom (`f64::INFINITY` for a
/// known variance). Estimated from 2^21 seeded draws, so repeated calls are
/// bit-identical; accuracy is about ±0.02.
pub fn studentized_range_quantile(groups: usize, df: f64, alpha: f64) -> Result<f64, TraitsError> {
    if groups < 2 {
        return Err(TraitsError::InvalidParameters(format!(
            "need at least 2 groups, got {groups}"
        )));
    }
    if df.is_nan() || df < 1.0 {
        return Err(TraitsError::InvalidParameters(format!(
            "degrees of freedom must be >= 1, got {df}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(TraitsError::InvalidParameters(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let key = (groups, df.to_bits(), alpha.to_bits());
    if let Some(q) = quantile_cache().lock().unwrap().get(&key) {
        return Ok(*q);
    }

    let per_batch = STUDENTIZED_RANGE_SAMPLES / STUDENTIZED_RANGE_BATCHES;
    let chi = df.is_finite().then(|| ChiSquared::new(df).expect("df >= 1"));
    let mut draws: Vec<f64> = (0..STUDENTIZED_RANGE_BATCHES)
        .into_par_iter()
        .flat_map_iter(|batch| {
            let mut rng = ChaCha8Rng::seed_from_u64(STUDENTIZED_RANGE_SEED);
            rng.set_stream(batch as u64);
            (0..per_batch)
                .map(|_| {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for _ in 0..groups {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        lo = lo.min(z);
                        hi = hi.max(z);
                    }
                    let scale = match &chi {
                        Some(c) => (c.sample(&mut rng) / df).sqrt(),
                        None => 1.0,
                    };
                    (hi - lo) / scale
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let rank = (((1.0 - alpha) * draws.len() as f64).ceil() as usize)
        .clamp(1, draws.len())
        - 1;
    let (_, q, _) = draws.select_nth_unstable_by(rank, f64::total_cmp);
    let q = *q;
    quantile_cache().lock().unwrap().insert(key, q);
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileGroup {
    pub id: usize,
    pub profiles: Vec<TraitProfile>,
    pub mean_rate: f64,
}

/// Partition of the profiles into behavioral groups, ids ascending in mean
/// sharing rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileGrouping {
    pub alpha: f64,
    pub groups: Vec<ProfileGroup>,
}

impl ProfileGrouping {
    /// 1-based group id of `profile`.
    pub fn group_of(&self, profile: TraitProfile) -> Option<usize> {
        self.groups
            .iter()
            .find(|g| g.profiles.contains(&profile))
            .map(|g| g.id)
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Group id for every profile index; `None` for unmapped profiles.
    pub fn lookup_table(&self) -> [Option<usize>; NUM_PROFILES] {
        let mut out = [None; NUM_PROFILES];
        for g in &self.groups {
            for p in &g.profiles {
                out[p.index()] = Some(g.id);
            }
        }
        out
    }

    /// Share of the 32 profiles that falls in each group, which is also the
    /// expected population share under balanced assignment.
    pub fn population_shares(&self) -> Vec<f64> {
        let total: usize = self.groups.iter().map(|g| g.profiles.len()).sum();
        self.groups
            .iter()
            .map(|g| g.profiles.len() as f64 / total as f64)
            .collect()
    }

    /// Two-group split with profiles given explicitly; mean rates are left at 0.
    pub fn two_groups(low: Vec<TraitProfile>, high: Vec<TraitProfile>) -> Self {
        Self {
            alpha: f64::NAN,
            groups: vec![
                ProfileGroup {
                    id: 1,
                    profiles: low,
                    mean_rate: 0.0,
                },
                ProfileGroup {
                    id: 2,
                    profiles: high,
                    mean_rate: 0.0,
                },
            ],
        }
    }
}

/// Pairwise Tukey HSD outcome for a set of sample groups.
#[derive(Debug, Clone)]
pub struct TukeyTable {
    pub means: Vec<f64>,
    pub sizes: Vec<usize>,
    pub mse: f64,
    pub df: f64,
    pub q_crit: f64,
}

impl TukeyTable {
    pub fn compute(samples: &[&[f64]], alpha: f64) -> Result<Self, TraitsError> {
        let k = samples.len();
        let total: usize = samples.iter().map(|s| s.len()).sum();
        let means: Vec<f64> = samples
            .iter()
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
            .collect();
        let sse: f64 = samples
            .iter()
            .zip(&means)
            .map(|(s, m)| s.iter().map(|x| (x - m).powi(2)).sum::<f64>())
            .sum();
        let df = (total - k) as f64;
        let q_crit = studentized_range_quantile(k, df, alpha)?;
        Ok(Self {
            means,
            sizes: samples.iter().map(|s| s.len()).collect(),
            mse: sse / df,
            df,
            q_crit,
        })
    }

    /// Honestly-significant-difference threshold for the pair `(i, j)`.
    pub fn threshold(&self, i: usize, j: usize) -> f64 {
        let inv = 1.0 / self.sizes[i] as f64 + 1.0 / self.sizes[j] as f64;
        self.q_crit * (self.mse / 2.0 * inv).sqrt()
    }

    pub fn significant(&self, i: usize, j: usize) -> bool {
        (self.means[i] - self.means[j]).abs() > self.threshold(i, j)
    }
}

/// Groups profiles by Tukey HSD. Profiles are sorted by mean rate and the
/// sequence is cut at every gap where all pairs straddling the gap differ
/// significantly; runs between cuts become groups.
pub fn tukey_grouping(
    samples: &BTreeMap<TraitProfile, Vec<f64>>,
    alpha: f64,
) -> Result<ProfileGrouping, TraitsError> {
    if samples.len() < 2 {
        return Err(TraitsError::InvalidParameters(
            "need at least 2 profiles".into(),
        ));
    }
    for (p, s) in samples {
        if s.len() < 2 {
            return Err(TraitsError::InsufficientSamples(*p));
        }
    }
    let profiles: Vec<TraitProfile> = samples.keys().copied().collect();
    let slices: Vec<&[f64]> = samples.values().map(Vec::as_slice).collect();
    let table = TukeyTable::compute(&slices, alpha)?;

    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by(|&a, &b| table.means[a].total_cmp(&table.means[b]).then(a.cmp(&b)));

    let mut cuts = Vec::new();
    for gap in 0..order.len() - 1 {
        let separates = order[..=gap]
            .iter()
            .all(|&i| order[gap + 1..].iter().all(|&j| table.significant(i, j)));
        if separates {
            cuts.push(gap + 1);
        }
    }
    cuts.push(order.len());

    let mut groups = Vec::with_capacity(cuts.len());
    let mut start = 0;
    for (id, end) in cuts.into_iter().enumerate() {
        let members = &order[start..end];
        let (sum, count) = members.iter().fold((0.0, 0usize), |(s, c), &i| {
            (s + slices[i].iter().sum::<f64>(), c + slices[i].len())
        });
        let mut group_profiles: Vec<TraitProfile> =
            members.iter().map(|&i| profiles[i]).collect();
        group_profiles.sort();
        groups.push(ProfileGroup {
            id: id + 1,
            profiles: group_profiles,
            mean_rate: sum / count as f64,
        });
        start = end;
    }
    Ok(ProfileGrouping { alpha, groups })
}

//! Event ingestion, embedding PCA, k-means clustering scored by silhouette,
//! and derivation of the binary severity label.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventsError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate event id {0:?}")]
    DuplicateId(String),
    #[error("invalid embeddings: {0}")]
    InvalidEmbeddings(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("need at least {needed} distinct values, found {found}")]
    InsufficientDistinctValues { needed: usize, found: usize },
    #[error("silhouette needs at least two non-empty clusters")]
    SingleClusterInput,
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("no event record for embedding id {0:?}")]
    MissingEvent(String),
}

/// Binary event severity: 0 peaceful, 1 severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Severity {
    Peaceful,
    Severe,
}

impl Severity {
    pub const ALL: [Severity; 2] = [Severity::Peaceful, Severity::Severe];

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }

    pub fn label(self) -> &'static str {
        match self {
            Severity::Peaceful => "peaceful",
            Severity::Severe => "severe",
        }
    }
}

impl From<Severity> for u8 {
    fn from(s: Severity) -> u8 {
        s.as_u8()
    }
}

impl TryFrom<u8> for Severity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Severity::Peaceful),
            1 => Ok(Severity::Severe),
            other => Err(format!("severity must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: String,
    pub text: String,
    pub disorder_type: String,
    pub event_type: String,
    pub sub_event_type: String,
}

/// Reads events from a JSONL file, one record per line. Blank lines are skipped.
pub fn ingest_events(path: impl AsRef<Path>) -> Result<Vec<EventRecord>, EventsError> {
    parse_events(BufReader::new(File::open(path)?))
}

pub fn parse_events<R: BufRead>(reader: R) -> Result<Vec<EventRecord>, EventsError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EventRecord = serde_json::from_str(&line).map_err(|e| EventsError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.text.trim().is_empty() {
            return Err(EventsError::Parse {
                line: i + 1,
                message: format!("event {:?} has empty text", rec.id),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(EventsError::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

/// One embedding vector per event id, all of the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self, EventsError> {
        if ids.len() != vectors.len() {
            return Err(EventsError::InvalidEmbeddings(format!(
                "{} ids but {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let d = vectors.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(EventsError::InvalidEmbeddings("empty embedding set".into()));
        }
        let mut seen = HashSet::new();
        for (id, v) in ids.iter().zip(&vectors) {
            if v.len() != d {
                return Err(EventsError::InvalidEmbeddings(format!(
                    "{id:?} has dimension {} (expected {d})",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EventsError::InvalidEmbeddings(format!(
                    "{id:?} has non-finite entries"
                )));
            }
            if !seen.insert(id.as_str()) {
                return Err(EventsError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { ids, vectors })
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, EventsError> {
        Self::parse_jsonl(BufReader::new(File::open(path)?))
    }

    pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Self, EventsError> {
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: EmbeddingRow = serde_json::from_str(&line).map_err(|e| EventsError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            ids.push(row.id);
            vectors.push(row.vector);
        }
        Self::new(ids, vectors)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            let row = EmbeddingRow {
                id: id.clone(),
                vector: v.clone(),
            };
            out.push_str(&serde_json::to_string(&row).expect("finite floats serialize"));
            out.push('\n');
        }
        out
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Principal-component projection of a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm, mutually orthogonal component directions.
    pub basis: Vec<Vec<f64>>,
    /// Sample-covariance eigenvalue of each component.
    pub variances: Vec<f64>,
    /// Projected coordinates, one row per input point.
    pub projections: Vec<Vec<f64>>,
}

impl Pca {
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.basis.iter().map(|b| dot(b, &centered)).collect()
    }
}

const POWER_MAX_ITERS: usize = 50_000;
const POWER_TOL: f64 = 1e-13;

/// Top-`m` principal components by power iteration with deflation on the
/// sample covariance. Each basis vector is signed so that its largest
/// magnitude entry is positive.
pub fn principal_components(points: &[Vec<f64>], m: usize) -> Result<Pca, EventsError> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    if m == 0 || m > d {
        return Err(EventsError::InvalidParameters(format!(
            "component count {m} must be in 1..={d}"
        )));
    }
    if n < m + 1 {
        return Err(EventsError::InvalidParameters(format!(
            "{n} points cannot support {m} components"
        )));
    }
    let mut mean = vec![0.0; d];
    for p in points {
        for (acc, x) in mean.iter_mut().zip(p) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= n as f64);
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let total_var: f64 = centered.iter().map(|r| dot(r, r)).sum();
    if total_var == 0.0 {
        return Err(EventsError::DegenerateInput(
            "all vectors are identical".into(),
        ));
    }

    let denom = (n - 1) as f64;
    let cov_times = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for row in &centered {
            let s = dot(row, v);
            for (o, x) in out.iter_mut().zip(row) {
                *o += s * x;
            }
        }
        out.iter_mut().for_each(|x| *x /= denom);
        out
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x9ca);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut variances = Vec::with_capacity(m);
    for _ in 0..m {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        orthonormalize(&mut v, &basis);
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let mut w = cov_times(&v);
            for (b, &lam) in basis.iter().zip(&variances) {
                let c = lam * dot(b, &v);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
            lambda = dot(&w, &v);
            if norm(&w) < 1e-300 {
                break;
            }
            orthonormalize(&mut w, &basis);
            let delta = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = w;
            if delta < POWER_TOL {
                break;
            }
        }
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        basis.push(v);
        variances.push(lambda.max(0.0));
    }
    let projections = centered
        .iter()
        .map(|r| basis.iter().map(|b| dot(b, r)).collect())
        .collect();
    Ok(Pca {
        mean,
        basis,
        variances,
        projections,
    })
}

fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // Two Gram-Schmidt passes keep orthogonality at machine precision.
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, v);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
    }
    let nv = norm(v);
    if nv > 0.0 {
        v.iter_mut().for_each(|x| *x /= nv);
    }
}

/// Result of k-means. Clusters are labelled in ascending order of the first
/// centroid coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
    /// Objective after every Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

pub const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITERS: usize = 300;

/// Lloyd's k-means with k-means++ seeding and 20 restarts; the restart with
/// the lowest within-cluster sum of squares wins.
pub fn kmeans(points: &[Vec<f64>], c: usize, seed: u64) -> Result<KMeans, EventsError> {
    if c < 2 {
        return Err(EventsError::InvalidParameters(format!(
            "cluster count must be >= 2, got {c}"
        )));
    }
    let distinct = count_distinct(points, c);
    if distinct < c {
        return Err(EventsError::InsufficientDistinctValues {
            needed: c,
            found: distinct,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = lloyd(points, plus_plus_init(points, c, &mut rng));
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(canonical_labels(best.expect("at least one restart")))
}

/// k-means on scalar projections.
pub fn cluster_1d(values: &[f64], c: usize, seed: u64) -> Result<KMeans, EventsError> {
    let points: Vec<Vec<f64>> = values.iter().map(|&x| vec![x]).collect();
    kmeans(&points, c, seed)
}

fn count_distinct(points: &[Vec<f64>], cap: usize) -> usize {
    let mut uniq: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !uniq.iter().any(|q| *q == p) {
            uniq.push(p);
            if uniq.len() >= cap {
                break;
            }
        }
    }
    uniq.len()
}

fn plus_plus_init(points: &[Vec<f64>], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < c {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&x| x > 0.0).unwrap_or(0);
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        centroids.push(points[pick].clone());
        for (dist, p) in d2.iter_mut().zip(points) {
            *dist = dist.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let c = centroids.len();
    let d = points[0].len();
    let mut assignment = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (j, _) = nearest(p, &centroids);
            changed |= *a != j;
            *a = j;
        }
        // An emptied cluster takes over the point farthest from its centroid.
        for j in 0..c {
            if !assignment.contains(&j) {
                let far = (0..points.len())
                    .filter(|&i| assignment.iter().filter(|&&a| a == assignment[i]).count() > 1)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[assignment[a]])
                            .total_cmp(&sq_dist(&points[b], &centroids[assignment[b]]))
                    })
                    .expect("c <= distinct points");
                assignment[far] = j;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; c];
        let mut counts = vec![0usize; c];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((cent, sum), &cnt) in centroids.iter_mut().zip(sums).zip(&counts) {
            *cent = sum.into_iter().map(|s| s / cnt as f64).collect();
        }
        history.push(wcss(points, &assignment, &centroids));
        if !changed {
            break;
        }
    }
    KMeans {
        wcss: *history.last().expect("at least one iteration"),
        assignment,
        centroids,
        history,
    }
}

fn wcss(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

fn canonical_labels(mut km: KMeans) -> KMeans {
    let mut order: Vec<usize> = (0..km.centroids.len()).collect();
    order.sort_by(|&a, &b| {
        km.centroids[a]
            .iter()
            .zip(&km.centroids[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut relabel = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    km.assignment.iter_mut().for_each(|a| *a = relabel[*a]);
    km.centroids = order.iter().map(|&o| km.centroids[o].clone()).collect();
    km
}

/// Mean silhouette width with Euclidean distance. Points in singleton
/// clusters score 0, and a point with `max(a, b) = 0` also scores 0.
pub fn silhouette(points: &[Vec<f64>], assignment: &[usize]) -> Result<f64, EventsError> {
    if points.len() != assignment.len() {
        return Err(EventsError::InvalidParameters(
            "assignment length differs from point count".into(),
        ));
    }
    let c = assignment.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; c];
    for &a in assignment {
        sizes[a] += 1;
    }
    if c < 2 || sizes.iter().any(|&s| s == 0) {
        return Err(EventsError::SingleClusterInput);
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = assignment[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; c];
        for (q, &b) in points.iter().zip(assignment) {
            sums[b] += sq_dist(p, q).sqrt();
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..c)
            .filter(|&j| j != own)
            .map(|j| sums[j] / sizes[j] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

/// Maps ACLED-style labels (case-insensitive) to severity. Labels are looked
/// up in event type, then disorder type, then sub-event type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityLabelMap {
    pub labels: BTreeMap<String, u8>,
}

impl Default for SeverityLabelMap {
    fn default() -> Self {
        let severe = [
            "political violence",
            "violence against civilians",
            "battles",
            "explosions/remote violence",
            "riots",
            "attack",
            "armed clash",
            "abduction/forced disappearance",
        ];
        let peaceful = [
            "demonstrations",
            "protests",
            "peaceful protest",
            "protest with intervention",
            "strategic developments",
        ];
        let labels = severe
            .iter()
            .map(|l| (l.to_string(), 1))
            .chain(peaceful.iter().map(|l| (l.to_string(), 0)))
            .collect();
        Self { labels }
    }
}

impl SeverityLabelMap {
    pub fn severity(&self, ev: &EventRecord) -> Option<u8> {
        [&ev.event_type, &ev.disorder_type, &ev.sub_event_type]
            .iter()
            .find_map(|l| self.labels.get(&l.trim().to_lowercase()).copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub num_components: usize,
    pub num_clusters: usize,
    pub silhouette: f64,
}

/// The selected (components, clusters) combination and everything needed to
/// label new events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub num_components: usize,
    pub num_clusters: usize,
    pub mean: Vec<f64>,
    pub component_basis: Vec<Vec<f64>>,
    pub centroids: Vec<Vec<f64>>,
    /// Severity label per cluster; exactly one cluster carries 1.
    pub cluster_severity: Vec<u8>,
    pub silhouette: f64,
    pub assignments: BTreeMap<String, usize>,
    pub sweep: Vec<SweepEntry>,
}

impl ClusterModel {
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.component_basis.iter().map(|b| dot(b, &centered)).collect()
    }

    pub fn cluster_of_vector(&self, v: &[f64]) -> usize {
        nearest(&self.project(v), &self.centroids).0
    }

    pub fn severity_of(&self, event_id: &str) -> Option<Severity> {
        self.assignments
            .get(event_id)
            .and_then(|&c| Severity::try_from(self.cluster_severity[c]).ok())
    }
}

/// Sweeps component and cluster counts, keeping the highest silhouette. Ties
/// go to fewer components, then fewer clusters. The cluster with the largest
/// share of severe-labelled events is marked severe.
pub fn select_clustering(
    events: &[EventRecord],
    embeddings: &EmbeddingSet,
    component_range: impl IntoIterator<Item = usize>,
    cluster_range: impl IntoIterator<Item = usize> + Clone,
    seed: u64,
    labels: &SeverityLabelMap,
) -> Result<ClusterModel, EventsError> {
    let by_id: HashMap<&str, &EventRecord> = events.iter().map(|e| (e.id.as_str(), e)).collect();
    let member_events: Vec<&EventRecord> = embeddings
        .ids()
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| EventsError::MissingEvent(id.clone()))
        })
        .collect::<Result<_, _>>()?;

    let mut sweep = Vec::new();
    let mut best: Option<(Pca, KMeans, f64)> = None;
    for m in component_range {
        let pca = principal_components(embeddings.vectors(), m)?;
        for c in cluster_range.clone() {
            let km = kmeans(&pca.projections, c, seed)?;
            let score = silhouette(&pca.projections, &km.assignment)?;
            sweep.push(SweepEntry {
                num_components: m,
                num_clusters: c,
                silhouette: score,
            });
            if best.as_ref().is_none_or(|(_, _, s)| score > *s) {
                best = Some((pca.clone(), km, score));
            }
        }
    }
    let (pca, km, score) = best.ok_or_else(|| {
        EventsError::InvalidParameters("component and cluster ranges must be non-empty".into())
    })?;

    let c = km.centroids.len();
    let mut severe = vec![0usize; c];
    let mut sizes = vec![0usize; c];
    for (ev, &a) in member_events.iter().zip(&km.assignment) {
        sizes[a] += 1;
        severe[a] += usize::from(labels.severity(ev) == Some(1));
    }
    let severe_cluster = (0..c).fold(0, |best, j| {
        let frac = |i: usize| severe[i] as f64 / sizes[i] as f64;
        if frac(j) > frac(best) {
            j
        } else {
            best
        }
    });
    let cluster_severity = (0..c).map(|j| u8::from(j == severe_cluster)).collect();

    Ok(ClusterModel {
        num_components: pca.basis.len(),
        num_clusters: c,
        mean: pca.mean,
        component_basis: pca.basis,
        centroids: km.centroids,
        cluster_severity,
        silhouette: score,
        assignments: embeddings
            .ids()
            .iter()
            .cloned()
            .zip(km.assignment.iter().copied())
            .collect(),
        sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn ev(id: &str, event_type: &str) -> EventRecord {
        EventRecord {
            id: id.into(),
            text: format!("text of {id}"),
            disorder_type: String::new(),
            event_type: event_type.into(),
            sub_event_type: String::new(),
        }
    }

    #[test]
    fn parses_two_rows() {
        let text = [
            serde_json::to_string(&ev("a", "Protests")).unwrap(),
            serde_json::to_string(&ev("b", "Battles")).unwrap(),
        ]
        .join("\n");
        let evs = parse_events(Cursor::new(text)).unwrap();
        assert_eq!(evs.len(), 2);
        assert_eq!(evs[1].event_type, "Battles");
    }

    #[test]
    fn duplicate_id_named() {
        let row = serde_json::to_string(&ev("dup", "Protests")).unwrap();
        let err = parse_events(Cursor::new(format!("{row}\n{row}\n"))).unwrap_err();
        assert!(matches!(err, EventsError::DuplicateId(ref id) if id == "dup"));
    }

    #[test]
    fn parse_error_has_line_number() {
        let row = serde_json::to_string(&ev("a", "Protests")).unwrap();
        let err = parse_events(Cursor::new(format!("{row}\n{{oops\n"))).unwrap_err();
        assert!(matches!(err, EventsError::Parse { line: 2, .. }));
    }

    #[test]
    fn pca_on_a_line() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        let pca = principal_components(&pts, 1).unwrap();
        let s = 2f64.sqrt();
        for (p, want) in pca.projections.iter().zip([-s, 0.0, s]) {
            assert!((p[0] - want).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn pca_two_points() {
        let pca = principal_components(&[vec![1.0, 0.0], vec![-1.0, 0.0]], 1).unwrap();
        assert!((pca.basis[0][0] - 1.0).abs() < 1e-12 && pca.basis[0][1].abs() < 1e-12);
        assert!((pca.projections[0][0] - 1.0).abs() < 1e-12);
        assert!((pca.projections[1][0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_identical_points_degenerate() {
        let pts = vec![vec![3.0, 1.0]; 4];
        assert!(matches!(
            principal_components(&pts, 1),
            Err(EventsError::DegenerateInput(_))
        ));
    }

    #[test]
    fn kmeans_well_separated() {
        let km = cluster_1d(&[0.0, 0.1, 10.0, 10.1], 2, 1).unwrap();
        assert_eq!(km.assignment, vec![0, 0, 1, 1]);
        assert!((km.centroids[0][0] - 0.05).abs() < 1e-12);
        assert!(km.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn kmeans_needs_distinct_values() {
        assert!(matches!(
            cluster_1d(&[5.0; 4], 2, 0),
            Err(EventsError::InsufficientDistinctValues { needed: 2, found: 1 })
        ));
    }

    #[test]
    fn silhouette_four_points_by_hand() {
        let pts: Vec<Vec<f64>> = [0.0, 0.1, 10.0, 10.1].iter().map(|&x| vec![x]).collect();
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        // point 0: a = 0.1, b = (10 + 10.1)/2 = 10.05 -> 1 - 0.1/10.05
        let s0 = 1.0 - 0.1 / 10.05;
        let s1 = 1.0 - 0.1 / 9.95;
        assert!((s - (s0 + s1) / 2.0).abs() < 1e-12);
        assert!(s >= 0.97);
    }

    #[test]
    fn silhouette_identical_points_is_zero() {
        let pts = vec![vec![1.0]; 4];
        assert_eq!(silhouette(&pts, &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn silhouette_single_cluster_rejected() {
        let pts = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            silhouette(&pts, &[0, 0]),
            Err(EventsError::SingleClusterInput)
        ));
    }

    #[test]
    fn default_label_map() {
        let m = SeverityLabelMap::default();
        assert_eq!(m.severity(&ev("x", "Violence against civilians")), Some(1));
        assert_eq!(m.severity(&ev("x", "Protests")), Some(0));
        assert_eq!(m.severity(&ev("x", "Something else")), None);
    }
}

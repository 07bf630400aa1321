//! Random k-regular networks built by stub pairing.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("no {what} graph found after {attempts} attempts")]
    GenerationFailure { what: &'static str, attempts: usize },
}

/// Knobs for [`generate_k_regular_with`].
#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Reject disconnected realizations and draw again.
    pub require_connected: bool,
    /// Budget of whole-graph redraws spent on the connectivity requirement.
    pub max_connect_attempts: usize,
    /// Budget of stub-pairing restarts for a single simple graph.
    pub max_pairing_attempts: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            require_connected: true,
            max_connect_attempts: 1000,
            max_pairing_attempts: 1_000_000,
        }
    }
}

/// Undirected simple k-regular graph. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    k: usize,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an explicit edge list, checking that the result is
    /// simple and k-regular.
    pub fn from_edges(n: usize, k: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut adjacency = vec![Vec::with_capacity(k); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::InvalidParameters(format!(
                    "edge ({a}, {b}) out of range for n = {n}"
                )));
            }
            if a == b {
                return Err(GraphError::InvalidParameters(format!("self-loop at {a}")));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for (i, nbrs) in adjacency.iter_mut().enumerate() {
            nbrs.sort_unstable();
            if nbrs.windows(2).any(|w| w[0] == w[1]) {
                return Err(GraphError::InvalidParameters(format!(
                    "duplicate edge at node {i}"
                )));
            }
            if nbrs.len() != k {
                return Err(GraphError::InvalidParameters(format!(
                    "node {i} has degree {} (expected {k})",
                    nbrs.len()
                )));
            }
        }
        Ok(Self { n, k, adjacency })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Sorted neighbor list of `node`.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Edges as `(i, j)` with `i < j`, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            out.extend(nbrs.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    /// BFS hop distance from `source` to every node; `None` when unreachable.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// True iff a traversal from node 0 reaches every node.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        self.bfs_distances(0).iter().all(Option::is_some)
    }
}

/// Generates a random simple k-regular graph on `n` nodes, retrying until
/// the realization is connected.
pub fn generate_k_regular(n: usize, k: usize, seed: u64) -> Result<Graph, GraphError> {
    generate_k_regular_with(n, k, seed, &GenerateOptions::default())
}

pub fn generate_k_regular_with(
    n: usize,
    k: usize,
    seed: u64,
    opts: &GenerateOptions,
) -> Result<Graph, GraphError> {
    if n == 0 || k >= n {
        return Err(GraphError::InvalidParameters(format!(
            "degree k = {k} must be below n = {n}"
        )));
    }
    if (n * k) % 2 == 1 {
        return Err(GraphError::InvalidParameters(format!(
            "n * k = {} is odd",
            n * k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attempts = if opts.require_connected {
        opts.max_connect_attempts.max(1)
    } else {
        1
    };
    for _ in 0..attempts {
        let g = pair_stubs(n, k, &mut rng, opts.max_pairing_attempts)?;
        if !opts.require_connected || g.is_connected() {
            return Ok(g);
        }
    }
    Err(GraphError::GenerationFailure {
        what: "connected",
        attempts,
    })
}

fn pair_stubs(
    n: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
    max_attempts: usize,
) -> Result<Graph, GraphError> {
    let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::with_capacity(k); n];
    'attempt: for _ in 0..max_attempts {
        stubs.shuffle(rng);
        adjacency.iter_mut().for_each(Vec::clear);
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0], pair[1]);
            if a == b || adjacency[a].contains(&b) {
                continue 'attempt;
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        return Ok(Graph {
            n,
            k,
            adjacency: adjacency.clone(),
        });
    }
    Err(GraphError::GenerationFailure {
        what: "simple",
        attempts: max_attempts,
    })
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    n: usize,
    k: usize,
    edges: Vec<[usize; 2]>,
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GraphJson {
            n: self.n,
            k: self.k,
            edges: self.edges().into_iter().map(|(a, b)| [a, b]).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = GraphJson::deserialize(deserializer)?;
        let edges: Vec<(usize, usize)> = raw.edges.iter().map(|e| (e[0], e[1])).collect();
        Graph::from_edges(raw.n, raw.k, &edges).map_err(serde::de::Error::custom)
    }
}

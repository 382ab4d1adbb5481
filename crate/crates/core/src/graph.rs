//! Undirected simple graphs and the generators used by the experiments.
//!
//! Nodes are dense 0-based integers. Edges are stored as a sorted set of
//! `(min, max)` pairs, so iteration order (and any CSV emitted from it) is
//! deterministic.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::Mat;

/// Generator provenance carried by a [`Graph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GraphMeta {
    ErdosRenyi { n: usize, p: f64, seed: u64 },
    KnnRing { n: usize, k: usize },
    Sbm { n1: usize, n2: usize, p: f64, q: f64, seed: u64 },
    BarabasiAlbert { n: usize, m: usize, seed: u64 },
    EdgeCsv { path: String },
}

impl fmt::Display for GraphMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphMeta::ErdosRenyi { n, p, seed } => write!(f, "er(n={n},p={p},seed={seed})"),
            GraphMeta::KnnRing { n, k } => write!(f, "knn(n={n},k={k})"),
            GraphMeta::Sbm { n1, n2, p, q, seed } => {
                write!(f, "sbm(n1={n1},n2={n2},p={p},q={q},seed={seed})")
            }
            GraphMeta::BarabasiAlbert { n, m, seed } => write!(f, "ba(n={n},m={m},seed={seed})"),
            GraphMeta::EdgeCsv { path } => write!(f, "csv({path})"),
        }
    }
}

/// An undirected simple graph: no self-loops, no duplicate edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    meta: Option<GraphMeta>,
}

impl Graph {
    /// Build a graph from an edge list, validating the simple-graph invariants.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::parameter("graph must have at least one node"));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::parameter(format!("self-loop at node {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::parameter(format!(
                    "edge ({u},{v}) out of range for n={n}"
                )));
            }
            set.insert((u.min(v), u.max(v)));
        }
        Ok(Graph { n, edges: set, meta: None })
    }

    fn with_meta(mut self, meta: GraphMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as sorted `(u, v)` pairs with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn meta(&self) -> Option<&GraphMeta> {
        self.meta.as_ref()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == v || b == v)
            .count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Dense symmetric 0/1 adjacency matrix with zero diagonal.
    pub fn adjacency_matrix(&self) -> Mat {
        let mut a = Mat::zeros((self.n, self.n));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::parameter(format!("{name}={p} must lie in [0, 1]")));
    }
    Ok(())
}

/// Erdős–Rényi graph G(n, p): each of the C(n, 2) edges enters independently
/// with probability `p`. Deterministic per `(n, p, seed)`.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::parameter("n must be positive"));
    }
    check_probability("p", p)?;
    let mut rng = seeded(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok(Graph::new(n, edges)?.with_meta(GraphMeta::ErdosRenyi { n, p, seed }))
}

/// k-nearest-neighbor ring K_k(n): nodes equidistant on a circle, node `i`
/// adjacent to `i ± 1, ..., i ± k/2` (mod n). `k` must be even and `< n`.
pub fn knn_ring(n: usize, k: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::parameter("n must be positive"));
    }
    if k == 0 || k % 2 != 0 {
        return Err(Error::parameter(format!("k={k} must be even and positive")));
    }
    if k >= n {
        return Err(Error::parameter(format!("k={k} must be smaller than n={n}")));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for d in 1..=(k / 2) {
            edges.push((i, (i + d) % n));
        }
    }
    Ok(Graph::new(n, edges)?.with_meta(GraphMeta::KnnRing { n, k }))
}

/// Two-block stochastic block model: nodes `0..n1` form block 1 and
/// `n1..n1+n2` block 2; intra-block edges appear with probability `p`,
/// inter-block with probability `q`.
pub fn sbm(n1: usize, n2: usize, p: f64, q: f64, seed: u64) -> Result<Graph> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::parameter("both blocks must be non-empty"));
    }
    check_probability("p", p)?;
    check_probability("q", q)?;
    let n = n1 + n2;
    let mut rng = seeded(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let same_block = (i < n1) == (j < n1);
            let prob = if same_block { p } else { q };
            if rng.random::<f64>() < prob {
                edges.push((i, j));
            }
        }
    }
    Ok(Graph::new(n, edges)?.with_meta(GraphMeta::Sbm { n1, n2, p, q, seed }))
}

/// Barabási–Albert preferential attachment BA(n, m).
///
/// The core is the complete graph on the first `m` nodes, which makes the
/// edge count exactly `m(m-1)/2 + (n-m)m`. Every later node attaches `m`
/// distinct edges to existing nodes, chosen with probability proportional to
/// current degree (no multi-edges). With `m = 1` the initial core has zero
/// total degree, so the very first attachment target is chosen uniformly.
pub fn barabasi_albert(n: usize, m: usize, seed: u64) -> Result<Graph> {
    if m == 0 {
        return Err(Error::parameter("m must be positive"));
    }
    if m >= n {
        return Err(Error::parameter(format!("m={m} must be smaller than n={n}")));
    }
    let mut rng = seeded(seed);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    // Each node appears once per incident edge; sampling an element uniformly
    // from this list is degree-proportional sampling.
    let mut repeated: Vec<usize> = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            edges.push((i, j));
            repeated.push(i);
            repeated.push(j);
        }
    }
    for v in m..n {
        let mut targets: Vec<usize> = Vec::with_capacity(m);
        while targets.len() < m {
            let t = if repeated.is_empty() {
                rng.random_range(0..v)
            } else {
                repeated[rng.random_range(0..repeated.len())]
            };
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            edges.push((t, v));
            repeated.push(t);
            repeated.push(v);
        }
    }
    Ok(Graph::new(n, edges)?.with_meta(GraphMeta::BarabasiAlbert { n, m, seed }))
}

/// Result of [`load_edge_csv`]: the graph plus counts of silently dropped
/// lines.
#[derive(Debug, Clone)]
pub struct EdgeCsvLoad {
    pub graph: Graph,
    pub dropped_self_loops: usize,
    pub dropped_duplicates: usize,
    pub skipped_header: bool,
}

/// Load an undirected graph from a `u,v` edge-list CSV.
///
/// Node ids are compacted to `0..n-1` preserving first-appearance order. A
/// non-numeric first line is treated as a header. Duplicate edges and
/// self-loops are dropped and counted.
pub fn load_edge_csv(path: impl AsRef<Path>) -> Result<EdgeCsvLoad> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_edge_csv(
        BufReader::new(file),
        path.as_ref().display().to_string(),
    )
}

fn parse_edge_csv(reader: impl BufRead, origin: String) -> Result<EdgeCsvLoad> {
    let mut ids: Vec<i64> = Vec::new();
    let mut index_of = std::collections::HashMap::new();
    let mut intern = |raw: i64, ids: &mut Vec<i64>| -> usize {
        *index_of.entry(raw).or_insert_with(|| {
            ids.push(raw);
            ids.len() - 1
        })
    };

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut dropped_self_loops = 0;
    let mut dropped_duplicates = 0;
    let mut skipped_header = false;

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim_end_matches('\r').trim();
        if trimmed.is_empty() {
            continue;
        }
        let parsed = parse_edge_line(trimmed);
        match parsed {
            Ok((u, v)) => {
                let ui = intern(u, &mut ids);
                let vi = intern(v, &mut ids);
                if ui == vi {
                    dropped_self_loops += 1;
                } else if !edges.insert((ui.min(vi), ui.max(vi))) {
                    dropped_duplicates += 1;
                }
            }
            Err(msg) => {
                // Header detection: only the first non-empty line may be
                // non-numeric.
                if lineno == 1 && !skipped_header {
                    skipped_header = true;
                    continue;
                }
                return Err(Error::Parse { line: lineno, message: msg });
            }
        }
    }

    if ids.is_empty() {
        return Err(Error::parameter(format!("{origin}: no edges found")));
    }
    let graph = Graph::new(ids.len(), edges)?.with_meta(GraphMeta::EdgeCsv { path: origin });
    Ok(EdgeCsvLoad { graph, dropped_self_loops, dropped_duplicates, skipped_header })
}

fn parse_edge_line(line: &str) -> std::result::Result<(i64, i64), String> {
    let mut parts = line.split(',');
    let u = parts.next().ok_or("missing first id")?.trim();
    let v = parts.next().ok_or_else(|| "expected \"u,v\"".to_string())?.trim();
    if parts.next().is_some() {
        return Err("expected exactly two comma-separated ids".into());
    }
    let u: i64 = u.parse().map_err(|_| format!("invalid node id {u:?}"))?;
    let v: i64 = v.parse().map_err(|_| format!("invalid node id {v:?}"))?;
    Ok((u, v))
}

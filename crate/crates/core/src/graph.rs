//! Immutable graph representation plus the brute-force oracles (BFS, triangle
//! enumeration, component analysis) that ground-truth every generated label.

use crate::error::{AmpError, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::{BufRead, Write};

pub type NodeId = usize;

/// Undirected simple graph with per-node feature vectors and optional labels.
///
/// Neighbor lists are strictly sorted, adjacency is symmetric, and there are
/// no self-loops or multi-edges. Instances are immutable after construction
/// and safe to share across concurrent runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    adjacency: Vec<Vec<NodeId>>,
    features: Vec<Vec<f64>>,
    pub node_labels: Option<Vec<usize>>,
    pub graph_label: Option<usize>,
}

impl Graph {
    /// Builds a graph from an undirected edge list, validating all invariants.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)], features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != n {
            return Err(AmpError::contract(format!(
                "feature rows {} != node count {}",
                features.len(),
                n
            )));
        }
        let width = features.first().map_or(0, Vec::len);
        if features.iter().any(|f| f.len() != width) {
            return Err(AmpError::contract("feature width not uniform".to_string()));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(AmpError::invalid(format!("edge ({u}, {v}) out of range for n={n}")));
            }
            if u == v {
                return Err(AmpError::invalid(format!("self-loop at node {u}")));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(AmpError::invalid("multi-edge in edge list".to_string()));
            }
        }
        Ok(Graph {
            n,
            adjacency,
            features,
            node_labels: None,
            graph_label: None,
        })
    }

    /// Same as [`from_edges`](Self::from_edges) with constant-1 features of width 1.
    pub fn from_edges_unit(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        Self::from_edges(n, edges, vec![vec![1.0]; n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn feature_width(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    pub fn features(&self, v: NodeId) -> &[f64] {
        &self.features[v]
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for u in 0..self.n {
            for &v in &self.adjacency[u] {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Self {
        self.node_labels = Some(labels);
        self
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn with_features(mut self, features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != self.n {
            return Err(AmpError::contract("feature rows != node count".to_string()));
        }
        let width = features.first().map_or(0, Vec::len);
        if features.iter().any(|f| f.len() != width) {
            return Err(AmpError::contract("feature width not uniform".to_string()));
        }
        self.features = features;
        Ok(self)
    }

    /// Relabels nodes by `perm` where `perm[old] = new`. Labels and features move along.
    pub fn permuted(&self, perm: &[NodeId]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(AmpError::invalid("permutation length mismatch".to_string()));
        }
        let edges: Vec<(NodeId, NodeId)> = self.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut features = vec![Vec::new(); self.n];
        for v in 0..self.n {
            features[perm[v]] = self.features[v].clone();
        }
        let mut g = Graph::from_edges(self.n, &edges, features)?;
        if let Some(labels) = &self.node_labels {
            let mut moved = vec![0; self.n];
            for v in 0..self.n {
                moved[perm[v]] = labels[v];
            }
            g.node_labels = Some(moved);
        }
        g.graph_label = self.graph_label;
        Ok(g)
    }
}

/// Unweighted shortest-path distances from `start`; `None` for unreachable nodes.
pub fn bfs_distances(g: &Graph, start: NodeId) -> Result<Vec<Option<usize>>> {
    if start >= g.n() {
        return Err(AmpError::invalid(format!("start {} out of range for n={}", start, g.n())));
    }
    let mut dist = vec![None; g.n()];
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in g.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    Ok(dist)
}

pub fn is_connected(g: &Graph) -> bool {
    if g.n() == 0 {
        return true;
    }
    bfs_distances(g, 0).unwrap().iter().all(Option::is_some)
}

/// Connected component id per node, ids assigned in discovery order.
pub fn components(g: &Graph) -> Vec<usize> {
    let mut comp = vec![usize::MAX; g.n()];
    let mut next = 0;
    for s in 0..g.n() {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = next;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in g.neighbors(u) {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    comp
}

pub fn component_sizes(g: &Graph) -> Vec<usize> {
    let comp = components(g);
    let count = comp.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0; count];
    for c in comp {
        sizes[c] += 1;
    }
    sizes
}

/// Number of triangles through each node, by enumeration of neighbor pairs.
pub fn triangle_counts(g: &Graph) -> Vec<usize> {
    (0..g.n())
        .map(|v| {
            let nb = g.neighbors(v);
            let mut count = 0;
            for i in 0..nb.len() {
                for j in i + 1..nb.len() {
                    if g.has_edge(nb[i], nb[j]) {
                        count += 1;
                    }
                }
            }
            count
        })
        .collect()
}

/// Local clustering coefficient per node; 0 for degree < 2.
pub fn local_clustering(g: &Graph) -> Vec<f64> {
    triangle_counts(g)
        .iter()
        .enumerate()
        .map(|(v, &t)| {
            let d = g.degree(v);
            if d < 2 {
                0.0
            } else {
                2.0 * t as f64 / (d as f64 * (d - 1) as f64)
            }
        })
        .collect()
}

/// What a dataset instance asks of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    NodeClassification,
    GraphClassification,
    MultiStartNodeClassification,
}

/// A labeled graph plus task framing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetInstance {
    pub graph: Graph,
    pub task_kind: TaskKind,
    /// Start nodes for tasks where the initial message marks the start.
    pub start_marks: Option<Vec<NodeId>>,
}

impl DatasetInstance {
    pub fn node_task(graph: Graph) -> Result<Self> {
        if graph.node_labels.is_none() {
            return Err(AmpError::contract("node task requires node labels".to_string()));
        }
        Ok(DatasetInstance {
            graph,
            task_kind: TaskKind::NodeClassification,
            start_marks: None,
        })
    }

    pub fn graph_task(graph: Graph) -> Result<Self> {
        if graph.graph_label.is_none() {
            return Err(AmpError::contract("graph task requires a graph label".to_string()));
        }
        Ok(DatasetInstance {
            graph,
            task_kind: TaskKind::GraphClassification,
            start_marks: None,
        })
    }
}

/// Writes the line-oriented text format: header `n d_in`, n feature lines,
/// edge lines `u v`, and optionally a final `label <class>` line.
pub fn write_graph_text<W: Write>(g: &Graph, mut out: W) -> Result<()> {
    writeln!(out, "{} {}", g.n(), g.feature_width())?;
    for v in 0..g.n() {
        let row: Vec<String> = g.features(v).iter().map(|x| format!("{x}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    for (u, v) in g.edges() {
        writeln!(out, "{u} {v}")?;
    }
    if let Some(label) = g.graph_label {
        writeln!(out, "label {label}")?;
    }
    Ok(())
}

/// Reads the text format produced by [`write_graph_text`].
pub fn read_graph_text<R: BufRead>(input: R) -> Result<Graph> {
    let mut lines = input.lines().enumerate();
    let parse_err = |line: usize, msg: &str| AmpError::ParseError {
        line: line + 1,
        message: msg.to_string(),
    };

    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty input"))?
        .1
        .map(|s| (0usize, s))
        .map_err(AmpError::Io)?;
    let _ = hline;
    let mut parts = header.split_whitespace();
    let n: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(0, "bad node count"))?;
    let d_in: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(0, "bad feature width"))?;

    let mut features = Vec::with_capacity(n);
    for i in 0..n {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(i + 1, "missing feature line"))?;
        let line = line.map_err(AmpError::Io)?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(ln, "bad feature value"))?;
        if row.len() != d_in {
            return Err(parse_err(ln, "feature width mismatch"));
        }
        features.push(row);
    }

    let mut edges = Vec::new();
    let mut label = None;
    for (ln, line) in lines {
        let line = line.map_err(AmpError::Io)?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("label ") {
            label = Some(
                rest.trim()
                    .parse::<usize>()
                    .map_err(|_| parse_err(ln, "bad label"))?,
            );
            continue;
        }
        let mut ps = line.split_whitespace();
        let u: usize = ps
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(ln, "bad edge endpoint"))?;
        let v: usize = ps
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(ln, "bad edge endpoint"))?;
        edges.push((u, v));
    }

    let mut g = Graph::from_edges(n, &edges, features)?;
    g.graph_label = label;
    Ok(g)
}

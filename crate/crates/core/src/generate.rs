//! Deterministic synthetic benchmark generators.
//!
//! Every generator is a pure function of its arguments and seed, and every
//! label it attaches agrees with the brute-force oracles in [`crate::graph`].

use crate::error::{AmpError, Result};
use crate::graph::{
    bfs_distances, is_connected, local_clustering, read_graph_text, triangle_counts, DatasetInstance,
    Graph, TaskKind,
};
use crate::wl::wl_indistinguishable;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Connected graph built from a uniform random spanning tree plus
/// `floor(n/5)` extra edges sampled without replacement from non-tree pairs.
pub fn generate_spanning_tree_graph(n: usize, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(AmpError::invalid(format!("spanning tree graph needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Random tree: attach each node (in shuffled order) to a uniformly chosen
    // earlier node of the shuffled sequence.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n - 1 + n / 5);
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.push((order[i], order[j]));
    }

    let mut present = std::collections::HashSet::new();
    for &(u, v) in &edges {
        present.insert((u.min(v), u.max(v)));
    }
    let extras = n / 5;
    let mut added = 0;
    while added < extras {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if present.insert(key) {
            edges.push(key);
            added += 1;
        }
    }

    Graph::from_edges_unit(n, &edges)
}

/// The 1-WL-indistinguishable pair: two disjoint 4-cycles versus one 8-cycle,
/// all node features identical. Node label = cycle-length class (0 for the
/// 4-cycles, 1 for the 8-cycle).
pub fn generate_cycle_pair() -> (Graph, Graph) {
    let a = Graph::from_edges_unit(
        8,
        &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4)],
    )
    .unwrap()
    .with_node_labels(vec![0; 8]);
    let b = Graph::from_edges_unit(
        8,
        &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 0)],
    )
    .unwrap()
    .with_node_labels(vec![1; 8]);
    (a, b)
}

/// One graph per class: a cycle of `len` nodes plus chords `{i, i+skip mod len}`
/// with `skip = floor(len/2) - 1`. Regular of degree 4, graph label = class index.
pub fn generate_skip_cycles(lengths: &[usize]) -> Result<Vec<DatasetInstance>> {
    let mut out = Vec::with_capacity(lengths.len());
    for (class, &len) in lengths.iter().enumerate() {
        if len < 9 {
            return Err(AmpError::invalid(format!("skip cycle length must be >= 9, got {len}")));
        }
        let skip = len / 2 - 1;
        let mut edges: Vec<(usize, usize)> = (0..len).map(|i| (i, (i + 1) % len)).collect();
        for i in 0..len {
            edges.push((i, (i + skip) % len));
        }
        let g = Graph::from_edges_unit(len, &edges)?.with_graph_label(class);
        out.push(DatasetInstance::graph_task(g)?);
    }
    Ok(out)
}

/// Node-level labels for the triangle-count and clustering-coefficient tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatistic {
    Triangles,
    ClusteringCoefficient,
}

/// Random connected graphs (mean degree ~ 4) with node labels computed by the
/// brute-force oracle: triangle counts or clustering coefficients bucketed
/// into four classes.
pub fn generate_triangle_lcc_data(
    n_graphs: usize,
    n: usize,
    statistic: NodeStatistic,
    seed: u64,
) -> Result<Vec<DatasetInstance>> {
    if n < 4 {
        return Err(AmpError::invalid(format!("triangle/LCC graphs need n >= 4, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = (4.0 / (n as f64 - 1.0)).min(1.0);
    let mut out = Vec::with_capacity(n_graphs);
    while out.len() < n_graphs {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::from_edges_unit(n, &edges)?;
        if !is_connected(&g) {
            continue;
        }
        let labels = match statistic {
            NodeStatistic::Triangles => triangle_counts(&g).iter().map(|&t| t.min(3)).collect(),
            NodeStatistic::ClusteringCoefficient => local_clustering(&g)
                .iter()
                .map(|&c| {
                    if c == 0.0 {
                        0
                    } else if c <= 1.0 / 3.0 {
                        1
                    } else if c <= 2.0 / 3.0 {
                        2
                    } else {
                        3
                    }
                })
                .collect(),
        };
        out.push(DatasetInstance::node_task(g.with_node_labels(labels))?);
    }
    Ok(out)
}

/// Random connected graph with a degree cap and random features in (-1, 1),
/// built by rejection sampling over spanning-tree graphs. Used by the
/// simulation-equivalence suites.
pub fn random_connected_graph(n: usize, d_in: usize, max_degree: usize, seed: u64) -> Result<Graph> {
    if max_degree < 2 {
        return Err(AmpError::invalid("max_degree must be >= 2".to_string()));
    }
    let mut attempt = 0u64;
    loop {
        let g = generate_spanning_tree_graph(n, seed.wrapping_add(attempt.wrapping_mul(0x2545f4914f6cdd1d)))?;
        if (0..n).all(|v| g.degree(v) <= max_degree) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1b54a32d192ed03);
            let features = (0..n)
                .map(|_| (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            return g.with_features(features);
        }
        attempt += 1;
        if attempt > 10_000 {
            return Err(AmpError::invalid(format!(
                "could not sample a connected graph with max degree {max_degree}"
            )));
        }
    }
}

/// Star with `k` outer nodes where the outer nodes are pairwise connected.
/// Node 0 is the center; every node ends up with degree `k`.
pub fn star_graph(k: usize) -> Result<Graph> {
    if k < 1 {
        return Err(AmpError::invalid(format!("star graph needs k >= 1, got {k}")));
    }
    let mut edges: Vec<(usize, usize)> = (1..=k).map(|v| (0, v)).collect();
    for u in 1..=k {
        for v in u + 1..=k {
            edges.push((u, v));
        }
    }
    Graph::from_edges_unit(k + 1, &edges)
}

/// A fixed expressiveness benchmark: a pair of non-isomorphic graphs that
/// 1-WL refinement cannot separate, shipped as hand-entered edge lists.
#[derive(Debug, Clone)]
pub struct FixedPair {
    pub name: &'static str,
    pub a: Graph,
    pub b: Graph,
}

/// Loads the hand-entered fixed pairs and validates each one with the
/// color-refinement oracle before returning it.
pub fn fixed_construction_pairs() -> Result<Vec<FixedPair>> {
    let sources: [(&'static str, &str, &str); 4] = [
        (
            "limits1",
            include_str!("../data/limits1_a.txt"),
            include_str!("../data/limits1_b.txt"),
        ),
        (
            "limits2",
            include_str!("../data/limits2_a.txt"),
            include_str!("../data/limits2_b.txt"),
        ),
        (
            "max",
            include_str!("../data/max_a.txt"),
            include_str!("../data/max_b.txt"),
        ),
        (
            "mean",
            include_str!("../data/mean_a.txt"),
            include_str!("../data/mean_b.txt"),
        ),
    ];
    let mut out = Vec::with_capacity(sources.len());
    for (name, ta, tb) in sources {
        let a = read_graph_text(std::io::BufReader::new(ta.as_bytes()))?;
        let b = read_graph_text(std::io::BufReader::new(tb.as_bytes()))?;
        if !wl_indistinguishable(&a, &b) {
            return Err(AmpError::contract(format!(
                "fixed pair {name} is not 1-WL indistinguishable"
            )));
        }
        let class_a = a
            .graph_label
            .ok_or_else(|| AmpError::contract(format!("fixed pair {name}: missing label")))?;
        let class_b = b
            .graph_label
            .ok_or_else(|| AmpError::contract(format!("fixed pair {name}: missing label")))?;
        let a = a.clone().with_node_labels(vec![class_a; a.n()]);
        let b = b.clone().with_node_labels(vec![class_b; b.n()]);
        out.push(FixedPair { name, a, b });
    }
    Ok(out)
}

/// Cycle-pair graphs packaged as node-classification instances, one run per node.
pub fn cycle_pair_instances() -> Vec<DatasetInstance> {
    let (a, b) = generate_cycle_pair();
    vec![
        DatasetInstance {
            graph: a,
            task_kind: TaskKind::NodeClassification,
            start_marks: None,
        },
        DatasetInstance {
            graph: b,
            task_kind: TaskKind::NodeClassification,
            start_marks: None,
        },
    ]
}

/// Parity-of-shortest-path instance over a spanning-tree graph: the start is
/// marked only through the initial message, features are constant 1, and node
/// labels are the BFS distance parities (0 = even).
pub fn parity_instance(n: usize, seed: u64) -> Result<DatasetInstance> {
    let g = generate_spanning_tree_graph(n, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let start = rng.gen_range(0..n);
    let dist = bfs_distances(&g, start)?;
    let labels: Vec<usize> = dist.iter().map(|d| d.expect("connected") % 2).collect();
    Ok(DatasetInstance {
        graph: g.with_node_labels(labels),
        task_kind: TaskKind::NodeClassification,
        start_marks: Some(vec![start]),
    })
}

/// Multi-start parity instance: `k` distinct starts, per-node labels are the
/// per-start parity bits concatenated in start order.
pub fn multi_parity_instance(n: usize, k: usize, seed: u64) -> Result<(DatasetInstance, Vec<Vec<usize>>)> {
    if n < k {
        return Err(AmpError::invalid(format!("need n >= k starts, got n={n} k={k}")));
    }
    let g = generate_spanning_tree_graph(n, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x517cc1b727220a95);
    let mut starts: Vec<usize> = (0..n).collect();
    starts.shuffle(&mut rng);
    starts.truncate(k);
    let mut labels = vec![Vec::with_capacity(k); n];
    for &s in &starts {
        let dist = bfs_distances(&g, s)?;
        for v in 0..n {
            labels[v].push(dist[v].expect("connected") % 2);
        }
    }
    Ok((
        DatasetInstance {
            graph: g,
            task_kind: TaskKind::MultiStartNodeClassification,
            start_marks: Some(starts),
        },
        labels,
    ))
}

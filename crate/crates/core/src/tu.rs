//! Loader for the standard multi-file graph-classification text layout:
//! `<DS>_A.txt` (1-indexed edge list, comma or whitespace separated),
//! `<DS>_graph_indicator.txt`, `<DS>_graph_labels.txt`, and optionally
//! `<DS>_node_labels.txt`.

use crate::error::{AmpError, Result};
use crate::graph::{DatasetInstance, Graph, TaskKind};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> AmpError {
    AmpError::ParseError {
        line,
        message: format!("{}: {}", file.display(), msg.into()),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn parse_ints(path: &Path) -> Result<Vec<i64>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.parse::<i64>()
                .or_else(|_| l.parse::<f64>().map(|f| f as i64))
                .map_err(|_| parse_err(path, i + 1, format!("bad integer {l:?}")))
        })
        .collect()
}

/// Finds the dataset prefix: the unique `*_A.txt` in the directory.
fn dataset_prefix(dir: &Path) -> Result<String> {
    let mut prefixes: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|name| name.strip_suffix("_A.txt").map(String::from))
        })
        .collect();
    prefixes.sort();
    match prefixes.len() {
        0 => Err(AmpError::invalid(format!("no *_A.txt found in {}", dir.display()))),
        1 => Ok(prefixes.pop().unwrap()),
        _ => Err(AmpError::invalid(format!(
            "multiple datasets in {}: {prefixes:?}",
            dir.display()
        ))),
    }
}

/// Loads a dataset directory into graph-classification instances.
///
/// Node-label files become one-hot feature vectors over the dataset-wide
/// label vocabulary; without them every node gets the constant feature `[1]`.
/// Duplicate directed edges collapse to one undirected edge. Graph labels are
/// normalized to contiguous ids starting at 0.
pub fn load_tu_dataset(dir: impl AsRef<Path>) -> Result<Vec<DatasetInstance>> {
    let dir = dir.as_ref();
    let prefix = dataset_prefix(dir)?;
    let file = |suffix: &str| -> PathBuf { dir.join(format!("{prefix}_{suffix}.txt")) };

    let indicator_path = file("graph_indicator");
    let indicator = parse_ints(&indicator_path)?;
    let n_nodes = indicator.len();
    if n_nodes == 0 {
        return Err(parse_err(&indicator_path, 1, "empty graph indicator"));
    }
    let n_graphs = *indicator.iter().max().unwrap() as usize;
    for (i, &g) in indicator.iter().enumerate() {
        if g < 1 || g as usize > n_graphs {
            return Err(parse_err(&indicator_path, i + 1, format!("graph id {g} out of range")));
        }
    }

    let labels_path = file("graph_labels");
    let raw_graph_labels = parse_ints(&labels_path)?;
    if raw_graph_labels.len() != n_graphs {
        return Err(parse_err(
            &labels_path,
            raw_graph_labels.len() + 1,
            format!("{} labels for {n_graphs} graphs", raw_graph_labels.len()),
        ));
    }
    let label_vocab: BTreeMap<i64, usize> = {
        let mut sorted: Vec<i64> = raw_graph_labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
    };

    let node_labels_path = file("node_labels");
    let node_labels: Option<Vec<i64>> = if node_labels_path.exists() {
        let labels = parse_ints(&node_labels_path)?;
        if labels.len() != n_nodes {
            return Err(parse_err(
                &node_labels_path,
                labels.len() + 1,
                format!("{} node labels for {n_nodes} nodes", labels.len()),
            ));
        }
        Some(labels)
    } else {
        None
    };
    let node_vocab: Option<BTreeMap<i64, usize>> = node_labels.as_ref().map(|labels| {
        let mut sorted: Vec<i64> = labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
    });

    // Per-graph local ids in file order.
    let mut graph_nodes: Vec<Vec<usize>> = vec![Vec::new(); n_graphs];
    let mut local_id: Vec<usize> = vec![0; n_nodes];
    for (node, &g) in indicator.iter().enumerate() {
        let g = g as usize - 1;
        local_id[node] = graph_nodes[g].len();
        graph_nodes[g].push(node);
    }

    let edges_path = file("A");
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    for (i, line) in read_lines(&edges_path)?.iter().enumerate() {
        let mut parts = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty());
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|x| x.parse::<usize>().ok())
                .ok_or_else(|| parse_err(&edges_path, i + 1, format!("bad edge line {line:?}")))
        };
        let u = parse(parts.next())?;
        let v = parse(parts.next())?;
        if u < 1 || v < 1 || u > n_nodes || v > n_nodes {
            return Err(parse_err(&edges_path, i + 1, format!("edge ({u}, {v}) out of node range")));
        }
        let (u, v) = (u - 1, v - 1);
        if indicator[u] != indicator[v] {
            return Err(parse_err(&edges_path, i + 1, format!("edge ({u}, {v}) crosses graphs")));
        }
        if u == v {
            continue;
        }
        let g = indicator[u] as usize - 1;
        let (a, b) = (local_id[u].min(local_id[v]), local_id[u].max(local_id[v]));
        edges[g].push((a, b));
    }

    let mut out = Vec::with_capacity(n_graphs);
    for g in 0..n_graphs {
        let nodes = &graph_nodes[g];
        let features: Vec<Vec<f64>> = match (&node_labels, &node_vocab) {
            (Some(labels), Some(vocab)) => nodes
                .iter()
                .map(|&global| {
                    let mut one_hot = vec![0.0; vocab.len()];
                    one_hot[vocab[&labels[global]]] = 1.0;
                    one_hot
                })
                .collect(),
            _ => vec![vec![1.0]; nodes.len()],
        };
        let mut edge_list = edges[g].clone();
        edge_list.sort_unstable();
        edge_list.dedup();
        let graph = Graph::from_edges(nodes.len(), &edge_list, features)?
            .with_graph_label(label_vocab[&raw_graph_labels[g]]);
        out.push(DatasetInstance {
            graph,
            task_kind: TaskKind::GraphClassification,
            start_marks: None,
        });
    }
    Ok(out)
}

/// Writes instances back out in the same layout (testing and fixtures).
pub fn write_tu_dataset(dir: impl AsRef<Path>, prefix: &str, instances: &[DatasetInstance]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut a = String::new();
    let mut indicator = String::new();
    let mut labels = String::new();
    let mut offset = 1usize; // 1-indexed node ids
    for (g, inst) in instances.iter().enumerate() {
        let graph = &inst.graph;
        labels.push_str(&format!(
            "{}\n",
            graph
                .graph_label
                .ok_or_else(|| AmpError::contract(format!("instance {g} lacks a graph label")))?
        ));
        for _ in 0..graph.n() {
            indicator.push_str(&format!("{}\n", g + 1));
        }
        for (u, v) in graph.edges() {
            // Both directions, as the layout conventionally stores them.
            a.push_str(&format!("{}, {}\n", offset + u, offset + v));
            a.push_str(&format!("{}, {}\n", offset + v, offset + u));
        }
        offset += graph.n();
    }
    fs::write(dir.join(format!("{prefix}_A.txt")), a)?;
    fs::write(dir.join(format!("{prefix}_graph_indicator.txt")), indicator)?;
    fs::write(dir.join(format!("{prefix}_graph_labels.txt")), labels)?;
    Ok(())
}

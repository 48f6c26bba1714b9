//! Directed graphs given by a 0/1 adjacency structure.
//!
//! Graphs are read from a plain edge list (`src dst` per line, 0-based
//! ids, `#` comments). Structural preconditions are checked by
//! [`validate`], which reports problems instead of failing.

use std::fmt;
use std::io::Read;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    adjacency: Vec<bool>,
    successors: Vec<Vec<usize>>,
}

impl DirectedGraph {
    /// Builds a graph on `n` nodes from an edge list. Duplicate edges collapse.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n < 2 {
            return Err(Error::Validation(format!("need at least 2 nodes, got {n}")));
        }
        if edges.is_empty() {
            return Err(Error::Validation("empty edge set".into()));
        }
        let mut adjacency = vec![false; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Validation(format!(
                    "edge {i}->{j} out of range for {n} nodes"
                )));
            }
            adjacency[i * n + j] = true;
        }
        let successors = (0..n)
            .map(|i| (0..n).filter(|&j| adjacency[i * n + j]).collect())
            .collect();
        Ok(Self {
            n,
            adjacency,
            successors,
        })
    }

    /// Builds a graph from a dense 0/1 matrix given row by row.
    pub fn from_adjacency(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let mut edges = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Validation(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &a) in row.iter().enumerate() {
                match a {
                    0 => {}
                    1 => edges.push((i, j)),
                    other => {
                        return Err(Error::Validation(format!(
                            "entry ({i},{j}) = {other} is not 0 or 1"
                        )))
                    }
                }
            }
        }
        Self::from_edges(n, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a).count()
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    /// Successors of `i` in increasing order.
    pub fn successors(&self, i: usize) -> &[usize] {
        &self.successors[i]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.successors[i].iter().map(move |&j| (i, j)))
    }

    pub fn self_loops(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.has_edge(i, i)).collect()
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(
            self.n,
            self.n,
            |i, j| if self.has_edge(i, j) { 1.0 } else { 0.0 },
        )
    }

    pub fn adjacency_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.has_edge(i, j) as u8).collect())
            .collect()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.successors[i].len()
    }

    /// Renders the graph in the edge-list format accepted by [`load_edge_list`].
    pub fn to_edge_list(&self) -> String {
        self.edges().map(|(i, j)| format!("{i} {j}\n")).collect()
    }
}

/// Parses an edge list from raw bytes.
pub fn load_edge_list<R: Read>(mut reader: R) -> Result<DirectedGraph> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("input is not UTF-8: {e}"),
    })?;
    parse_edge_list(&text)
}

pub fn parse_edge_list(text: &str) -> Result<DirectedGraph> {
    let mut edges = Vec::new();
    let mut max_id = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected \"src dst\", got {line:?}"),
            });
        }
        let mut ids = [0usize; 2];
        for (slot, field) in ids.iter_mut().zip(&fields) {
            let value: i64 = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("{field:?} is not an integer node id"),
            })?;
            if value < 0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("negative node id {value}"),
                });
            }
            *slot = value as usize;
        }
        max_id = max_id.max(ids[0]).max(ids[1]);
        edges.push((ids[0], ids[1]));
    }
    if edges.is_empty() {
        return Err(Error::Validation("empty edge set".into()));
    }
    DirectedGraph::from_edges(max_id + 1, &edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphMode {
    /// Self loops allowed.
    DiscreteTime,
    /// Self loops forbidden.
    ContinuousTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mode: GraphMode,
    pub strongly_connected: bool,
    /// Strongly connected components, each sorted, ordered by smallest member.
    pub components: Vec<Vec<usize>>,
    /// Nodes with a self loop that the mode forbids.
    pub self_loops: Vec<usize>,
    /// Nodes that cannot reach node 0 or cannot be reached from it.
    pub unreachable: Vec<(usize, usize)>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.strongly_connected && self.self_loops.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidGraph(Box::new(self)))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(
                f,
                "valid ({:?}, {} nodes)",
                self.mode,
                self.components[0].len()
            );
        }
        if !self.strongly_connected {
            writeln!(
                f,
                "not strongly connected: {} components {:?}",
                self.components.len(),
                self.components
            )?;
            for &(a, b) in self.unreachable.iter().take(5) {
                writeln!(f, "  node {a} cannot reach node {b}")?;
            }
        }
        for &i in &self.self_loops {
            writeln!(f, "self loop at node {i} (not allowed in continuous time)")?;
        }
        Ok(())
    }
}

pub fn validate(g: &DirectedGraph, mode: GraphMode) -> ValidationReport {
    let mut components = tarjan_scc(g);
    for c in &mut components {
        c.sort_unstable();
    }
    components.sort_unstable_by_key(|c| c[0]);
    let strongly_connected = components.len() == 1;

    let mut unreachable = Vec::new();
    if !strongly_connected {
        let forward = reachable_from(g, 0, false);
        let backward = reachable_from(g, 0, true);
        for v in 0..g.node_count() {
            if !forward[v] {
                unreachable.push((0, v));
            }
            if !backward[v] {
                unreachable.push((v, 0));
            }
        }
    }
    let self_loops = match mode {
        GraphMode::ContinuousTime => g.self_loops(),
        GraphMode::DiscreteTime => Vec::new(),
    };
    ValidationReport {
        mode,
        strongly_connected,
        components,
        self_loops,
        unreachable,
    }
}

fn reachable_from(g: &DirectedGraph, root: usize, reversed: bool) -> Vec<bool> {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut stack = vec![root];
    seen[root] = true;
    while let Some(v) = stack.pop() {
        for w in 0..n {
            let edge = if reversed {
                g.has_edge(w, v)
            } else {
                g.has_edge(v, w)
            };
            if edge && !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// Iterative Tarjan SCC decomposition.
pub fn tarjan_scc(g: &DirectedGraph) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    let n = g.node_count();
    let mut index = vec![UNVISITED; n];
    let mut lowlink = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut components = Vec::new();
    let mut next_index = 0;
    // (node, position in its successor list)
    let mut call_stack: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call_stack.push((root, 0));
        while let Some(&mut (v, ref mut pos)) = call_stack.last_mut() {
            if *pos == 0 && index[v] == UNVISITED {
                index[v] = next_index;
                lowlink[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            let succ = g.successors(v);
            if *pos < succ.len() {
                let w = succ[*pos];
                *pos += 1;
                if index[w] == UNVISITED {
                    call_stack.push((w, 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w]);
                }
                continue;
            }
            call_stack.pop();
            if let Some(&(parent, _)) = call_stack.last() {
                lowlink[parent] = lowlink[parent].min(lowlink[v]);
            }
            if lowlink[v] == index[v] {
                let mut component = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    component.push(w);
                    if w == v {
                        break;
                    }
                }
                components.push(component);
            }
        }
    }
    components
}

/// Number of walks with exactly `steps` edges from `from` to `to`, i.e.
/// `[A^steps]_{from,to}`, in exact integer arithmetic.
pub fn count_paths(g: &DirectedGraph, from: usize, to: usize, steps: usize) -> Result<u128> {
    Ok(count_paths_row(g, from, steps)?[to])
}

/// Row `from` of `A^steps`.
pub fn count_paths_row(g: &DirectedGraph, from: usize, steps: usize) -> Result<Vec<u128>> {
    let n = g.node_count();
    if from >= n {
        return Err(Error::InvalidArgument(format!(
            "node {from} out of range for {n} nodes"
        )));
    }
    let mut row = vec![0u128; n];
    row[from] = 1;
    for _ in 0..steps {
        let mut next = vec![0u128; n];
        for (i, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for &j in g.successors(i) {
                next[j] =
                    next[j]
                        .checked_add(c)
                        .ok_or(Error::CountOverflow { from, to: j, steps })?;
            }
        }
        row = next;
    }
    Ok(row)
}

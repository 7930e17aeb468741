//! Activity DAGs: construction, validation, topological order, ancestry and
//! d-separation.
//!
//! Node ids are stored sorted lexicographically, so the dense index of a node
//! doubles as its lexicographic rank. Every tie-break in the crate relies on
//! that.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node id `{0}`")]
    UnknownNode(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("graph contains a directed cycle through `{0}`")]
    Cycle(String),
    #[error("conditioning set contains query node `{0}`")]
    QueryInConditioningSet(String),
    #[error("d-separation query needs two distinct nodes, got `{0}` twice")]
    SameNode(String),
    #[error(
        "node sets differ between graphs: only in observational {only_observational:?}, only in causal {only_causal:?}"
    )]
    NodeSetMismatch {
        only_observational: Vec<String>,
        only_causal: Vec<String>,
    },
    #[error("node `{0}` has no text instances")]
    NoInstances(String),
    #[error("node `{0}` has an empty text instance")]
    EmptyInstance(String),
}

/// One event of an activity with its crowd-written phrasings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventNode {
    pub id: String,
    pub label: String,
    pub instances: Vec<String>,
}

impl EventNode {
    pub fn new(id: impl Into<String>, label: impl Into<String>, instances: Vec<String>) -> Result<Self, GraphError> {
        let id = id.into();
        if instances.is_empty() {
            return Err(GraphError::NoInstances(id));
        }
        if instances.iter().any(|s| s.trim().is_empty()) {
            return Err(GraphError::EmptyInstance(id));
        }
        Ok(Self {
            id,
            label: label.into(),
            instances,
        })
    }
}

/// A single invariant violation found by [`Dag::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Cycle { node: String },
    StartHasParents { start: String },
    EndHasChildren { end: String },
    OffPath { node: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle { node } => write!(f, "cycle through {node}"),
            Violation::StartHasParents { start } => write!(f, "start node {start} has incoming edges"),
            Violation::EndHasChildren { end } => write!(f, "end node {end} has outgoing edges"),
            Violation::OffPath { node } => write!(f, "{node} not on any start→end path"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Directed graph over string-identified nodes with a designated start and
/// end. Acyclicity is checked by [`Dag::validate`], not by construction, so
/// that invalid inputs can be reported in full.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    start: usize,
    end: usize,
}

impl Dag {
    /// Builds a graph. Duplicate edges collapse; unknown ids in edges or in
    /// `start`/`end` are errors.
    pub fn new<I, S>(ids: I, edges: &[(String, String)], start: &str, end: &str) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        ids.sort();
        for pair in ids.windows(2) {
            if pair[0] == pair[1] {
                return Err(GraphError::DuplicateNode(pair[0].clone()));
            }
        }
        let index: HashMap<String, usize> = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let n = ids.len();
        let mut child_sets = vec![BTreeSet::new(); n];
        let mut parent_sets = vec![BTreeSet::new(); n];
        for (src, dst) in edges {
            let s = *index.get(src).ok_or_else(|| GraphError::UnknownNode(src.clone()))?;
            let d = *index.get(dst).ok_or_else(|| GraphError::UnknownNode(dst.clone()))?;
            child_sets[s].insert(d);
            parent_sets[d].insert(s);
        }
        let start = *index
            .get(start)
            .ok_or_else(|| GraphError::UnknownNode(start.to_string()))?;
        let end = *index.get(end).ok_or_else(|| GraphError::UnknownNode(end.to_string()))?;
        Ok(Self {
            ids,
            index,
            children: child_sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            parents: parent_sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            start,
            end,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Node ids in lexicographic order; position equals the dense index.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, ix: usize) -> &str {
        &self.ids[ix]
    }

    pub fn ix(&self, id: &str) -> Result<usize, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn children(&self, ix: usize) -> &[usize] {
        &self.children[ix]
    }

    pub fn parents(&self, ix: usize) -> &[usize] {
        &self.parents[ix]
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.children[src].binary_search(&dst).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.children
            .iter()
            .enumerate()
            .flat_map(|(s, cs)| cs.iter().map(move |&d| (s, d)))
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    /// Checks every activity-graph invariant: acyclicity, start/end degrees
    /// and start→end coverage of each node.
    pub fn validate(&self) -> ValidationReport {
        let mut report = self.validate_acyclic();
        if !self.parents[self.start].is_empty() {
            report.violations.push(Violation::StartHasParents {
                start: self.ids[self.start].clone(),
            });
        }
        if !self.children[self.end].is_empty() {
            report.violations.push(Violation::EndHasChildren {
                end: self.ids[self.end].clone(),
            });
        }
        let from_start = self.reachable(self.start, Direction::Forward);
        let to_end = self.reachable(self.end, Direction::Backward);
        for ix in 0..self.len() {
            let on_path = (ix == self.start || from_start[ix]) && (ix == self.end || to_end[ix]);
            if !on_path {
                report.violations.push(Violation::OffPath {
                    node: self.ids[ix].clone(),
                });
            }
        }
        report
    }

    /// Only the acyclicity part of [`Dag::validate`]; one violation per node
    /// left over after Kahn's algorithm that sits on a cycle.
    pub fn validate_acyclic(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if let Err(stuck) = self.kahn() {
            for ix in stuck {
                if self.reaches(ix, ix) {
                    report.violations.push(Violation::Cycle {
                        node: self.ids[ix].clone(),
                    });
                }
            }
        }
        report
    }

    /// Kahn's algorithm with a min-heap on the lexicographic index. On a
    /// cycle returns the nodes that never reached in-degree zero.
    fn kahn(&self) -> Result<Vec<usize>, Vec<usize>> {
        let n = self.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut heap: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(u)) = heap.pop() {
            order.push(u);
            for &v in &self.children[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    heap.push(Reverse(v));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err((0..n).filter(|&i| indeg[i] > 0).collect())
        }
    }

    pub fn topological_order(&self) -> Result<TopoOrder, GraphError> {
        let order = self
            .kahn()
            .map_err(|stuck| GraphError::Cycle(self.ids[stuck[0]].clone()))?;
        let mut rank = vec![0; order.len()];
        for (pos, &ix) in order.iter().enumerate() {
            rank[ix] = pos;
        }
        Ok(TopoOrder { order, rank })
    }

    fn reachable(&self, from: usize, dir: Direction) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            let next = match dir {
                Direction::Forward => &self.children[u],
                Direction::Backward => &self.parents[u],
            };
            for &v in next {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// True iff a directed path of length ≥ 1 leads from `x` to `y`.
    pub fn reaches(&self, x: usize, y: usize) -> bool {
        self.reachable(x, Direction::Forward)[y]
    }

    /// Strict descendants of `x` as a membership mask.
    pub fn descendants(&self, x: usize) -> Vec<bool> {
        self.reachable(x, Direction::Forward)
    }

    /// Strict ancestors of `x` as a membership mask.
    pub fn ancestors(&self, x: usize) -> Vec<bool> {
        self.reachable(x, Direction::Backward)
    }

    /// Irreflexive ancestry: a node is never its own ancestor.
    pub fn is_ancestor(&self, x: &str, y: &str) -> Result<bool, GraphError> {
        let (x, y) = (self.ix(x)?, self.ix(y)?);
        Ok(x != y && self.reaches(x, y))
    }

    pub fn d_separated(&self, x: &str, y: &str, z: &[&str]) -> Result<bool, GraphError> {
        let xi = self.ix(x)?;
        let yi = self.ix(y)?;
        if xi == yi {
            return Err(GraphError::SameNode(x.to_string()));
        }
        let mut zs = Vec::with_capacity(z.len());
        for id in z {
            let ix = self.ix(id)?;
            if ix == xi || ix == yi {
                return Err(GraphError::QueryInConditioningSet(id.to_string()));
            }
            zs.push(ix);
        }
        Ok(!self.d_reachable(xi, &zs)[yi])
    }

    pub fn d_connected(&self, x: &str, y: &str, z: &[&str]) -> Result<bool, GraphError> {
        self.d_separated(x, y, z).map(|s| !s)
    }

    /// Nodes reachable from `x` by an active trail given `z` (Bayes-ball
    /// traversal over `(node, arrived-from)` states). `x` itself is not
    /// marked unless an active trail returns to it.
    pub fn d_reachable(&self, x: usize, z: &[usize]) -> Vec<bool> {
        let n = self.len();
        let mut observed = vec![false; n];
        for &ix in z {
            observed[ix] = true;
        }
        // Ancestors of Z, including Z: a collider is open iff it lies here.
        let mut z_anc = observed.clone();
        let mut stack: Vec<usize> = z.to_vec();
        while let Some(u) = stack.pop() {
            for &p in &self.parents[u] {
                if !z_anc[p] {
                    z_anc[p] = true;
                    stack.push(p);
                }
            }
        }

        // visited[v][0]: arrived from a child (moving up); [1]: from a parent.
        let mut visited = vec![[false; 2]; n];
        let mut reached = vec![false; n];
        let mut queue = VecDeque::new();
        queue.push_back((x, Arrival::FromChild));
        while let Some((v, dir)) = queue.pop_front() {
            let slot = dir as usize;
            if visited[v][slot] {
                continue;
            }
            visited[v][slot] = true;
            if v != x && !observed[v] {
                reached[v] = true;
            }
            match dir {
                Arrival::FromChild => {
                    if !observed[v] {
                        for &p in &self.parents[v] {
                            queue.push_back((p, Arrival::FromChild));
                        }
                        for &c in &self.children[v] {
                            queue.push_back((c, Arrival::FromParent));
                        }
                    }
                }
                Arrival::FromParent => {
                    if !observed[v] {
                        for &c in &self.children[v] {
                            queue.push_back((c, Arrival::FromParent));
                        }
                    }
                    if z_anc[v] {
                        for &p in &self.parents[v] {
                            queue.push_back((p, Arrival::FromChild));
                        }
                    }
                }
            }
        }
        reached
    }

    /// Unconditional d-connection for all pairs, row-major. The diagonal is
    /// left `false`.
    pub fn d_connection_matrix(&self) -> Vec<Vec<bool>> {
        (0..self.len()).map(|x| self.d_reachable(x, &[])).collect()
    }
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Copy)]
enum Arrival {
    FromChild = 0,
    FromParent = 1,
}

/// Deterministic topological order (ties broken by lexicographic id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopoOrder {
    order: Vec<usize>,
    rank: Vec<usize>,
}

impl TopoOrder {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn rank(&self, ix: usize) -> usize {
        self.rank[ix]
    }

    pub fn ids<'a>(&self, dag: &'a Dag) -> Vec<&'a str> {
        self.order.iter().map(|&ix| dag.id(ix)).collect()
    }
}

/// The observational and causal graphs of one activity over a shared node
/// set, plus per-node texts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityGraphs {
    pub activity: String,
    nodes: Vec<EventNode>,
    observational: Dag,
    causal: Dag,
}

impl ActivityGraphs {
    /// `nodes` may come in any order; they are re-indexed to match the DAGs.
    pub fn new(
        activity: impl Into<String>,
        mut nodes: Vec<EventNode>,
        observational: Dag,
        causal: Dag,
    ) -> Result<Self, GraphError> {
        if observational.ids() != causal.ids() {
            let only_observational = observational
                .ids()
                .iter()
                .filter(|id| !causal.contains(id))
                .cloned()
                .collect();
            let only_causal = causal
                .ids()
                .iter()
                .filter(|id| !observational.contains(id))
                .cloned()
                .collect();
            return Err(GraphError::NodeSetMismatch {
                only_observational,
                only_causal,
            });
        }
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let node_ids: Vec<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
        let dag_ids: Vec<&str> = observational.ids().iter().map(String::as_str).collect();
        if node_ids != dag_ids {
            if let Some(missing) = dag_ids.iter().find(|id| !node_ids.contains(id)) {
                return Err(GraphError::NoInstances(missing.to_string()));
            }
            let extra = node_ids
                .iter()
                .find(|id| !dag_ids.contains(id))
                .copied()
                .unwrap_or_default();
            return Err(GraphError::UnknownNode(extra.to_string()));
        }
        Ok(Self {
            activity: activity.into(),
            nodes,
            observational,
            causal,
        })
    }

    pub fn observational(&self) -> &Dag {
        &self.observational
    }

    pub fn causal(&self) -> &Dag {
        &self.causal
    }

    /// Nodes in lexicographic id order (aligned with the DAG indices).
    pub fn nodes(&self) -> &[EventNode] {
        &self.nodes
    }

    pub fn node(&self, ix: usize) -> &EventNode {
        &self.nodes[ix]
    }

    pub fn node_by_id(&self, id: &str) -> Result<&EventNode, GraphError> {
        Ok(&self.nodes[self.observational.ix(id)?])
    }

    /// The observational graph must satisfy every activity invariant; the
    /// causal graph only needs to be acyclic (it is usually sparse and need
    /// not connect start to end).
    pub fn validate(&self) -> ValidationReport {
        let mut report = self.observational.validate();
        report.violations.extend(self.causal.validate_acyclic().violations);
        report
    }
}

//! Trajectory counting, transition functions over the observational graph and
//! the graph-statistical causal estimands.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimand::{DeltaEstimate, EstimateScheme};
use crate::graph::{ActivityGraphs, Dag, GraphError, TopoOrder};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph fails validation: {0}")]
    InvalidGraph(String),
    #[error("`{e2}` does not come after `{e1}` in topological order")]
    NotAfter { e1: String, e2: String },
    #[error("`{0}` -> `{1}` is not an edge of the observational graph")]
    NotAnEdge(String, String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("source node `{0}` is the node to avoid")]
    AvoidIsSource(String),
    #[error("ESD {index} is out of topological order at `{node}`")]
    EsdOrder { index: usize, node: String },
    #[error("ESD corpus is empty")]
    EmptyCorpus,
    #[error("path count {0} does not fit in 128 bits")]
    CountOverflow(BigUint),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountLevel {
    /// Node-level path count.
    Compact,
    /// Paths weighted by the product of instance counts along them.
    Total,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryCount {
    pub value: BigUint,
    pub level: CountLevel,
}

fn require_valid(dag: &Dag) -> Result<TopoOrder, TrajectoryError> {
    let report = dag.validate();
    if !report.is_ok() {
        let msg = report
            .violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        return Err(TrajectoryError::InvalidGraph(msg));
    }
    Ok(dag.topological_order()?)
}

/// Weighted path sums from `from` to every node: `w(from) = weight(from)`,
/// `w(v) = weight(v) · Σ_{u ∈ pa(v)} w(u)`.
fn forward_weights(dag: &Dag, topo: &TopoOrder, from: usize, weight: impl Fn(usize) -> BigUint) -> Vec<BigUint> {
    let mut w = vec![BigUint::zero(); dag.len()];
    w[from] = weight(from);
    for &v in topo.order().iter().skip(topo.rank(from) + 1) {
        let s: BigUint = dag.parents(v).iter().map(|&u| &w[u]).sum();
        if !s.is_zero() {
            w[v] = s * weight(v);
        }
    }
    w
}

/// Number of directed paths from every node to `to` (1 for `to` itself).
pub fn paths_to(dag: &Dag, topo: &TopoOrder, to: usize) -> Vec<BigUint> {
    let mut w = vec![BigUint::zero(); dag.len()];
    w[to] = BigUint::one();
    for &v in topo.order()[..topo.rank(to)].iter().rev() {
        w[v] = dag.children(v).iter().map(|&c| &w[c]).sum();
    }
    w
}

/// Exact path counts between two nodes of the observational graph.
pub fn count_trajectories(
    graphs: &ActivityGraphs,
    from: &str,
    to: &str,
    level: CountLevel,
) -> Result<TrajectoryCount, TrajectoryError> {
    let dag = graphs.observational();
    let (f, t) = (dag.ix(from)?, dag.ix(to)?);
    let topo = dag.topological_order()?;
    let w = match level {
        CountLevel::Compact => forward_weights(dag, &topo, f, |_| BigUint::one()),
        CountLevel::Total => forward_weights(dag, &topo, f, |v| BigUint::from(graphs.node(v).instances.len())),
    };
    Ok(TrajectoryCount {
        value: w[t].clone(),
        level,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionScheme {
    /// Uniform over outgoing edges.
    NodeUniform,
    /// Every full start→end trajectory equally likely.
    TrajectoryUniform,
}

/// Row-stochastic transition function supported on the graph's edges. Rows
/// are aligned with [`Dag::children`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    scheme: TransitionScheme,
    rows: Vec<Vec<(usize, f64)>>,
}

impl TransitionMatrix {
    pub fn scheme(&self) -> TransitionScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, src: usize) -> &[(usize, f64)] {
        &self.rows[src]
    }

    /// `T(src, dst)`, zero off the edge set.
    pub fn get(&self, src: usize, dst: usize) -> f64 {
        self.rows[src].iter().find(|(d, _)| *d == dst).map_or(0.0, |(_, p)| *p)
    }

    pub fn build(dag: &Dag, scheme: TransitionScheme) -> Result<Self, TrajectoryError> {
        match scheme {
            TransitionScheme::NodeUniform => build_transition_node_uniform(dag),
            TransitionScheme::TrajectoryUniform => build_transition_trajectory_uniform(dag),
        }
    }

    /// Row `from` of `Σ_{k=1..M} T^k`, with `M` the node count. Setting
    /// `avoid` zeroes that node's row and column first, so only paths
    /// that never visit it contribute.
    pub fn power_sum_row(&self, from: usize, avoid: Option<usize>) -> Vec<f64> {
        let n = self.len();
        let mut acc = vec![0.0; n];
        let mut cur = vec![0.0; n];
        cur[from] = 1.0;
        if avoid == Some(from) {
            return acc;
        }
        for _ in 0..n {
            let mut next = vec![0.0; n];
            let mut any = false;
            for (u, &mass) in cur.iter().enumerate() {
                if mass == 0.0 || Some(u) == avoid {
                    continue;
                }
                for &(v, p) in &self.rows[u] {
                    if Some(v) != avoid {
                        next[v] += mass * p;
                        any = true;
                    }
                }
            }
            if !any {
                break;
            }
            for (a, x) in acc.iter_mut().zip(&next) {
                *a += x;
            }
            cur = next;
        }
        acc
    }
}

pub fn build_transition_node_uniform(dag: &Dag) -> Result<TransitionMatrix, TrajectoryError> {
    require_valid(dag)?;
    let rows = (0..dag.len())
        .map(|u| {
            let out = dag.children(u);
            let p = 1.0 / out.len() as f64;
            out.iter().map(|&v| (v, p)).collect()
        })
        .collect();
    Ok(TransitionMatrix {
        scheme: TransitionScheme::NodeUniform,
        rows,
    })
}

/// `T(l → m) = paths(m → end) / paths(l → end)`, so that each full
/// trajectory has probability `1 / paths(start → end)`.
pub fn build_transition_trajectory_uniform(dag: &Dag) -> Result<TransitionMatrix, TrajectoryError> {
    let topo = require_valid(dag)?;
    let to_end = paths_to(dag, &topo, dag.end());
    let rows = (0..dag.len())
        .map(|u| {
            dag.children(u)
                .iter()
                .map(|&v| (v, big_ratio(&to_end[v], &to_end[u])))
                .collect()
        })
        .collect();
    Ok(TransitionMatrix {
        scheme: TransitionScheme::TrajectoryUniform,
        rows,
    })
}

fn big_ratio(num: &BigUint, den: &BigUint) -> f64 {
    // Shift both down together so the f64 conversions stay exact enough.
    let bits = den.bits().max(num.bits());
    let shift = bits.saturating_sub(1000);
    let (n, d) = (num >> shift, den >> shift);
    n.to_f64().unwrap_or(f64::MAX) / d.to_f64().unwrap_or(f64::MAX)
}

/// `[Σ_{k=1..M} T^k](e1, e2)`: total probability of reaching `e2` from `e1`.
pub fn prob_reach(t: &TransitionMatrix, e1: usize, e2: usize) -> f64 {
    t.power_sum_row(e1, None)[e2]
}

/// Probability of reaching `e2` from `from` along paths that never visit
/// `avoid`.
pub fn prob_reach_avoiding(t: &TransitionMatrix, from: usize, e2: usize, avoid: usize) -> Result<f64, TrajectoryError> {
    if from == avoid {
        return Err(TrajectoryError::AvoidIsSource(from.to_string()));
    }
    Ok(t.power_sum_row(from, Some(avoid))[e2])
}

/// An ordered walk through the observational graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub node_ids: Vec<String>,
}

impl Trajectory {
    pub fn new(node_ids: Vec<String>) -> Self {
        Self { node_ids }
    }

    /// Resolves ids and checks that consecutive nodes are joined by edges.
    pub fn resolve(&self, dag: &Dag) -> Result<Vec<usize>, TrajectoryError> {
        if self.node_ids.is_empty() {
            return Err(TrajectoryError::EmptyTrajectory);
        }
        let ixs = self
            .node_ids
            .iter()
            .map(|id| dag.ix(id))
            .collect::<Result<Vec<_>, _>>()?;
        for w in ixs.windows(2) {
            if !dag.has_edge(w[0], w[1]) {
                return Err(TrajectoryError::NotAnEdge(dag.id(w[0]).into(), dag.id(w[1]).into()));
            }
        }
        Ok(ixs)
    }
}

/// Product of transition probabilities along the trajectory.
pub fn trajectory_prob(t: &TransitionMatrix, dag: &Dag, traj: &Trajectory) -> Result<f64, TrajectoryError> {
    let ixs = traj.resolve(dag)?;
    Ok(ixs.windows(2).map(|w| t.get(w[0], w[1])).product())
}

/// Precomputed state for repeated graph-based estimates on one observational
/// graph and transition scheme.
pub struct GraphEstimator<'a> {
    dag: &'a Dag,
    topo: TopoOrder,
    transition: TransitionMatrix,
    /// `[I + Σ T^k](start, ·)`: total probability mass of prefixes ending
    /// at each node.
    prefix_mass: Vec<f64>,
}

impl<'a> GraphEstimator<'a> {
    pub fn new(dag: &'a Dag, scheme: TransitionScheme) -> Result<Self, TrajectoryError> {
        let topo = require_valid(dag)?;
        let transition = TransitionMatrix::build(dag, scheme)?;
        let mut prefix_mass = transition.power_sum_row(dag.start(), None);
        prefix_mass[dag.start()] += 1.0;
        Ok(Self {
            dag,
            topo,
            transition,
            prefix_mass,
        })
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }

    pub fn topo(&self) -> &TopoOrder {
        &self.topo
    }

    /// `Δ = P(E2 | do(E1)) − P(E2 | do(¬E1))` with the backdoor sum taken
    /// over every start-anchored prefix ending at a parent of `E1`. The
    /// prefixes are weighted by their transition probability, normalized
    /// over the prefix set. The treatment term does not depend on the
    /// prefix (the chain is Markov); the control term is the mass of
    /// paths from the prefix's last node to `E2` that bypass `E1`.
    pub fn delta(&self, e1: &str, e2: &str) -> Result<DeltaEstimate, TrajectoryError> {
        let (a, b) = (self.dag.ix(e1)?, self.dag.ix(e2)?);
        if self.topo.rank(a) >= self.topo.rank(b) {
            return Err(TrajectoryError::NotAfter {
                e1: e1.into(),
                e2: e2.into(),
            });
        }
        let treatment = prob_reach(&self.transition, a, b);
        let parents = self.dag.parents(a);
        let mut mass = 0.0;
        let mut weighted = 0.0;
        for &u in parents {
            let w = self.prefix_mass[u];
            mass += w;
            weighted += w * prob_reach_avoiding(&self.transition, u, b, a)?;
        }
        let control = if mass > 0.0 { weighted / mass } else { 0.0 };
        let scheme = match self.transition.scheme {
            TransitionScheme::NodeUniform => EstimateScheme::Node,
            TransitionScheme::TrajectoryUniform => EstimateScheme::Trajectory,
        };
        Ok(DeltaEstimate::new(scheme, e1, e2, treatment, control))
    }
}

/// One-shot [`GraphEstimator::delta`].
pub fn delta_graph(g_o: &Dag, e1: &str, e2: &str, scheme: TransitionScheme) -> Result<DeltaEstimate, TrajectoryError> {
    GraphEstimator::new(g_o, scheme)?.delta(e1, e2)
}

/// Crowd-written event sequences mapped onto observational node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EsdCorpus {
    pub activity: String,
    esds: Vec<Vec<usize>>,
    rank: Vec<usize>,
}

impl EsdCorpus {
    /// Each sequence must use known ids in strictly increasing topological
    /// rank. Sequences may skip nodes; they need not follow edges.
    pub fn new(activity: impl Into<String>, dag: &Dag, esds: &[Vec<String>]) -> Result<Self, TrajectoryError> {
        let topo = dag.topological_order()?;
        let mut out = Vec::with_capacity(esds.len());
        for (index, esd) in esds.iter().enumerate() {
            let ixs = esd.iter().map(|id| dag.ix(id)).collect::<Result<Vec<_>, _>>()?;
            for w in ixs.windows(2) {
                if topo.rank(w[0]) >= topo.rank(w[1]) {
                    return Err(TrajectoryError::EsdOrder {
                        index,
                        node: dag.id(w[1]).to_string(),
                    });
                }
            }
            out.push(ixs);
        }
        Ok(Self {
            activity: activity.into(),
            esds: out,
            rank: (0..dag.len()).map(|i| topo.rank(i)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.esds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.esds.is_empty()
    }

    pub fn esds(&self) -> &[Vec<usize>] {
        &self.esds
    }
}

#[derive(Default)]
struct Stratum {
    total: usize,
    with_e1: usize,
    with_e1_e2: usize,
    without_e1: usize,
    without_e1_with_e2: usize,
}

/// Empirical backdoor estimate from the corpus alone. Each ESD's stratum is
/// the subsequence of its events ranked before `E1`; empty treatment or
/// control cells contribute zero and are counted in `empty_strata`.
pub fn delta_original(corpus: &EsdCorpus, dag: &Dag, e1: &str, e2: &str) -> Result<DeltaEstimate, TrajectoryError> {
    if corpus.is_empty() {
        return Err(TrajectoryError::EmptyCorpus);
    }
    let (a, b) = (dag.ix(e1)?, dag.ix(e2)?);
    let cut = corpus.rank[a];
    let mut strata: BTreeMap<Vec<usize>, Stratum> = BTreeMap::new();
    for esd in corpus.esds() {
        let key: Vec<usize> = esd.iter().copied().filter(|&v| corpus.rank[v] < cut).collect();
        let has_e1 = esd.contains(&a);
        let has_e2 = esd.contains(&b);
        let s = strata.entry(key).or_default();
        s.total += 1;
        if has_e1 {
            s.with_e1 += 1;
            s.with_e1_e2 += usize::from(has_e2);
        } else {
            s.without_e1 += 1;
            s.without_e1_with_e2 += usize::from(has_e2);
        }
    }
    let n = corpus.len() as f64;
    let (mut treatment, mut control, mut empty) = (0.0, 0.0, 0);
    for s in strata.values() {
        let pz = s.total as f64 / n;
        if s.with_e1 > 0 {
            treatment += pz * s.with_e1_e2 as f64 / s.with_e1 as f64;
        } else {
            empty += 1;
        }
        if s.without_e1 > 0 {
            control += pz * s.without_e1_with_e2 as f64 / s.without_e1 as f64;
        } else {
            empty += 1;
        }
    }
    let mut est = DeltaEstimate::new(EstimateScheme::Original, e1, e2, treatment, control);
    est.empty_strata = empty;
    Ok(est)
}

/// Path counts from the start node to every node, as `u128`.
pub(crate) fn start_path_counts(dag: &Dag, topo: &TopoOrder) -> Result<Vec<u128>, TrajectoryError> {
    forward_weights(dag, topo, dag.start(), |_| BigUint::one())
        .into_iter()
        .map(|c| c.to_u128().ok_or(TrajectoryError::CountOverflow(c)))
        .collect()
}

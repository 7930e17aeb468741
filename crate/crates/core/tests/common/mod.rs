//! Synthetic activities and brute-force reference implementations shared by
//! the integration tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::BTreeSet;

use eventcause::graph::{ActivityGraphs, Dag, EventNode};
use eventcause::triplets::{CausalQueryTriplet, Label, Question};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shape of a random activity.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub nodes: usize,
    pub obs_density: f64,
    pub causal_density: f64,
    pub max_instances: usize,
}

/// A random activity. Node positions `0..n` are a valid order of the
/// observational graph; ids are shuffled so lexicographic order disagrees
/// with it. Every node has a parent and a child except the two endpoints,
/// which makes the observational graph valid. Causal edges point forward in
/// position order.
pub fn random_activity(name: &str, seed: u64, shape: Shape) -> ActivityGraphs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.nodes;
    let mut letters: Vec<char> = ('a'..='z').collect();
    letters.shuffle(&mut rng);
    let ids: Vec<String> = (0..n).map(|i| format!("{}{i:02}", letters[i % 26])).collect();

    let mut obs = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(shape.obs_density) {
                obs.insert((i, j));
            }
        }
    }
    obs.remove(&(0, n - 1));
    for j in 1..n {
        if !obs.iter().any(|&(_, b)| b == j) {
            let i = if j == n - 1 {
                rng.gen_range(1..j)
            } else {
                rng.gen_range(0..j)
            };
            obs.insert((i, j));
        }
    }
    for i in 0..n - 1 {
        if !obs.iter().any(|&(a, _)| a == i) {
            let j = if i == 0 {
                rng.gen_range(1..n - 1)
            } else {
                rng.gen_range(i + 1..n)
            };
            obs.insert((i, j));
        }
    }
    // A child added above may have been the only fix for a later node, so
    // repeat the parent pass once.
    for j in 1..n {
        if !obs.iter().any(|&(_, b)| b == j) {
            obs.insert((0, j));
        }
    }

    let mut causal = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(shape.causal_density) {
                causal.insert((i, j));
            }
        }
    }

    let edges = |set: &BTreeSet<(usize, usize)>| -> Vec<(String, String)> {
        set.iter().map(|&(a, b)| (ids[a].clone(), ids[b].clone())).collect()
    };
    let (start, end) = (&ids[0], &ids[n - 1]);
    let g_o = Dag::new(ids.iter().map(String::as_str), &edges(&obs), start, end).unwrap();
    let g_c = Dag::new(ids.iter().map(String::as_str), &edges(&causal), start, end).unwrap();
    let nodes = ids
        .iter()
        .map(|id| {
            let k = rng.gen_range(1..=shape.max_instances);
            let instances = (0..k).map(|v| format!("do step {id} in way {v}")).collect();
            EventNode::new(id.clone(), format!("do step {id}"), instances).unwrap()
        })
        .collect();
    let graphs = ActivityGraphs::new(name, nodes, g_o, g_c).unwrap();
    assert!(graphs.validate().is_ok(), "generator produced an invalid activity");
    graphs
}

/// `count` activities with 6–12 nodes and varied densities.
pub fn corpus(count: usize, seed: u64) -> Vec<ActivityGraphs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let shape = Shape {
                nodes: rng.gen_range(6..=12),
                obs_density: rng.gen_range(0.2..0.45),
                causal_density: rng.gen_range(0.1..0.35),
                max_instances: 3,
            };
            random_activity(&format!("activity {i}"), rng.gen(), shape)
        })
        .collect()
}

/// Topological order by repeatedly taking the smallest id whose parents are
/// all placed.
pub fn topo_oracle(dag: &Dag) -> Vec<usize> {
    let n = dag.len();
    let mut placed = vec![false; n];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let next = (0..n)
            .filter(|&v| !placed[v] && dag.parents(v).iter().all(|&p| placed[p]))
            .min_by(|&a, &b| dag.id(a).cmp(dag.id(b)))
            .expect("acyclic");
        placed[next] = true;
        out.push(next);
    }
    out
}

/// Whether a directed path `x ⇝ y` of length ≥ 1 exists.
pub fn ancestor_oracle(dag: &Dag, x: usize, y: usize) -> bool {
    let mut stack = dag.children(x).to_vec();
    let mut seen = vec![false; dag.len()];
    while let Some(v) = stack.pop() {
        if v == y {
            return true;
        }
        if !std::mem::replace(&mut seen[v], true) {
            stack.extend_from_slice(dag.children(v));
        }
    }
    false
}

/// Bitmask of `v` and its descendants.
fn descendant_masks(dag: &Dag) -> Vec<u64> {
    (0..dag.len())
        .map(|v| {
            let mut m = 1u64 << v;
            for w in 0..dag.len() {
                if ancestor_oracle(dag, v, w) {
                    m |= 1 << w;
                }
            }
            m
        })
        .collect()
}

/// An undirected simple path reduced to what blocking needs: the interior
/// non-colliders as a mask, and each interior collider's descendant mask.
struct PathSummary {
    non_colliders: u64,
    colliders: Vec<u64>,
}

impl PathSummary {
    fn open_given(&self, z: u64) -> bool {
        self.non_colliders & z == 0 && self.colliders.iter().all(|&d| d & z != 0)
    }
}

fn undirected_paths(dag: &Dag, desc: &[u64], x: usize, y: usize) -> Vec<PathSummary> {
    let n = dag.len();
    let adjacent: Vec<Vec<usize>> = (0..n)
        .map(|v| dag.parents(v).iter().chain(dag.children(v)).copied().collect())
        .collect();
    let mut out = Vec::new();
    let mut path = vec![x];
    fn walk(
        dag: &Dag,
        adjacent: &[Vec<usize>],
        desc: &[u64],
        y: usize,
        path: &mut Vec<usize>,
        visited: u64,
        out: &mut Vec<PathSummary>,
    ) {
        let last = *path.last().unwrap();
        if last == y {
            let mut s = PathSummary {
                non_colliders: 0,
                colliders: Vec::new(),
            };
            for w in path.windows(3) {
                let (a, m, b) = (w[0], w[1], w[2]);
                if dag.has_edge(a, m) && dag.has_edge(b, m) {
                    s.colliders.push(desc[m]);
                } else {
                    s.non_colliders |= 1 << m;
                }
            }
            out.push(s);
            return;
        }
        for &v in &adjacent[last] {
            if visited & (1 << v) == 0 {
                path.push(v);
                walk(dag, adjacent, desc, y, path, visited | (1 << v), out);
                path.pop();
            }
        }
    }
    walk(dag, &adjacent, desc, y, &mut path, 1 << x, &mut out);
    out
}

/// d-separation by enumerating every undirected path and applying the chain,
/// fork and collider blocking rules literally.
pub struct DsepOracle {
    n: usize,
    /// Paths between `x < y`, indexed `[x][y]`.
    paths: Vec<Vec<Vec<PathSummary>>>,
}

impl DsepOracle {
    pub fn new(dag: &Dag) -> Self {
        let n = dag.len();
        let desc = descendant_masks(dag);
        let paths = (0..n)
            .map(|x| {
                (0..n)
                    .map(|y| {
                        if x < y {
                            undirected_paths(dag, &desc, x, y)
                        } else {
                            Vec::new()
                        }
                    })
                    .collect()
            })
            .collect();
        Self { n, paths }
    }

    pub fn separated(&self, x: usize, y: usize, z: &[usize]) -> bool {
        assert!(x != y && x < self.n && y < self.n);
        let (a, b) = (x.min(y), x.max(y));
        let mask = z.iter().fold(0u64, |m, &v| m | 1 << v);
        !self.paths[a][b].iter().any(|p| p.open_given(mask))
    }

    pub fn connected(&self, x: usize, y: usize) -> bool {
        !self.separated(x, y, &[])
    }
}

fn tuple(
    graphs: &ActivityGraphs,
    p: usize,
    c1: usize,
    c2: usize,
    question: Question,
    label: Label,
) -> CausalQueryTriplet {
    let d = graphs.observational();
    CausalQueryTriplet {
        activity: graphs.activity.clone(),
        premise: d.id(p).into(),
        choice1: d.id(c1).into(),
        choice2: d.id(c2).into(),
        question,
        label,
    }
}

/// Query generation written straight from the rule: both branches, the XOR
/// guards, labels on the connected choice, the ancestor guards, and a mirror
/// for every stored tuple whose mirrored ancestor guard also holds.
pub fn triplets_oracle(graphs: &ActivityGraphs) -> Vec<CausalQueryTriplet> {
    let g_c = graphs.causal();
    let ds = DsepOracle::new(g_c);
    let dc = |a: usize, b: usize| ds.connected(a, b);
    let anc = |a: usize, b: usize| ancestor_oracle(g_c, a, b);
    let order = topo_oracle(graphs.observational());
    let mut out = Vec::new();
    let mut store = |p: usize, c: [usize; 2], q: Question, l: Label| {
        out.push(tuple(graphs, p, c[0], c[1], q, l));
        let correct = c[l.index()];
        let mut mc = c;
        mc[l.index()] = p;
        let mirrored_ok = match q {
            Question::Cause => anc(correct, p),
            Question::Effect => anc(p, correct),
        };
        if mirrored_ok {
            out.push(tuple(graphs, correct, mc[0], mc[1], q.flip(), l));
        }
    };
    let n = order.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (ni, nj, nk) = (order[i], order[j], order[k]);
                if !dc(ni, nj) {
                    if dc(ni, nk) != dc(nj, nk) {
                        let l = if dc(ni, nk) { Label::One } else { Label::Two };
                        let c = [ni, nj];
                        if anc(c[l.index()], nk) {
                            store(nk, c, Question::Cause, l);
                        }
                    }
                } else if !dc(nj, nk) && dc(ni, nj) != dc(ni, nk) {
                    let l = if dc(ni, nj) { Label::One } else { Label::Two };
                    let c = [nj, nk];
                    if anc(ni, c[l.index()]) {
                        store(ni, c, Question::Effect, l);
                    }
                }
            }
        }
    }
    out
}

/// Hard variant by scanning every one-hop neighbour of each premise.
pub fn hard_oracle(triplets: &[CausalQueryTriplet], graphs: &ActivityGraphs) -> Vec<CausalQueryTriplet> {
    let g_o = graphs.observational();
    let ds = DsepOracle::new(graphs.causal());
    let mut out: Vec<CausalQueryTriplet> = Vec::new();
    for t in triplets {
        let p = g_o.ix(&t.premise).unwrap();
        let mut candidates: Vec<&str> = (0..g_o.len())
            .filter(|&v| v != p && (g_o.has_edge(p, v) || g_o.has_edge(v, p)))
            .filter(|&v| g_o.id(v) != t.correct() && !ds.connected(p, v))
            .map(|v| g_o.id(v))
            .collect();
        candidates.sort();
        if let Some(r) = candidates.first() {
            let mut h = t.clone();
            match t.label {
                Label::One => h.choice2 = r.to_string(),
                Label::Two => h.choice1 = r.to_string(),
            }
            if !out.contains(&h) {
                out.push(h);
            }
        }
    }
    out
}

/// Every directed path from `from` to `to`.
pub fn directed_paths(dag: &Dag, from: usize, to: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut path = vec![from];
    fn walk(dag: &Dag, to: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let last = *path.last().unwrap();
        if last == to {
            out.push(path.clone());
            return;
        }
        for &c in dag.children(last) {
            path.push(c);
            walk(dag, to, path, out);
            path.pop();
        }
    }
    walk(dag, to, &mut path, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Walk {
    Node,
    Trajectory,
}

/// Transition probability of one edge, from out-degrees or from enumerated
/// path counts to the end node.
pub fn edge_prob(dag: &Dag, walk: Walk, u: usize, v: usize) -> f64 {
    assert!(dag.has_edge(u, v));
    match walk {
        Walk::Node => 1.0 / dag.children(u).len() as f64,
        Walk::Trajectory => {
            directed_paths(dag, v, dag.end()).len() as f64 / directed_paths(dag, u, dag.end()).len() as f64
        }
    }
}

/// Dense transition table for the oracle side.
pub fn transition_table(dag: &Dag, walk: Walk) -> Vec<Vec<f64>> {
    let n = dag.len();
    let mut t = vec![vec![0.0; n]; n];
    for (u, row) in t.iter_mut().enumerate() {
        for &v in dag.children(u) {
            row[v] = edge_prob(dag, walk, u, v);
        }
    }
    t
}

pub fn path_prob(t: &[Vec<f64>], path: &[usize]) -> f64 {
    path.windows(2).map(|w| t[w[0]][w[1]]).product()
}

/// `(treatment, control)` by enumerating every prefix from the start to a
/// parent of `e1`, every path `e1 ⇝ e2`, and every path from the prefix end
/// to `e2` that skips `e1`.
pub fn delta_by_enumeration(dag: &Dag, walk: Walk, e1: usize, e2: usize) -> (f64, f64) {
    let t = transition_table(dag, walk);
    let treatment: f64 = directed_paths(dag, e1, e2).iter().map(|p| path_prob(&t, p)).sum();
    let (mut mass, mut weighted) = (0.0, 0.0);
    for &u in dag.parents(e1) {
        let bypass: f64 = directed_paths(dag, u, e2)
            .iter()
            .filter(|p| !p.contains(&e1))
            .map(|p| path_prob(&t, p))
            .sum();
        for prefix in directed_paths(dag, dag.start(), u) {
            let w = path_prob(&t, &prefix);
            mass += w;
            weighted += w * bypass;
        }
    }
    let control = if mass > 0.0 { weighted / mass } else { 0.0 };
    (treatment, control)
}

fn step(t: &[Vec<f64>], dag: &Dag, u: usize, rng: &mut impl Rng) -> Option<usize> {
    let children = dag.children(u);
    if children.is_empty() {
        return None;
    }
    let mut r: f64 = rng.gen();
    for &c in children {
        r -= t[u][c];
        if r < 0.0 {
            return Some(c);
        }
    }
    children.last().copied()
}

/// `(treatment, control)` from random walks. Treatment walks start at `e1`.
/// Control walks start from a full walk out of the start node: each visited
/// parent of `e1` launches a continuation that dies on stepping into `e1`.
pub fn delta_by_rollouts(dag: &Dag, walk: Walk, e1: usize, e2: usize, rollouts: usize, seed: u64) -> (f64, f64) {
    let t = transition_table(dag, walk);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = |from: usize, avoid: Option<usize>, rng: &mut ChaCha8Rng| {
        let mut v = from;
        loop {
            if v == e2 {
                return true;
            }
            match step(&t, dag, v, rng) {
                None => return false,
                Some(next) if Some(next) == avoid => return false,
                Some(next) => v = next,
            }
        }
    };
    let mut treated = 0usize;
    for _ in 0..rollouts {
        treated += usize::from(hits(e1, None, &mut rng));
    }
    let parents = dag.parents(e1);
    let (mut launched, mut reached) = (0usize, 0usize);
    for _ in 0..rollouts {
        let mut v = dag.start();
        loop {
            if parents.contains(&v) {
                launched += 1;
                reached += usize::from(hits(v, Some(e1), &mut rng));
            }
            match step(&t, dag, v, &mut rng) {
                Some(next) => v = next,
                None => break,
            }
        }
    }
    let control = if launched == 0 {
        0.0
    } else {
        reached as f64 / launched as f64
    };
    (treated as f64 / rollouts as f64, control)
}

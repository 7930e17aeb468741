//! Causal query triplet generation.
//!
//! Candidate node triples come from the observational graph's topological
//! order; d-separation and ancestry in the causal graph decide which triples
//! become queries. Every stored query is paired with its cause/effect
//! mirror.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ActivityGraphs, Dag, GraphError};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Question {
    Cause,
    Effect,
}

impl Question {
    pub fn as_str(self) -> &'static str {
        match self {
            Question::Cause => "cause",
            Question::Effect => "effect",
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Question::Cause => Question::Effect,
            Question::Effect => Question::Cause,
        }
    }
}

impl fmt::Display for Question {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which option slot holds the correct answer. Serialized as `1` or `2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    One,
    Two,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::One => 0,
            Label::Two => 1,
        }
    }

    pub fn from_index(ix: usize) -> Self {
        if ix == 0 {
            Label::One
        } else {
            Label::Two
        }
    }

    pub fn other(self) -> Self {
        match self {
            Label::One => Label::Two,
            Label::Two => Label::One,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Label::One),
            2 => Ok(Label::Two),
            other => Err(format!("label must be 1 or 2, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.index() as u8 + 1
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Causal,
    CausallyHard,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Causal => "causal",
            Variant::CausallyHard => "causally_hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Node,
    Instance,
}

/// A node-level benchmark query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CausalQueryTriplet {
    pub activity: String,
    pub premise: String,
    pub choice1: String,
    pub choice2: String,
    pub question: Question,
    pub label: Label,
}

impl CausalQueryTriplet {
    pub fn choices(&self) -> [&str; 2] {
        [&self.choice1, &self.choice2]
    }

    pub fn correct(&self) -> &str {
        self.choices()[self.label.index()]
    }

    pub fn wrong(&self) -> &str {
        self.choices()[self.label.other().index()]
    }

    /// Exchanges the option slots; the label follows the correct choice.
    pub fn swap_choices(&mut self) {
        std::mem::swap(&mut self.choice1, &mut self.choice2);
        self.label = self.label.other();
    }

    /// The cause↔effect counterpart: the correct choice becomes the premise
    /// and the old premise takes the correct choice's slot.
    pub fn mirror(&self) -> Self {
        let mut m = self.clone();
        m.premise = self.correct().to_string();
        match self.label {
            Label::One => m.choice1 = self.premise.clone(),
            Label::Two => m.choice2 = self.premise.clone(),
        }
        m.question = self.question.flip();
        m
    }
}

/// All node triples `(n_i, n_j, n_k)` with topological positions
/// `i < j < k`, lexicographic in those positions.
pub fn gen_samples(g_o: &Dag) -> Result<Vec<[usize; 3]>, GraphError> {
    let order = g_o.topological_order()?.order().to_vec();
    let n = order.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) * n.saturating_sub(2) / 6);
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                out.push([order[i], order[j], order[k]]);
            }
        }
    }
    Ok(out)
}

struct CausalIndex {
    connected: Vec<Vec<bool>>,
    ancestor: Vec<Vec<bool>>,
}

impl CausalIndex {
    fn new(g_c: &Dag) -> Self {
        Self {
            connected: g_c.d_connection_matrix(),
            ancestor: (0..g_c.len()).map(|x| g_c.descendants(x)).collect(),
        }
    }

    fn dc(&self, x: usize, y: usize) -> bool {
        self.connected[x][y]
    }

    fn anc(&self, x: usize, y: usize) -> bool {
        x != y && self.ancestor[x][y]
    }
}

/// `(premise, [choice1, choice2], question, label)` as dense indices.
type RawTriplet = (usize, [usize; 2], Question, Label);

fn classify(ix: &CausalIndex, [ni, nj, nk]: [usize; 3]) -> Option<RawTriplet> {
    if !ix.dc(ni, nj) {
        if ix.dc(ni, nk) ^ ix.dc(nj, nk) {
            let label = if ix.dc(ni, nk) { Label::One } else { Label::Two };
            let choices = [ni, nj];
            if ix.anc(choices[label.index()], nk) {
                return Some((nk, choices, Question::Cause, label));
            }
        }
    } else if !ix.dc(nj, nk) && (ix.dc(ni, nj) ^ ix.dc(ni, nk)) {
        // The label points at whichever choice is d-connected to the premise.
        let label = if ix.dc(ni, nj) { Label::One } else { Label::Two };
        let choices = [nj, nk];
        if ix.anc(ni, choices[label.index()]) {
            return Some((ni, choices, Question::Effect, label));
        }
    }
    None
}

fn mirror_raw(ix: &CausalIndex, (p, choices, q, l): RawTriplet) -> Option<RawTriplet> {
    let correct = choices[l.index()];
    let mut mc = choices;
    mc[l.index()] = p;
    let mq = q.flip();
    let guard = match mq {
        Question::Cause => ix.anc(mc[l.index()], correct),
        Question::Effect => ix.anc(correct, mc[l.index()]),
    };
    guard.then_some((correct, mc, mq, l))
}

/// Generates every node-level query for an activity, each followed by its
/// mirror. Option slots are as produced by the generation rule; see
/// [`crate::dataset::SlotBalancer`] for randomized slot placement.
pub fn create_triplets(graphs: &ActivityGraphs) -> Result<Vec<CausalQueryTriplet>, ForgeError> {
    let g_c = graphs.causal();
    let candidates = gen_samples(graphs.observational())?;
    let index = CausalIndex::new(g_c);
    let raw: Vec<RawTriplet> = candidates
        .par_iter()
        .filter_map(|&c| classify(&index, c))
        .flat_map_iter(|t| std::iter::once(t).chain(mirror_raw(&index, t)))
        .collect();
    Ok(raw.into_iter().map(|t| materialize(graphs, t)).collect())
}

fn materialize(graphs: &ActivityGraphs, (p, [c1, c2], question, label): RawTriplet) -> CausalQueryTriplet {
    let dag = graphs.observational();
    CausalQueryTriplet {
        activity: graphs.activity.clone(),
        premise: dag.id(p).to_string(),
        choice1: dag.id(c1).to_string(),
        choice2: dag.id(c2).to_string(),
        question,
        label,
    }
}

/// Re-derives every query invariant from the graphs. Returns the first broken
/// rule.
pub fn check_triplet(graphs: &ActivityGraphs, t: &CausalQueryTriplet) -> Result<(), String> {
    let g_c = graphs.causal();
    let (p, correct, wrong) = (t.premise.as_str(), t.correct(), t.wrong());
    if p == correct || p == wrong || correct == wrong {
        return Err("nodes not pairwise distinct".into());
    }
    let err = |e: GraphError| e.to_string();
    if !g_c.d_connected(p, correct, &[]).map_err(err)? {
        return Err(format!("correct choice {correct} not d-connected to premise {p}"));
    }
    if !g_c.d_separated(wrong, p, &[]).map_err(err)? || !g_c.d_separated(wrong, correct, &[]).map_err(err)? {
        return Err(format!("wrong choice {wrong} not d-separated from both other nodes"));
    }
    let (cause, effect) = match t.question {
        Question::Cause => (correct, p),
        Question::Effect => (p, correct),
    };
    if !g_c.is_ancestor(cause, effect).map_err(err)? {
        return Err(format!("{cause} is not a causal ancestor of {effect}"));
    }
    let topo = graphs.observational().topological_order().map_err(err)?;
    let g_o = graphs.observational();
    if topo.rank(g_o.ix(cause).map_err(err)?) >= topo.rank(g_o.ix(effect).map_err(err)?) {
        return Err(format!("cause {cause} does not precede effect {effect}"));
    }
    Ok(())
}

/// Replaces each query's wrong choice by the lexicographically smallest
/// observational neighbour of the premise that is d-separated from it in the
/// causal graph. Queries without such a neighbour are dropped; identical
/// results are kept once.
pub fn make_hard_variant(
    triplets: &[CausalQueryTriplet],
    graphs: &ActivityGraphs,
) -> Result<Vec<CausalQueryTriplet>, ForgeError> {
    let g_o = graphs.observational();
    let g_c = graphs.causal();
    let connected = g_c.d_connection_matrix();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for t in triplets {
        let p = g_o.ix(&t.premise)?;
        let correct = g_o.ix(t.correct())?;
        let replacement = g_o
            .parents(p)
            .iter()
            .chain(g_o.children(p))
            .copied()
            .filter(|&n| n != p && n != correct && !connected[p][n])
            .min();
        let Some(r) = replacement else { continue };
        let mut hard = t.clone();
        let slot = t.label.other();
        let id = g_o.id(r).to_string();
        match slot {
            Label::One => hard.choice1 = id,
            Label::Two => hard.choice2 = id,
        }
        if seen.insert(hard.clone()) {
            out.push(hard);
        }
    }
    Ok(out)
}

/// One text-level query drawn from a node-level one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceTriplet<'a> {
    pub triplet: &'a CausalQueryTriplet,
    pub premise_text: &'a str,
    pub choice1_text: &'a str,
    pub choice2_text: &'a str,
}

/// Every combination of instance texts for every query, in query order then
/// premise × choice1 × choice2 order.
pub fn expand_instances<'a>(
    triplets: &'a [CausalQueryTriplet],
    graphs: &'a ActivityGraphs,
) -> Result<impl Iterator<Item = InstanceTriplet<'a>> + 'a, ForgeError> {
    let mut resolved = Vec::with_capacity(triplets.len());
    for t in triplets {
        resolved.push((
            t,
            graphs.node_by_id(&t.premise)?,
            graphs.node_by_id(&t.choice1)?,
            graphs.node_by_id(&t.choice2)?,
        ));
    }
    Ok(resolved.into_iter().flat_map(|(t, p, c1, c2)| {
        p.instances.iter().flat_map(move |pt| {
            c1.instances.iter().flat_map(move |c1t| {
                c2.instances.iter().map(move |c2t| InstanceTriplet {
                    triplet: t,
                    premise_text: pt,
                    choice1_text: c1t,
                    choice2_text: c2t,
                })
            })
        })
    }))
}

/// Σ over queries of the product of the three nodes' instance counts.
pub fn instance_count(triplets: &[CausalQueryTriplet], graphs: &ActivityGraphs) -> Result<u128, ForgeError> {
    let mut total: u128 = 0;
    for t in triplets {
        let n = |id: &str| graphs.node_by_id(id).map(|n| n.instances.len() as u128);
        total += n(&t.premise)? * n(&t.choice1)? * n(&t.choice2)?;
    }
    Ok(total)
}

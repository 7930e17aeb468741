//! Causal estimates and the language-model side of them.
//!
//! An LM's belief that `E2` becomes more likely is read off a pair of
//! intervention prompts, one with "Increase" at option A and one with it at
//! option B, so that a constant preference for either letter cancels.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{ActivityGraphs, Dag, GraphError, TopoOrder};
use crate::prompt::{
    render_intervention, render_temporal_masked, render_temporal_mcqa, Polarity, PromptError, PromptMeta,
    RenderedPrompt,
};
use crate::scorer::{option_pair, ScoreError, Scorer};
use crate::trajectory::{start_path_counts, TrajectoryError};

pub const DEFAULT_TRAJECTORY_SAMPLES: usize = 30;

#[derive(Debug, Error)]
pub enum EstimandError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("all four scores are zero for {0}")]
    Degenerate(String),
    #[error("`{0}` is not reachable from the start event")]
    Unreachable(String),
    #[error("trajectory set is empty")]
    NoTrajectories,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimateScheme {
    /// Stratified frequencies over observed event sequences.
    #[serde(rename = "o")]
    Original,
    /// Random walk with uniform choice among children.
    #[serde(rename = "n")]
    Node,
    /// Random walk under which every start-to-end path is equally likely.
    #[serde(rename = "t")]
    Trajectory,
    /// Before/after preference of a scorer.
    #[serde(rename = "temporal")]
    Temporal,
    /// Backdoor-adjusted intervention prompts scored by a model.
    #[serde(rename = "backdoor")]
    BackdoorLm,
    /// Ground truth read from the causal graph.
    #[serde(rename = "oracle")]
    Oracle,
}

impl EstimateScheme {
    pub const ALL: [EstimateScheme; 6] = [
        Self::Original,
        Self::Node,
        Self::Trajectory,
        Self::Temporal,
        Self::BackdoorLm,
        Self::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Original => "o",
            Self::Node => "n",
            Self::Trajectory => "t",
            Self::Temporal => "temporal",
            Self::BackdoorLm => "backdoor",
            Self::Oracle => "oracle",
        }
    }

    /// Whether the scheme knows the observational graph, and so can apply
    /// temporal precedence before estimating.
    pub fn uses_graph(self) -> bool {
        !matches!(self, Self::Temporal)
    }
}

impl std::fmt::Display for EstimateScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EstimateScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown scheme {s:?} (expected o, n, t, temporal, backdoor or oracle)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub scheme: EstimateScheme,
    pub e1: String,
    pub e2: String,
    /// `treatment − control`, clamped to `[−1, 1]`.
    pub value: f64,
    pub treatment: f64,
    pub control: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_sample_size: Option<usize>,
    #[serde(default)]
    pub empty_strata: usize,
}

impl DeltaEstimate {
    pub fn new(
        scheme: EstimateScheme,
        e1: impl Into<String>,
        e2: impl Into<String>,
        treatment: f64,
        control: f64,
    ) -> Self {
        Self {
            scheme,
            e1: e1.into(),
            e2: e2.into(),
            value: (treatment - control).clamp(-1.0, 1.0),
            treatment,
            control,
            trajectory_sample_size: None,
            empty_strata: 0,
        }
    }
}

/// The four option scores behind one normalized increase score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreQuad {
    /// "Increase" at A, score of A.
    pub s_phi: f64,
    /// "Increase" at B, score of B.
    pub s_phi_f: f64,
    /// "Increase" at A, score of B.
    pub s_tilde_phi: f64,
    /// "Increase" at B, score of A.
    pub s_tilde_phi_f: f64,
}

impl ScoreQuad {
    /// `[score A, score B]` of the unflipped and flipped prompts.
    pub fn from_pairs(unflipped: [f64; 2], flipped: [f64; 2]) -> Self {
        Self {
            s_phi: unflipped[0],
            s_tilde_phi: unflipped[1],
            s_phi_f: flipped[1],
            s_tilde_phi_f: flipped[0],
        }
    }

    /// Share of the total mass that lands on "Increase"; `None` when all
    /// four scores are zero.
    pub fn normalized(&self) -> Option<f64> {
        let inc = self.s_phi + self.s_phi_f;
        let total = inc + self.s_tilde_phi + self.s_tilde_phi_f;
        (total > 0.0).then(|| inc / total)
    }
}

/// An event as both a graph id and the text shown to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRef<'a> {
    pub id: &'a str,
    pub text: &'a str,
}

impl<'a> EventRef<'a> {
    pub fn of(graphs: &'a ActivityGraphs, id: &'a str) -> Result<Self, GraphError> {
        Ok(Self {
            id,
            text: &graphs.node_by_id(id)?.label,
        })
    }
}

fn intervention_pair(
    activity: &str,
    trajectory: &[&str],
    e1: EventRef<'_>,
    e2: EventRef<'_>,
    polarity: Polarity,
) -> Result<[RenderedPrompt; 2], PromptError> {
    let one = |flipped| {
        render_intervention(activity, trajectory, e1.text, polarity, e2.text, flipped).map(|p| {
            p.with_meta(PromptMeta::Intervention {
                e1: e1.id.into(),
                e2: e2.id.into(),
                polarity,
                flipped,
            })
        })
    };
    Ok([one(false)?, one(true)?])
}

/// Normalized belief that `e2` becomes more likely after the trajectory and
/// the (non-)occurrence of `e1`, in `[0, 1]`.
pub fn normalized_increase_score(
    scorer: &dyn Scorer,
    activity: &str,
    trajectory: &[&str],
    e1: EventRef<'_>,
    e2: EventRef<'_>,
    polarity: Polarity,
) -> Result<f64, EstimandError> {
    score_quad(scorer, activity, trajectory, e1, e2, polarity)?
        .normalized()
        .ok_or_else(|| EstimandError::Degenerate(format!("{} -> {}", e1.id, e2.id)))
}

pub fn score_quad(
    scorer: &dyn Scorer,
    activity: &str,
    trajectory: &[&str],
    e1: EventRef<'_>,
    e2: EventRef<'_>,
    polarity: Polarity,
) -> Result<ScoreQuad, EstimandError> {
    let prompts = intervention_pair(activity, trajectory, e1, e2, polarity)?;
    let scores = scorer.score_batch(&prompts)?;
    if scores.len() != 2 {
        return Err(ScoreError::Protocol(format!("expected 2 results, got {}", scores.len())).into());
    }
    Ok(ScoreQuad::from_pairs(
        option_pair(&prompts[0], &scores[0])?,
        option_pair(&prompts[1], &scores[1])?,
    ))
}

/// Mean normalized increase score over trajectories given as node indices
/// of the observational graph.
pub fn p_do(
    scorer: &dyn Scorer,
    graphs: &ActivityGraphs,
    e1: &str,
    e2: &str,
    polarity: Polarity,
    trajectories: &[Vec<usize>],
) -> Result<f64, EstimandError> {
    if trajectories.is_empty() {
        return Err(EstimandError::NoTrajectories);
    }
    let (r1, r2) = (EventRef::of(graphs, e1)?, EventRef::of(graphs, e2)?);
    let mut sum = 0.0;
    for t in trajectories {
        let texts: Vec<&str> = t.iter().map(|&ix| graphs.node(ix).label.as_str()).collect();
        sum += normalized_increase_score(scorer, &graphs.activity, &texts, r1, r2, polarity)?;
    }
    Ok(sum / trajectories.len() as f64)
}

/// Uniform sampler over start-anchored paths that end at a parent of a
/// given event. The start event has exactly one prefix, the empty one.
#[derive(Debug, Clone)]
pub struct PrefixSampler<'a> {
    dag: &'a Dag,
    topo: TopoOrder,
    from_start: Vec<u128>,
}

/// Prefixes drawn for one event. `exhaustive` means every prefix is present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixSample {
    pub total: u128,
    pub exhaustive: bool,
    pub paths: Vec<Vec<usize>>,
}

impl<'a> PrefixSampler<'a> {
    pub fn new(dag: &'a Dag) -> Result<Self, EstimandError> {
        let topo = dag.topological_order()?;
        let from_start = start_path_counts(dag, &topo)?;
        Ok(Self { dag, topo, from_start })
    }

    pub fn topo(&self) -> &TopoOrder {
        &self.topo
    }

    /// Number of prefixes ending at a parent of `e1`.
    pub fn total(&self, e1: usize) -> u128 {
        if e1 == self.dag.start() {
            return 1;
        }
        self.dag.parents(e1).iter().map(|&u| self.from_start[u]).sum()
    }

    /// The `index`-th prefix in a fixed enumeration order.
    pub fn unrank(&self, e1: usize, mut index: u128) -> Option<Vec<usize>> {
        if e1 == self.dag.start() {
            return (index == 0).then(Vec::new);
        }
        let mut v = *self.dag.parents(e1).iter().find(|&&u| {
            let c = self.from_start[u];
            if index < c {
                true
            } else {
                index -= c;
                false
            }
        })?;
        let mut rev = vec![v];
        while v != self.dag.start() {
            v = *self.dag.parents(v).iter().find(|&&w| {
                let c = self.from_start[w];
                if index < c {
                    true
                } else {
                    index -= c;
                    false
                }
            })?;
            rev.push(v);
        }
        rev.reverse();
        Some(rev)
    }

    /// All prefixes if there are at most `n`, otherwise `n` distinct ones
    /// drawn uniformly. Deterministic in `(seed, e1)`.
    pub fn sample(&self, e1: usize, n: usize, seed: u64) -> Result<PrefixSample, EstimandError> {
        let total = self.total(e1);
        if total == 0 {
            return Err(EstimandError::Unreachable(self.dag.id(e1).into()));
        }
        let exhaustive = total <= n as u128;
        let indices: Vec<u128> = if exhaustive {
            (0..total).collect()
        } else {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(self.dag.id(e1).as_bytes());
            let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
            let mut picked = BTreeSet::new();
            while picked.len() < n {
                picked.insert(rng.gen_range(0..total));
            }
            picked.into_iter().collect()
        };
        let paths = indices
            .into_iter()
            .map(|i| self.unrank(e1, i).expect("index below total"))
            .collect();
        Ok(PrefixSample {
            total,
            exhaustive,
            paths,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackdoorConfig {
    pub trajectories: usize,
    pub seed: u64,
}

impl Default for BackdoorConfig {
    fn default() -> Self {
        Self {
            trajectories: DEFAULT_TRAJECTORY_SAMPLES,
            seed: 0,
        }
    }
}

/// LM-side `Δ`, averaging intervention prompts over prefixes that end at a
/// parent of `E1`. Both polarities see the same prefixes.
pub struct BackdoorEstimator<'a> {
    graphs: &'a ActivityGraphs,
    sampler: PrefixSampler<'a>,
    config: BackdoorConfig,
}

impl<'a> BackdoorEstimator<'a> {
    pub fn new(graphs: &'a ActivityGraphs, config: BackdoorConfig) -> Result<Self, EstimandError> {
        if config.trajectories == 0 {
            return Err(EstimandError::NoTrajectories);
        }
        Ok(Self {
            graphs,
            sampler: PrefixSampler::new(graphs.observational())?,
            config,
        })
    }

    pub fn delta(&self, scorer: &dyn Scorer, e1: &str, e2: &str) -> Result<DeltaEstimate, EstimandError> {
        let dag = self.graphs.observational();
        let (a, b) = (dag.ix(e1)?, dag.ix(e2)?);
        if self.sampler.topo.rank(a) >= self.sampler.topo.rank(b) {
            return Err(TrajectoryError::NotAfter {
                e1: e1.into(),
                e2: e2.into(),
            }
            .into());
        }
        let sample = self.sampler.sample(a, self.config.trajectories, self.config.seed)?;
        let treatment = p_do(scorer, self.graphs, e1, e2, Polarity::Occurred, &sample.paths)?;
        let control = p_do(scorer, self.graphs, e1, e2, Polarity::Negated, &sample.paths)?;
        let mut est = DeltaEstimate::new(EstimateScheme::BackdoorLm, e1, e2, treatment, control);
        est.trajectory_sample_size = Some(sample.paths.len());
        Ok(est)
    }
}

/// One-shot [`BackdoorEstimator::delta`].
pub fn delta_backdoor_lm(
    scorer: &dyn Scorer,
    graphs: &ActivityGraphs,
    e1: &str,
    e2: &str,
    config: BackdoorConfig,
) -> Result<DeltaEstimate, EstimandError> {
    BackdoorEstimator::new(graphs, config)?.delta(scorer, e1, e2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalTemplate {
    #[default]
    Masked,
    Mcqa,
}

fn before_share(
    scorer: &dyn Scorer,
    activity: &str,
    template: TemporalTemplate,
    first: EventRef<'_>,
    second: EventRef<'_>,
) -> Result<f64, EstimandError> {
    let prompt = match template {
        TemporalTemplate::Masked => render_temporal_masked(first.text, second.text)?,
        TemporalTemplate::Mcqa => render_temporal_mcqa(activity, first.text, second.text)?,
    }
    .with_meta(PromptMeta::Temporal {
        first: first.id.into(),
        second: second.id.into(),
    });
    let [before, after] = option_pair(&prompt, &scorer.score(&prompt)?)?;
    if before + after == 0.0 {
        return Err(EstimandError::Degenerate(format!("{} before {}", first.id, second.id)));
    }
    Ok(before / (before + after))
}

/// `b(e1, e2) − b(e2, e1)` where `b(x, y)` is the normalized preference for
/// "x before y".
pub fn delta_temporal(
    scorer: &dyn Scorer,
    activity: &str,
    e1: EventRef<'_>,
    e2: EventRef<'_>,
    template: TemporalTemplate,
) -> Result<DeltaEstimate, EstimandError> {
    let forward = before_share(scorer, activity, template, e1, e2)?;
    let backward = before_share(scorer, activity, template, e2, e1)?;
    Ok(DeltaEstimate::new(
        EstimateScheme::Temporal,
        e1.id,
        e2.id,
        forward,
        backward,
    ))
}

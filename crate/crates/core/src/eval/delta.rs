//! Per-activity `Δ` sources for triplet evaluation.

use std::collections::BTreeMap;

use crate::estimand::{
    delta_temporal, BackdoorConfig, BackdoorEstimator, DeltaEstimate, EstimateScheme, EventRef, TemporalTemplate,
};
use crate::graph::{ActivityGraphs, TopoOrder};
use crate::trajectory::{delta_original, EsdCorpus, GraphEstimator, TransitionScheme};

use super::{EvalError, ScorerSet};

/// A causal-strength function over ordered event pairs of one activity.
pub trait DeltaSource: Sync {
    fn scheme(&self) -> EstimateScheme;

    fn delta(&self, activity: &str, e1: &str, e2: &str) -> Result<DeltaEstimate, EvalError>;
}

/// Topological ranks of the observational graph per activity.
#[derive(Debug, Clone, Default)]
pub struct Precedence {
    ranks: BTreeMap<String, (Vec<String>, TopoOrder)>,
}

impl Precedence {
    pub fn new<'a>(graphs: impl IntoIterator<Item = &'a ActivityGraphs>) -> Result<Self, EvalError> {
        let mut ranks = BTreeMap::new();
        for g in graphs {
            let topo = g.observational().topological_order().map_err(|e| EvalError::Activity {
                activity: g.activity.clone(),
                message: e.to_string(),
            })?;
            ranks.insert(g.activity.clone(), (g.observational().ids().to_vec(), topo));
        }
        Ok(Self { ranks })
    }

    /// `Some(true)` when `e1` is ranked strictly before `e2`.
    pub fn precedes(&self, activity: &str, e1: &str, e2: &str) -> Option<bool> {
        let (ids, topo) = self.ranks.get(activity)?;
        let a = ids.binary_search_by(|x| x.as_str().cmp(e1)).ok()?;
        let b = ids.binary_search_by(|x| x.as_str().cmp(e2)).ok()?;
        Some(topo.rank(a) < topo.rank(b))
    }
}

fn lookup<'m, T>(map: &'m BTreeMap<String, T>, activity: &str) -> Result<&'m T, EvalError> {
    map.get(activity)
        .ok_or_else(|| EvalError::UnknownActivity(activity.into()))
}

fn activity_error(activity: &str, e: impl std::fmt::Display) -> EvalError {
    EvalError::Activity {
        activity: activity.into(),
        message: e.to_string(),
    }
}

/// Closed-form `Δ_n` or `Δ_t` on the observational graph.
pub struct GraphDeltas<'a> {
    scheme: TransitionScheme,
    estimators: BTreeMap<String, GraphEstimator<'a>>,
}

impl<'a> GraphDeltas<'a> {
    pub fn new(scheme: TransitionScheme, graphs: &[&'a ActivityGraphs]) -> Result<Self, EvalError> {
        let mut estimators = BTreeMap::new();
        for g in graphs {
            let est = GraphEstimator::new(g.observational(), scheme).map_err(|e| activity_error(&g.activity, e))?;
            estimators.insert(g.activity.clone(), est);
        }
        Ok(Self { scheme, estimators })
    }
}

impl DeltaSource for GraphDeltas<'_> {
    fn scheme(&self) -> EstimateScheme {
        match self.scheme {
            TransitionScheme::NodeUniform => EstimateScheme::Node,
            TransitionScheme::TrajectoryUniform => EstimateScheme::Trajectory,
        }
    }

    fn delta(&self, activity: &str, e1: &str, e2: &str) -> Result<DeltaEstimate, EvalError> {
        lookup(&self.estimators, activity)?
            .delta(e1, e2)
            .map_err(|e| activity_error(activity, e))
    }
}

/// Stratified `Δ_o` over crowd-written sequences.
pub struct OriginalDeltas<'a> {
    corpora: BTreeMap<String, (&'a ActivityGraphs, &'a EsdCorpus)>,
}

impl<'a> OriginalDeltas<'a> {
    pub fn new(pairs: &[(&'a ActivityGraphs, &'a EsdCorpus)]) -> Self {
        Self {
            corpora: pairs.iter().map(|&(g, c)| (g.activity.clone(), (g, c))).collect(),
        }
    }
}

impl DeltaSource for OriginalDeltas<'_> {
    fn scheme(&self) -> EstimateScheme {
        EstimateScheme::Original
    }

    fn delta(&self, activity: &str, e1: &str, e2: &str) -> Result<DeltaEstimate, EvalError> {
        let (g, corpus) = lookup(&self.corpora, activity)?;
        delta_original(corpus, g.observational(), e1, e2).map_err(|e| activity_error(activity, e))
    }
}

/// Ground truth: `1` when the pair is d-connected in the causal graph.
pub struct OracleDeltas {
    connected: BTreeMap<String, (Vec<String>, Vec<Vec<bool>>)>,
}

impl OracleDeltas {
    pub fn new(graphs: &[&ActivityGraphs]) -> Self {
        Self {
            connected: graphs
                .iter()
                .map(|g| {
                    let c = g.causal();
                    (g.activity.clone(), (c.ids().to_vec(), c.d_connection_matrix()))
                })
                .collect(),
        }
    }
}

impl DeltaSource for OracleDeltas {
    fn scheme(&self) -> EstimateScheme {
        EstimateScheme::Oracle
    }

    fn delta(&self, activity: &str, e1: &str, e2: &str) -> Result<DeltaEstimate, EvalError> {
        let (ids, m) = lookup(&self.connected, activity)?;
        let ix = |id: &str| {
            ids.binary_search_by(|x| x.as_str().cmp(id))
                .map_err(|_| activity_error(activity, format!("unknown node `{id}`")))
        };
        let v = if m[ix(e1)?][ix(e2)?] { 1.0 } else { 0.0 };
        Ok(DeltaEstimate::new(EstimateScheme::Oracle, e1, e2, v, 0.0))
    }
}

/// Scorer-driven backdoor `Δ_M`.
pub struct BackdoorDeltas<'a> {
    scorers: &'a dyn ScorerSet,
    estimators: BTreeMap<String, BackdoorEstimator<'a>>,
}

impl<'a> BackdoorDeltas<'a> {
    pub fn new(
        scorers: &'a dyn ScorerSet,
        graphs: &[&'a ActivityGraphs],
        config: BackdoorConfig,
    ) -> Result<Self, EvalError> {
        let mut estimators = BTreeMap::new();
        for g in graphs {
            let est = BackdoorEstimator::new(g, config).map_err(|e| activity_error(&g.activity, e))?;
            estimators.insert(g.activity.clone(), est);
        }
        Ok(Self { scorers, estimators })
    }
}

impl DeltaSource for BackdoorDeltas<'_> {
    fn scheme(&self) -> EstimateScheme {
        EstimateScheme::BackdoorLm
    }

    fn delta(&self, activity: &str, e1: &str, e2: &str) -> Result<DeltaEstimate, EvalError> {
        let scorer = self.scorers.for_activity(activity)?;
        lookup(&self.estimators, activity)?
            .delta(scorer, e1, e2)
            .map_err(|e| activity_error(activity, e))
    }
}

/// Scorer-driven temporal-order `Δ`.
pub struct TemporalDeltas<'a> {
    scorers: &'a dyn ScorerSet,
    graphs: BTreeMap<String, &'a ActivityGraphs>,
    template: TemporalTemplate,
}

impl<'a> TemporalDeltas<'a> {
    pub fn new(scorers: &'a dyn ScorerSet, graphs: &[&'a ActivityGraphs], template: TemporalTemplate) -> Self {
        Self {
            scorers,
            graphs: graphs.iter().map(|g| (g.activity.clone(), *g)).collect(),
            template,
        }
    }
}

impl DeltaSource for TemporalDeltas<'_> {
    fn scheme(&self) -> EstimateScheme {
        EstimateScheme::Temporal
    }

    fn delta(&self, activity: &str, e1: &str, e2: &str) -> Result<DeltaEstimate, EvalError> {
        let g = *lookup(&self.graphs, activity)?;
        let r1 = EventRef::of(g, e1).map_err(|e| activity_error(activity, e))?;
        let r2 = EventRef::of(g, e2).map_err(|e| activity_error(activity, e))?;
        let scorer = self.scorers.for_activity(activity)?;
        delta_temporal(scorer, activity, r1, r2, self.template).map_err(|e| activity_error(activity, e))
    }
}

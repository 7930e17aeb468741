//! On-disk formats for activity bundles and event-sequence corpora.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::graph::{ActivityGraphs, Dag, EventNode, GraphError, ValidationReport};
use crate::trajectory::{EsdCorpus, TrajectoryError};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {error}")]
    Io { path: PathBuf, error: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: unknown field `{field}`")]
    UnknownField { path: PathBuf, field: String },
    #[error("{path}: unsupported format_version {found} (expected {BUNDLE_FORMAT_VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: {error}")]
    Graph { path: PathBuf, error: GraphError },
    #[error("{path}: {}", .report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid { path: PathBuf, report: ValidationReport },
    #[error("{path}: activity {found:?} does not match bundle activity {expected:?}")]
    ActivityMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: {error}")]
    Esd { path: PathBuf, error: TrajectoryError },
}

impl IoError {
    /// True for errors about file content, as opposed to failing to read
    /// the file at all.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Self::Io { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleNode {
    pub id: String,
    pub label: String,
    pub instances: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityBundle {
    pub format_version: u32,
    pub activity: String,
    pub start: String,
    pub end: String,
    pub nodes: Vec<BundleNode>,
    pub observational_edges: Vec<(String, String)>,
    pub causal_edges: Vec<(String, String)>,
}

const BUNDLE_FIELDS: &[&str] = &[
    "format_version",
    "activity",
    "start",
    "end",
    "nodes",
    "observational_edges",
    "causal_edges",
];
const NODE_FIELDS: &[&str] = &["id", "label", "instances"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    /// Reject fields outside the schema.
    pub strict: bool,
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|error| IoError::Io {
        path: path.into(),
        error,
    })
}

fn json_error(path: &Path, e: serde_json::Error) -> IoError {
    IoError::Json {
        path: path.into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn unknown_fields(path: &Path, value: &Value) -> Result<(), IoError> {
    let unknown = |obj: &serde_json::Map<String, Value>, allowed: &[&str], prefix: &str| {
        obj.keys()
            .find(|k| !allowed.contains(&k.as_str()))
            .map(|k| IoError::UnknownField {
                path: path.into(),
                field: format!("{prefix}{k}"),
            })
    };
    if let Some(obj) = value.as_object() {
        if let Some(e) = unknown(obj, BUNDLE_FIELDS, "") {
            return Err(e);
        }
        for (i, node) in obj
            .get("nodes")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
            .enumerate()
        {
            if let Some(e) = node
                .as_object()
                .and_then(|n| unknown(n, NODE_FIELDS, &format!("nodes[{i}].")))
            {
                return Err(e);
            }
        }
    }
    Ok(())
}

impl ActivityBundle {
    pub fn parse(path: &Path, text: &str, options: LoadOptions) -> Result<Self, IoError> {
        let value: Value = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
        if options.strict {
            unknown_fields(path, &value)?;
        }
        let bundle: Self = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
        if bundle.format_version != BUNDLE_FORMAT_VERSION {
            return Err(IoError::Version {
                path: path.into(),
                found: bundle.format_version,
            });
        }
        Ok(bundle)
    }

    /// Builds the graphs without running the activity invariants.
    pub fn to_graphs(&self) -> Result<ActivityGraphs, GraphError> {
        let mut ids: Vec<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateNode(w[0].into()));
        }
        let observational = Dag::new(ids.iter().copied(), &self.observational_edges, &self.start, &self.end)?;
        let causal = Dag::new(ids.iter().copied(), &self.causal_edges, &self.start, &self.end)?;
        let nodes = self
            .nodes
            .iter()
            .map(|n| EventNode::new(n.id.clone(), n.label.clone(), n.instances.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        ActivityGraphs::new(self.activity.clone(), nodes, observational, causal)
    }

    pub fn from_graphs(graphs: &ActivityGraphs) -> Self {
        let edges = |d: &Dag| {
            d.edges()
                .map(|(a, b)| (d.id(a).to_string(), d.id(b).to_string()))
                .collect()
        };
        let g_o = graphs.observational();
        Self {
            format_version: BUNDLE_FORMAT_VERSION,
            activity: graphs.activity.clone(),
            start: g_o.id(g_o.start()).into(),
            end: g_o.id(g_o.end()).into(),
            nodes: graphs
                .nodes()
                .iter()
                .map(|n| BundleNode {
                    id: n.id.clone(),
                    label: n.label.clone(),
                    instances: n.instances.clone(),
                })
                .collect(),
            observational_edges: edges(g_o),
            causal_edges: edges(graphs.causal()),
        }
    }
}

/// Reads a bundle and builds its graphs, reporting invariant violations
/// without failing on them.
pub fn load_bundle_unchecked(path: &Path, options: LoadOptions) -> Result<(ActivityGraphs, ValidationReport), IoError> {
    let bundle = ActivityBundle::parse(path, &read(path)?, options)?;
    let graphs = bundle.to_graphs().map_err(|error| IoError::Graph {
        path: path.into(),
        error,
    })?;
    let report = graphs.validate();
    Ok((graphs, report))
}

/// Reads a bundle whose graphs satisfy every activity invariant.
pub fn load_bundle(path: &Path, options: LoadOptions) -> Result<ActivityGraphs, IoError> {
    let (graphs, report) = load_bundle_unchecked(path, options)?;
    if !report.is_ok() {
        return Err(IoError::Invalid {
            path: path.into(),
            report,
        });
    }
    Ok(graphs)
}

pub fn save_bundle(path: &Path, graphs: &ActivityGraphs) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(&ActivityBundle::from_graphs(graphs)).expect("bundle serializes");
    text.push('\n');
    fs::write(path, text).map_err(|error| IoError::Io {
        path: path.into(),
        error,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsdFile {
    pub activity: String,
    pub esds: Vec<Vec<String>>,
}

pub fn load_esd_corpus(path: &Path, graphs: &ActivityGraphs) -> Result<EsdCorpus, IoError> {
    let file: EsdFile = serde_json::from_str(&read(path)?).map_err(|e| json_error(path, e))?;
    if file.activity != graphs.activity {
        return Err(IoError::ActivityMismatch {
            path: path.into(),
            expected: graphs.activity.clone(),
            found: file.activity,
        });
    }
    EsdCorpus::new(file.activity, graphs.observational(), &file.esds).map_err(|error| IoError::Esd {
        path: path.into(),
        error,
    })
}

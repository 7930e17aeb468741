//! Success-rate evaluation of triplet datasets, either by direct MCQA
//! prompting or by comparing causal strengths of the two choices.

mod delta;
mod report;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetRecord, NodeIds};
use crate::estimand::DeltaEstimate;
use crate::prompt::{render_mcqa_causal, McqaTemplate, PromptMeta};
use crate::scorer::{mcqa_predict, Scorer};
use crate::triplets::{Label, Question, Variant};

pub use delta::{BackdoorDeltas, DeltaSource, GraphDeltas, OracleDeltas, OriginalDeltas, Precedence, TemporalDeltas};
pub use report::{parse_report, render_report, summarize, ReportFormat, SuccessReport};

pub const CHECKPOINT_EVERY: usize = 500;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no graphs loaded for activity {0:?}")]
    UnknownActivity(String),
    #[error("{activity}: {message}")]
    Activity { activity: String, message: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("nothing to report")]
    Empty,
    #[error("{0}")]
    Format(String),
}

impl EvalError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// Outcome of one triplet. Failed triplets carry `error`, have no
/// prediction, and are left out of success rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub index: usize,
    pub activity: String,
    pub variant: Variant,
    pub scheme: String,
    pub node_ids: NodeIds,
    pub question: Question,
    pub label: Label,
    pub predicted: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<[f64; 2]>,
    pub tie: bool,
    pub correct: bool,
    #[serde(default)]
    pub empty_strata: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    fn base(index: usize, rec: &DatasetRecord, scheme: &str) -> Self {
        Self {
            index,
            activity: rec.activity.clone(),
            variant: rec.variant,
            scheme: scheme.into(),
            node_ids: rec.node_ids.clone(),
            question: rec.question,
            label: rec.label,
            predicted: None,
            deltas: None,
            tie: false,
            correct: false,
            empty_strata: 0,
            error: None,
        }
    }

    fn predict(mut self, predicted: Label, tie: bool) -> Self {
        self.predicted = Some(predicted);
        self.tie = tie;
        self.correct = predicted == self.label;
        self
    }

    fn failed(mut self, error: impl std::fmt::Display) -> Self {
        self.error = Some(format!("triplet {}: {error}", self.index));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalOptions {
    /// Row name for reports.
    pub scheme: String,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub records: Vec<EvalRecord>,
}

impl EvalRun {
    pub fn failures(&self) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter(|r| r.error.is_some())
    }

    pub fn reports(&self) -> Result<Vec<SuccessReport>, EvalError> {
        summarize(&self.records)
    }
}

/// Per-activity scorers for datasets that mix activities; any single
/// [`Scorer`] serves every activity.
pub trait ScorerSet: Sync {
    fn for_activity(&self, activity: &str) -> Result<&dyn Scorer, EvalError>;
}

impl<S: Scorer> ScorerSet for S {
    fn for_activity(&self, _: &str) -> Result<&dyn Scorer, EvalError> {
        Ok(self)
    }
}

#[derive(Default)]
pub struct PerActivity(pub std::collections::BTreeMap<String, Box<dyn Scorer>>);

impl ScorerSet for PerActivity {
    fn for_activity(&self, activity: &str) -> Result<&dyn Scorer, EvalError> {
        self.0
            .get(activity)
            .map(|s| s.as_ref())
            .ok_or_else(|| EvalError::UnknownActivity(activity.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct McqaConfig {
    pub template: McqaTemplate,
    pub examples: Option<String>,
}

/// Direct multiple-choice evaluation: each triplet becomes one prompt and
/// the higher-scored option is the prediction.
pub fn evaluate_mcqa(
    dataset: &Dataset,
    scorers: &dyn ScorerSet,
    config: &McqaConfig,
    options: &EvalOptions,
) -> Result<EvalRun, EvalError> {
    run(dataset, options, |i, rec| {
        let out = EvalRecord::base(i, rec, &options.scheme);
        let result = (|| -> Result<_, String> {
            let scorer = scorers.for_activity(&rec.activity).map_err(|e| e.to_string())?;
            let prompt = render_mcqa_causal(
                config.template,
                &rec.activity,
                &rec.premise,
                rec.choice_texts(),
                rec.question,
                config.examples.as_deref(),
            )
            .map_err(|e| e.to_string())?
            .with_meta(PromptMeta::Mcqa {
                premise: rec.node_ids.p.clone(),
                choices: [rec.node_ids.c1.clone(), rec.node_ids.c2.clone()],
            });
            mcqa_predict(scorer, &prompt).map_err(|e| e.to_string())
        })();
        match result {
            Ok(p) => out.predict(p.choice, p.tie),
            Err(e) => out.failed(e),
        }
    })
}

/// Ordered pair handed to `Δ` for a premise and a choice.
pub fn delta_pair<'r>(question: Question, premise: &'r str, choice: &'r str) -> (&'r str, &'r str) {
    match question {
        Question::Cause => (choice, premise),
        Question::Effect => (premise, choice),
    }
}

type MemoKey = (String, String, String);

/// Evaluation by causal strength: the prediction is the choice whose pair
/// with the premise has the larger `Δ`, ties going to choice 1. For schemes
/// that see the observational graph, a pair whose cause is not ranked
/// before its effect gets `Δ = 0` without consulting the source.
/// Δ and empty-strata count, or the failure message.
type DeltaResult = Result<(f64, usize), String>;

pub fn evaluate_delta(
    dataset: &Dataset,
    source: &dyn DeltaSource,
    precedence: &Precedence,
    options: &EvalOptions,
) -> Result<EvalRun, EvalError> {
    let memo: Mutex<HashMap<MemoKey, DeltaResult>> = Mutex::default();
    let uses_graph = source.scheme().uses_graph();
    let delta = |activity: &str, e1: &str, e2: &str| -> DeltaResult {
        if uses_graph && precedence.precedes(activity, e1, e2) == Some(false) {
            return Ok((0.0, 0));
        }
        let key = (activity.to_string(), e1.to_string(), e2.to_string());
        if let Some(hit) = memo.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return hit.clone();
        }
        let value = source
            .delta(activity, e1, e2)
            .map(|d: DeltaEstimate| (d.value, d.empty_strata))
            .map_err(|e| e.to_string());
        memo.lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, value.clone());
        value
    };
    run(dataset, options, |i, rec| {
        let mut out = EvalRecord::base(i, rec, &options.scheme);
        let [c1, c2] = rec.choice_ids();
        let both = [c1, c2]
            .map(|c| delta_pair(rec.question, &rec.node_ids.p, c))
            .map(|(e1, e2)| delta(&rec.activity, e1, e2));
        match both {
            [Ok((d1, s1)), Ok((d2, s2))] => {
                out.deltas = Some([d1, d2]);
                out.empty_strata = s1 + s2;
                let choice = if d2 > d1 { Label::Two } else { Label::One };
                out.predict(choice, d1 == d2)
            }
            [Err(e), _] | [_, Err(e)] => out.failed(e),
        }
    })
}

fn run<F>(dataset: &Dataset, options: &EvalOptions, eval_one: F) -> Result<EvalRun, EvalError>
where
    F: Fn(usize, &DatasetRecord) -> EvalRecord + Sync,
{
    if dataset.records.is_empty() {
        return Err(EvalError::Empty);
    }
    let key = CheckpointKey {
        digest: dataset.manifest.digest.clone(),
        scheme: options.scheme.clone(),
    };
    let mut done = match &options.checkpoint {
        Some(path) if path.exists() => load_checkpoint(path, &key)?,
        _ => Vec::new(),
    };
    let total = dataset.records.len();
    if done.len() > total || done.iter().enumerate().any(|(i, r)| r.index != i) {
        let path = options.checkpoint.clone().unwrap_or_default();
        return Err(EvalError::Checkpoint {
            path,
            message: "checkpoint records do not form a prefix of this dataset".into(),
        });
    }
    while done.len() < total {
        let from = done.len();
        let to = (from + CHECKPOINT_EVERY).min(total);
        let chunk: Vec<EvalRecord> = (from..to)
            .into_par_iter()
            .map(|i| eval_one(i, &dataset.records[i]))
            .collect();
        done.extend(chunk);
        if let Some(path) = &options.checkpoint {
            save_checkpoint(path, &key, &done)?;
        }
        log::debug!("evaluated {}/{total}", done.len());
    }
    Ok(EvalRun { records: done })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointKey {
    digest: String,
    scheme: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    checkpoint: CheckpointKey,
}

fn save_checkpoint(path: &Path, key: &CheckpointKey, records: &[EvalRecord]) -> Result<(), EvalError> {
    let tmp = path.with_extension("partial");
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        serde_json::to_writer(
            &mut w,
            &CheckpointHeader {
                checkpoint: key.clone(),
            },
        )?;
        w.write_all(b"\n")?;
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        drop(w);
        fs::rename(&tmp, path)
    };
    write().map_err(|e| EvalError::io(path, e))
}

fn load_checkpoint(path: &Path, key: &CheckpointKey) -> Result<Vec<EvalRecord>, EvalError> {
    let file = fs::File::open(path).map_err(|e| EvalError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| EvalError::io(path, e))?
        .unwrap_or_default();
    let header: CheckpointHeader = serde_json::from_str(&header).map_err(|e| EvalError::Parse {
        path: path.into(),
        line: 1,
        message: e.to_string(),
    })?;
    if header.checkpoint != *key {
        return Err(EvalError::Checkpoint {
            path: path.into(),
            message: format!(
                "written for dataset {} / scheme {:?}, not {} / {:?}",
                header.checkpoint.digest, header.checkpoint.scheme, key.digest, key.scheme
            ),
        });
    }
    parse_record_lines(path, lines, 2)
}

fn parse_record_lines(
    path: &Path,
    lines: impl Iterator<Item = std::io::Result<String>>,
    first_line: usize,
) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| EvalError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.into(),
            line: n + first_line,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes one JSON record per line.
pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<(), EvalError> {
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    write().map_err(|e| EvalError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let file = fs::File::open(path).map_err(|e| EvalError::io(path, e))?;
    parse_record_lines(path, BufReader::new(file).lines(), 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetManifest;
    use crate::triplets::Level;

    struct Const(f64);

    impl DeltaSource for Const {
        fn scheme(&self) -> crate::estimand::EstimateScheme {
            crate::estimand::EstimateScheme::Temporal
        }

        fn delta(&self, _: &str, e1: &str, e2: &str) -> Result<DeltaEstimate, EvalError> {
            if e1 == "bad" || e2 == "bad" {
                return Err(EvalError::Format("boom".into()));
            }
            Ok(DeltaEstimate::new(self.scheme(), e1, e2, self.0, 0.0))
        }
    }

    fn record(p: &str, c1: &str, c2: &str, label: Label) -> DatasetRecord {
        DatasetRecord {
            premise: p.into(),
            choice1: c1.into(),
            choice2: c2.into(),
            question: Question::Effect,
            label,
            activity: "act".into(),
            node_ids: NodeIds {
                p: p.into(),
                c1: c1.into(),
                c2: c2.into(),
            },
            variant: Variant::Causal,
            level: Level::Node,
        }
    }

    fn dataset(records: Vec<DatasetRecord>) -> Dataset {
        let manifest = DatasetManifest {
            format_version: 1,
            activity: "act".into(),
            variant: Variant::Causal,
            level: Level::Node,
            count: records.len() as u64,
            seed: None,
            digest: crate::dataset::digest_records(&records),
            sampled_from: None,
        };
        Dataset { manifest, records }
    }

    #[test]
    fn constant_delta_ties_everywhere() {
        let ds = dataset(vec![
            record("a", "b", "c", Label::One),
            record("a", "c", "b", Label::Two),
        ]);
        let run = evaluate_delta(&ds, &Const(0.3), &Precedence::default(), &EvalOptions::default()).unwrap();
        let r = &run.reports().unwrap()[0];
        assert_eq!((r.n, r.tie_count), (2, 2));
        assert_eq!(r.success_rate, 50.0);
    }

    #[test]
    fn failures_are_excluded_and_counted() {
        let ds = dataset(vec![
            record("a", "b", "c", Label::One),
            record("a", "bad", "c", Label::One),
        ]);
        let run = evaluate_delta(&ds, &Const(0.3), &Precedence::default(), &EvalOptions::default()).unwrap();
        assert_eq!(run.failures().count(), 1);
        let r = &run.reports().unwrap()[0];
        assert_eq!((r.n, r.excluded), (1, 1));
        assert!(run.records[1].error.as_deref().unwrap().starts_with("triplet 1:"));
    }

    #[test]
    fn checkpoint_resumes_and_rejects_other_runs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.jsonl");
        let ds = dataset(
            (0..1200)
                .map(|i| record("a", &format!("b{i}"), "c", Label::One))
                .collect(),
        );
        let opts = EvalOptions {
            scheme: "x".into(),
            checkpoint: Some(path.clone()),
        };
        let full = evaluate_delta(&ds, &Const(0.1), &Precedence::default(), &opts).unwrap();
        let again = evaluate_delta(&ds, &Const(0.9), &Precedence::default(), &opts).unwrap();
        assert_eq!(full, again);
        let other = EvalOptions {
            scheme: "y".into(),
            ..opts
        };
        assert!(matches!(
            evaluate_delta(&ds, &Const(0.1), &Precedence::default(), &other),
            Err(EvalError::Checkpoint { .. })
        ));
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let ds = dataset(vec![
            record("a", "b", "c", Label::One),
            record("a", "bad", "c", Label::Two),
        ]);
        let run = evaluate_delta(&ds, &Const(0.3), &Precedence::default(), &EvalOptions::default()).unwrap();
        write_records(&path, &run.records).unwrap();
        assert_eq!(read_records(&path).unwrap(), run.records);
    }
}

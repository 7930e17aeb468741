//! Dataset records, manifests, seeded slot balancing and frozen sampling.
//!
//! A dataset file is newline-delimited JSON: one `{"manifest": ...}` header
//! line followed by one record per line. The digest is the SHA-256 of the
//! record lines (each including its trailing `\n`), so it is independent of
//! the header.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::ActivityGraphs;
use crate::triplets::{expand_instances, CausalQueryTriplet, ForgeError, Label, Level, Question, Variant};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("requested {requested} records from a dataset of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("manifest says {expected} but content has {actual}")]
    ManifestMismatch { expected: String, actual: String },
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Forge(#[from] ForgeError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeIds {
    pub p: String,
    pub c1: String,
    pub c2: String,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub premise: String,
    pub choice1: String,
    pub choice2: String,
    pub question: Question,
    pub label: Label,
    pub activity: String,
    pub node_ids: NodeIds,
    pub variant: Variant,
    pub level: Level,
}

impl DatasetRecord {
    pub fn swap_choices(&mut self) {
        std::mem::swap(&mut self.choice1, &mut self.choice2);
        std::mem::swap(&mut self.node_ids.c1, &mut self.node_ids.c2);
        self.label = self.label.other();
    }

    pub fn choice_ids(&self) -> [&str; 2] {
        [&self.node_ids.c1, &self.node_ids.c2]
    }

    pub fn choice_texts(&self) -> [&str; 2] {
        [&self.choice1, &self.choice2]
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("record serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub activity: String,
    pub variant: Variant,
    pub level: Level,
    pub count: u64,
    pub seed: Option<u64>,
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled_from: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    manifest: DatasetManifest,
}

/// Incremental content digest over record lines.
#[derive(Default, Clone)]
pub struct DigestBuilder {
    hasher: Sha256,
    count: u64,
}

impl DigestBuilder {
    pub fn push(&mut self, record: &DatasetRecord) {
        self.push_line(&record.to_line());
    }

    fn push_line(&mut self, line: &str) {
        self.hasher.update(line.as_bytes());
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(self) -> String {
        hex::encode(self.hasher.finalize())
    }
}

pub fn digest_records<'a>(records: impl IntoIterator<Item = &'a DatasetRecord>) -> String {
    let mut d = DigestBuilder::default();
    records.into_iter().for_each(|r| d.push(r));
    d.finish()
}

/// Places the correct answer in slot 1 for exactly one record of each
/// consecutive pair, the choice of which being a seeded coin flip. Label
/// marginals therefore differ from 50/50 by at most one record.
pub struct SlotBalancer {
    rng: ChaCha8Rng,
    position: u64,
    pair_first_label: Label,
}

impl SlotBalancer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            position: 0,
            pair_first_label: Label::One,
        }
    }

    fn next_label(&mut self) -> Label {
        let label = if self.position.is_multiple_of(2) {
            self.pair_first_label = if self.rng.gen::<bool>() { Label::One } else { Label::Two };
            self.pair_first_label
        } else {
            self.pair_first_label.other()
        };
        self.position += 1;
        label
    }

    pub fn apply(&mut self, record: &mut DatasetRecord) {
        if self.next_label() != record.label {
            record.swap_choices();
        }
    }
}

/// Node-level records with node labels as text.
pub fn node_records<'a>(
    triplets: &'a [CausalQueryTriplet],
    graphs: &'a ActivityGraphs,
    variant: Variant,
) -> impl Iterator<Item = Result<DatasetRecord, DatasetError>> + 'a {
    triplets.iter().map(move |t| {
        let text = |id: &str| -> Result<String, DatasetError> {
            Ok(graphs.node_by_id(id).map_err(ForgeError::from)?.label.clone())
        };
        Ok(DatasetRecord {
            premise: text(&t.premise)?,
            choice1: text(&t.choice1)?,
            choice2: text(&t.choice2)?,
            question: t.question,
            label: t.label,
            activity: t.activity.clone(),
            node_ids: NodeIds {
                p: t.premise.clone(),
                c1: t.choice1.clone(),
                c2: t.choice2.clone(),
            },
            variant,
            level: Level::Node,
        })
    })
}

/// Instance-level records: every text combination of every query.
pub fn instance_records<'a>(
    triplets: &'a [CausalQueryTriplet],
    graphs: &'a ActivityGraphs,
    variant: Variant,
) -> Result<impl Iterator<Item = DatasetRecord> + 'a, DatasetError> {
    Ok(expand_instances(triplets, graphs)?.map(move |it| DatasetRecord {
        premise: it.premise_text.to_string(),
        choice1: it.choice1_text.to_string(),
        choice2: it.choice2_text.to_string(),
        question: it.triplet.question,
        label: it.triplet.label,
        activity: it.triplet.activity.clone(),
        node_ids: NodeIds {
            p: it.triplet.premise.clone(),
            c1: it.triplet.choice1.clone(),
            c2: it.triplet.choice2.clone(),
        },
        variant,
        level: Level::Instance,
    }))
}

/// An in-memory dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn from_records(
        activity: impl Into<String>,
        variant: Variant,
        level: Level,
        seed: Option<u64>,
        records: Vec<DatasetRecord>,
    ) -> Self {
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            activity: activity.into(),
            variant,
            level,
            count: records.len() as u64,
            seed,
            digest: digest_records(&records),
            sampled_from: None,
        };
        Self { manifest, records }
    }

    /// Builds the balanced node-level dataset for a set of queries.
    pub fn build_node_level(
        triplets: &[CausalQueryTriplet],
        graphs: &ActivityGraphs,
        variant: Variant,
        seed: u64,
    ) -> Result<Self, DatasetError> {
        let mut balancer = SlotBalancer::new(seed);
        let records = node_records(triplets, graphs, variant)
            .map(|r| {
                r.map(|mut r| {
                    balancer.apply(&mut r);
                    r
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_records(
            graphs.activity.clone(),
            variant,
            Level::Node,
            Some(seed),
            records,
        ))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        write_header(&mut w, &self.manifest).map_err(io_err(path))?;
        for r in &self.records {
            w.write_all(r.to_line().as_bytes()).map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }

    /// Reads and verifies a dataset file (count and digest must match the
    /// header).
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let mut reader = DatasetReader::open(path)?;
        let manifest = reader.manifest().clone();
        let mut records = Vec::with_capacity(manifest.count as usize);
        let mut digest = DigestBuilder::default();
        for r in reader.by_ref() {
            let r = r?;
            digest.push(&r);
            records.push(r);
        }
        verify(&manifest, digest)?;
        Ok(Self { manifest, records })
    }
}

fn verify(manifest: &DatasetManifest, digest: DigestBuilder) -> Result<(), DatasetError> {
    if digest.count() != manifest.count {
        return Err(DatasetError::ManifestMismatch {
            expected: format!("count {}", manifest.count),
            actual: format!("count {}", digest.count()),
        });
    }
    let actual = digest.finish();
    if actual != manifest.digest {
        return Err(DatasetError::ManifestMismatch {
            expected: format!("digest {}", manifest.digest),
            actual: format!("digest {actual}"),
        });
    }
    Ok(())
}

fn write_header(w: &mut impl Write, manifest: &DatasetManifest) -> io::Result<()> {
    let line = serde_json::to_string(&HeaderLine {
        manifest: manifest.clone(),
    })
    .expect("manifest serializes");
    writeln!(w, "{line}")
}

/// Streaming reader over a dataset file. Does not verify the digest.
pub struct DatasetReader {
    path: String,
    manifest: DatasetManifest,
    lines: io::Lines<BufReader<File>>,
    line_no: usize,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut lines = BufReader::new(file).lines();
        let p = path.display().to_string();
        let header = lines
            .next()
            .ok_or_else(|| DatasetError::Parse {
                path: p.clone(),
                line: 1,
                message: "missing manifest header".into(),
            })?
            .map_err(io_err(path))?;
        let header: HeaderLine = serde_json::from_str(&header).map_err(|e| DatasetError::Parse {
            path: p.clone(),
            line: 1,
            message: format!("bad manifest header: {e}"),
        })?;
        Ok(Self {
            path: p,
            manifest: header.manifest,
            lines,
            line_no: 1,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }
}

impl Iterator for DatasetReader {
    type Item = Result<DatasetRecord, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = self.lines.next()?;
        self.line_no += 1;
        Some(match line {
            Err(source) => Err(DatasetError::Io {
                path: self.path.clone(),
                source,
            }),
            Ok(line) => serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                path: self.path.clone(),
                line: self.line_no,
                message: e.to_string(),
            }),
        })
    }
}

/// Writes a dataset from a record stream that can be produced twice: the
/// first pass computes digest and count for the header, the second writes
/// the records. Keeps memory flat for instance-level datasets.
pub fn write_streaming<F, I>(
    path: &Path,
    mut manifest: DatasetManifest,
    mut make: F,
) -> Result<DatasetManifest, DatasetError>
where
    F: FnMut() -> Result<I, DatasetError>,
    I: Iterator<Item = DatasetRecord>,
{
    let mut digest = DigestBuilder::default();
    for r in make()? {
        digest.push(&r);
    }
    manifest.count = digest.count();
    manifest.digest = digest.finish();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_header(&mut w, &manifest).map_err(io_err(path))?;
    for r in make()? {
        w.write_all(r.to_line().as_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(manifest)
}

/// Writes the balanced instance-level dataset for a set of queries without
/// materializing it.
pub fn write_instance_level(
    path: &Path,
    triplets: &[CausalQueryTriplet],
    graphs: &ActivityGraphs,
    variant: Variant,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        activity: graphs.activity.clone(),
        variant,
        level: Level::Instance,
        count: 0,
        seed: Some(seed),
        digest: String::new(),
        sampled_from: None,
    };
    write_streaming(path, manifest, || {
        let mut balancer = SlotBalancer::new(seed);
        Ok(instance_records(triplets, graphs, variant)?.map(move |mut r| {
            balancer.apply(&mut r);
            r
        }))
    })
}

/// Sorted record indices of a frozen sample, determined by the source
/// digest, the sample size and the seed.
pub fn sample_indices(digest: &str, available: usize, n: usize, seed: u64) -> Result<Vec<usize>, DatasetError> {
    if n > available {
        return Err(DatasetError::SampleTooLarge {
            requested: n,
            available,
        });
    }
    let mut h = Sha256::new();
    h.update(digest.as_bytes());
    h.update(seed.to_le_bytes());
    h.update((n as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let mut picked = index::sample(&mut rng, available, n).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

fn sample_manifest(source: &DatasetManifest, n: usize, seed: u64, digest: String) -> DatasetManifest {
    DatasetManifest {
        format_version: FORMAT_VERSION,
        activity: source.activity.clone(),
        variant: source.variant,
        level: source.level,
        count: n as u64,
        seed: Some(seed),
        digest,
        sampled_from: Some(source.digest.clone()),
    }
}

/// Uniform sample without replacement; records keep their source order.
pub fn sample_frozen(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    let picked = sample_indices(&dataset.manifest.digest, dataset.len(), n, seed)?;
    let records: Vec<DatasetRecord> = picked.iter().map(|&i| dataset.records[i].clone()).collect();
    let digest = digest_records(&records);
    Ok(Dataset {
        manifest: sample_manifest(&dataset.manifest, n, seed, digest),
        records,
    })
}

/// File-to-file [`sample_frozen`] that never holds the source in memory.
/// The source digest is verified on the first pass.
pub fn sample_file(input: &Path, output: &Path, n: usize, seed: u64) -> Result<DatasetManifest, DatasetError> {
    let mut reader = DatasetReader::open(input)?;
    let source = reader.manifest().clone();
    let mut digest = DigestBuilder::default();
    for r in reader.by_ref() {
        digest.push(&r?);
    }
    verify(&source, digest)?;
    let picked: HashSet<usize> = sample_indices(&source.digest, source.count as usize, n, seed)?
        .into_iter()
        .collect();
    let manifest = sample_manifest(&source, n, seed, String::new());
    write_streaming(output, manifest, || {
        let reader = DatasetReader::open(input)?;
        let picked = &picked;
        Ok(reader
            .enumerate()
            .filter(move |(i, _)| picked.contains(i))
            .filter_map(|(_, r)| r.ok()))
    })
}

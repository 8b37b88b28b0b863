//! Labeled corpora: label propagation, default actionables, class
//! balancing, site-level splits and the line-delimited corpus format.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    feature_names, DomSnapshot, ElementAttributes, ElementId, EventSet, EventType, FeatureValue,
    FeatureVector, LabeledElement, SnapshotError,
};

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no positive rows for `{0}`")]
    EmptyClass(EventType),
    #[error("corpus has {0} site(s); at least 2 are needed to split")]
    CannotSplit(usize),
    #[error("corpus is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub rows: Vec<LabeledElement>,
    pub sites: BTreeSet<String>,
    pub provenance: String,
}

impl Corpus {
    pub fn new(provenance: impl Into<String>) -> Self {
        Corpus {
            provenance: provenance.into(),
            ..Corpus::default()
        }
    }

    /// Appends every element of a labeled snapshot under `site_id`.
    pub fn add_snapshot(&mut self, site_id: &str, snapshot: &DomSnapshot) {
        self.sites.insert(site_id.to_string());
        self.rows.extend(snapshot.elements.iter().map(|e| LabeledElement {
            site_id: site_id.to_string(),
            snapshot_id: snapshot.snapshot_id.clone(),
            ..e.clone()
        }));
    }

    pub fn positives(&self, event: EventType) -> usize {
        self.rows.iter().filter(|r| r.is_positive(event)).count()
    }

    /// Keeps rows from the given sites only.
    pub fn restrict_to(&self, sites: &BTreeSet<String>) -> Corpus {
        Corpus {
            rows: self
                .rows
                .iter()
                .filter(|r| sites.contains(&r.site_id))
                .cloned()
                .collect(),
            sites: sites.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitCorpus {
    pub train: Corpus,
    pub test: Corpus,
}

/// Elements clickable without any script: anchors with an href, buttons,
/// and inputs of type button, submit or image.
pub fn is_default_actionable(tag: &str, attributes: &ElementAttributes) -> bool {
    match tag.to_ascii_lowercase().as_str() {
        "a" => attributes.href.is_some(),
        "button" => true,
        "input" => attributes.input_type.as_deref().is_some_and(|t| {
            matches!(
                t.to_ascii_lowercase().as_str(),
                "button" | "submit" | "image"
            )
        }),
        _ => false,
    }
}

pub fn mark_default_actionables(mut snapshot: DomSnapshot) -> DomSnapshot {
    for e in &mut snapshot.elements {
        e.is_default_actionable = is_default_actionable(&e.tag_name, &e.attributes);
    }
    snapshot
}

/// Adds every directly attached event to the element and all of its
/// descendants, and click to default actionables. Labels are only added,
/// never removed.
pub fn propagate_labels(mut snapshot: DomSnapshot) -> Result<DomSnapshot, SnapshotError> {
    snapshot.validate()?;
    let mut stack: Vec<(ElementId, EventSet)> = vec![(snapshot.root, EventSet::new())];
    while let Some((node, mut inherited)) = stack.pop() {
        let e = &mut snapshot.elements[node];
        inherited.extend(e.direct_listeners.iter().copied());
        e.effective_labels.extend(inherited.iter().copied());
        if e.is_default_actionable {
            e.effective_labels.insert(EventType::Click);
        }
        for &c in &snapshot.children[node] {
            stack.push((c, inherited.clone()));
        }
    }
    Ok(snapshot)
}

/// Marks default actionables, then propagates labels.
pub fn label_snapshot(snapshot: DomSnapshot) -> Result<DomSnapshot, SnapshotError> {
    propagate_labels(mark_default_actionables(snapshot))
}

/// Under-samples negatives for `event` until both classes have the same
/// size. Positives are kept; surviving rows keep their original order.
pub fn balance(corpus: &Corpus, event: EventType, seed: u64) -> Result<Corpus, DatasetError> {
    if corpus.rows.is_empty() {
        return Err(DatasetError::Empty);
    }
    let (pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..corpus.rows.len()).partition(|&i| corpus.rows[i].is_positive(event));
    if pos.is_empty() {
        return Err(DatasetError::EmptyClass(event));
    }
    if neg.len() > pos.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        neg.shuffle(&mut rng);
        neg.truncate(pos.len());
    }
    let mut keep: Vec<usize> = pos.into_iter().chain(neg).collect();
    keep.sort_unstable();
    Ok(Corpus {
        rows: keep.into_iter().map(|i| corpus.rows[i].clone()).collect(),
        sites: corpus.sites.clone(),
        provenance: corpus.provenance.clone(),
    })
}

/// Number of test sites: the fraction rounded up, at least one, and never
/// all of them.
pub fn test_site_count(sites: usize, test_fraction: f64) -> usize {
    let raw = (sites as f64 * test_fraction - 1e-9).ceil() as usize;
    raw.clamp(1, sites.saturating_sub(1))
}

/// Splits by site so that no site contributes to both sides.
pub fn split_by_site(
    corpus: &Corpus,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitCorpus, DatasetError> {
    if corpus.sites.len() < 2 {
        return Err(DatasetError::CannotSplit(corpus.sites.len()));
    }
    let mut sites: Vec<String> = corpus.sites.iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sites.shuffle(&mut rng);
    let n_test = test_site_count(sites.len(), test_fraction);
    let test_sites: BTreeSet<String> = sites[..n_test].iter().cloned().collect();
    let train_sites: BTreeSet<String> = sites[n_test..].iter().cloned().collect();
    Ok(SplitCorpus {
        train: corpus.restrict_to(&train_sites),
        test: corpus.restrict_to(&test_sites),
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    feature_names: Vec<String>,
    provenance: String,
    sites: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    site_id: String,
    snapshot_id: String,
    element_id: ElementId,
    tag_name: String,
    attributes: ElementAttributes,
    features: Vec<FeatureValue>,
    predictor_sources: Vec<String>,
    direct_listeners: EventSet,
    effective_labels: EventSet,
    is_default_actionable: bool,
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> Result<(), DatasetError> {
    let header = Header {
        schema_version: CORPUS_SCHEMA_VERSION,
        feature_names: feature_names(),
        provenance: corpus.provenance.clone(),
        sites: corpus.sites.iter().cloned().collect(),
    };
    let to_io = |e: serde_json::Error| DatasetError::Io(io::Error::other(e));
    serde_json::to_writer(&mut out, &header).map_err(to_io)?;
    out.write_all(b"\n")?;
    for row in &corpus.rows {
        let record = Record {
            site_id: row.site_id.clone(),
            snapshot_id: row.snapshot_id.clone(),
            element_id: row.element_id,
            tag_name: row.tag_name.clone(),
            attributes: row.attributes.clone(),
            features: row.features.values(),
            predictor_sources: row.features.predictor_sources.clone(),
            direct_listeners: row.direct_listeners.clone(),
            effective_labels: row.effective_labels.clone(),
            is_default_actionable: row.is_default_actionable,
        };
        serde_json::to_writer(&mut out, &record).map_err(to_io)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_corpus<R: BufRead>(input: R) -> Result<Corpus, DatasetError> {
    let mut lines = input.lines();
    let parse_err = |line: usize, message: String| DatasetError::Parse { line, message };
    let header_line = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))??;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| parse_err(1, e.to_string()))?;
    if header.schema_version != CORPUS_SCHEMA_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported schema version {}", header.schema_version),
        ));
    }
    if header.feature_names != feature_names() {
        return Err(parse_err(1, "feature names do not match the 68-feature schema".into()));
    }
    let sites: BTreeSet<String> = header.sites.into_iter().collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        let record: Record =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if !sites.contains(&record.site_id) {
            return Err(parse_err(
                lineno,
                format!("site `{}` is not declared in the header", record.site_id),
            ));
        }
        let features = FeatureVector::from_values(&record.features, record.predictor_sources)
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        rows.push(LabeledElement {
            element_id: record.element_id,
            snapshot_id: record.snapshot_id,
            site_id: record.site_id,
            tag_name: record.tag_name,
            attributes: record.attributes,
            features,
            direct_listeners: record.direct_listeners,
            effective_labels: record.effective_labels,
            is_default_actionable: record.is_default_actionable,
        });
    }
    Ok(Corpus {
        rows,
        sites,
        provenance: header.provenance,
    })
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_corpus(corpus, BufWriter::new(File::create(path)?))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, DatasetError> {
    read_corpus(BufReader::new(File::open(path)?))
}

//! Per-event actionable classifiers: boosted gain-ratio decision trees.
//!
//! One binary model is trained per [`EventType`]. Each boosting stage grows a
//! tree on reweighted rows; rows the stage gets wrong gain weight for the
//! next one. Prediction is the weight-normalized vote of the stages.

mod metrics;
mod tree;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{ClassMetrics, Confusion, EvalReport};
pub use tree::{DecisionTree, Node, NodeId, SplitPredicate};

use crate::dataset::Corpus;
use crate::model::{
    feature_kind, feature_names, EventSet, EventType, FeatureKind, FeatureValue, FeatureVector,
    FEATURE_COUNT,
};
use tree::{GrowParams, TrainingSet, TreeGrower};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training rows for `{0}` contain a single class")]
    EmptyClass(EventType),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot load model: {0}")]
    Load(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub boosting_rounds: usize,
    pub min_leaf_size: usize,
    pub max_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            boosting_rounds: 10,
            min_leaf_size: 5,
            max_depth: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub weight: f64,
    pub tree: DecisionTree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedTreeModel {
    pub event: EventType,
    pub feature_schema: Vec<String>,
    pub config: TrainConfig,
    pub seed: u64,
    pub stages: Vec<Stage>,
}

/// Trains the model for `event` on every row of `corpus`. Balance the
/// corpus first if the classes are skewed.
pub fn train(
    corpus: &Corpus,
    event: EventType,
    config: &TrainConfig,
    seed: u64,
) -> Result<BoostedTreeModel, ClassifierError> {
    let rows: Vec<Vec<FeatureValue>> = corpus.rows.iter().map(|r| r.features.values()).collect();
    let labels = corpus.rows.iter().map(|r| r.is_positive(event)).collect();
    train_rows(&rows, labels, &feature_names(), event, config, seed)
}

/// Trains on flat rows laid out in `schema` order.
pub fn train_rows(
    rows: &[Vec<FeatureValue>],
    labels: Vec<bool>,
    schema: &[String],
    event: EventType,
    config: &TrainConfig,
    seed: u64,
) -> Result<BoostedTreeModel, ClassifierError> {
    if schema != feature_names().as_slice() {
        return Err(ClassifierError::Schema(format!(
            "expected the {FEATURE_COUNT}-feature schema, got {} names",
            schema.len()
        )));
    }
    if config.boosting_rounds == 0 || config.max_depth == 0 {
        return Err(ClassifierError::Config(
            "boosting_rounds and max_depth must be at least 1".into(),
        ));
    }
    if rows.len() != labels.len() {
        return Err(ClassifierError::Schema("rows and labels differ in length".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        check_row(row).map_err(|e| ClassifierError::Schema(format!("row {i}: {e}")))?;
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(ClassifierError::EmptyClass(event));
    }

    let kinds: Vec<FeatureKind> = (0..FEATURE_COUNT).map(feature_kind).collect();
    let data = TrainingSet::new(rows, labels, &kinds);
    let n = data.len();
    let params = GrowParams {
        min_leaf_size: config.min_leaf_size,
        max_depth: config.max_depth,
    };
    // The seed only decides which of several equally good splits is taken.
    let mut feature_order: Vec<usize> = (0..FEATURE_COUNT).collect();
    feature_order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut weights = vec![1.0 / n as f64; n];
    let mut stages: Vec<Stage> = Vec::new();
    for round in 0..config.boosting_rounds {
        let tree = TreeGrower::new(&data, &weights, params, feature_order.clone()).grow();
        let missed: Vec<bool> = (0..n)
            .map(|i| tree.predict(&rows[i]) != data.label(i))
            .collect();
        let error: f64 = (0..n).filter(|&i| missed[i]).map(|i| weights[i]).sum();

        if round == 0 && (error <= 1e-12 || error >= 0.5) {
            stages.push(Stage { weight: 1.0, tree });
            break;
        }
        if error >= 0.5 {
            break;
        }
        if error <= 1e-12 {
            // A perfect stage outvotes everything before it.
            let weight = stages.iter().map(|s| s.weight).sum::<f64>() + 1.0;
            stages.push(Stage { weight, tree });
            break;
        }
        let alpha = ((1.0 - error) / error).ln();
        stages.push(Stage { weight: alpha, tree });
        let boost = alpha.exp();
        for i in 0..n {
            if missed[i] {
                weights[i] *= boost;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }

    Ok(BoostedTreeModel {
        event,
        feature_schema: feature_names(),
        config: *config,
        seed,
        stages,
    })
}

fn check_row(row: &[FeatureValue]) -> Result<(), String> {
    if row.len() != FEATURE_COUNT {
        return Err(format!("{} values instead of {FEATURE_COUNT}", row.len()));
    }
    for (f, v) in row.iter().enumerate() {
        match (feature_kind(f), v) {
            (FeatureKind::Numeric, FeatureValue::Num(x)) if x.is_finite() => {}
            (FeatureKind::Categorical, FeatureValue::Cat(_)) => {}
            _ => return Err(format!("feature {f} has the wrong kind or a non-finite value")),
        }
    }
    Ok(())
}

impl BoostedTreeModel {
    /// Weight-normalized share of stages voting positive.
    pub fn score_values(&self, row: &[FeatureValue]) -> f64 {
        let total: f64 = self.stages.iter().map(|s| s.weight).sum();
        if total <= 0.0 {
            return 0.0;
        }
        let positive: f64 = self
            .stages
            .iter()
            .filter(|s| s.tree.predict(row))
            .map(|s| s.weight)
            .sum();
        positive / total
    }

    /// `(label, score)`; a score of exactly 0.5 counts as actionable.
    pub fn predict(&self, fv: &FeatureVector) -> (bool, f64) {
        let score = self.score_values(&fv.values());
        (score >= 0.5, score)
    }

    pub fn predict_values(&self, row: &[FeatureValue]) -> (bool, f64) {
        let score = self.score_values(row);
        (score >= 0.5, score)
    }

    /// Share of training rows passing through a split on each feature,
    /// averaged over stages, as percentages in descending order.
    pub fn predictor_importance(&self) -> Vec<(String, f64)> {
        let mut usage = vec![0.0; self.feature_schema.len()];
        for stage in &self.stages {
            let nodes = &stage.tree.nodes;
            // A row is counted once per feature: only the topmost split on a
            // feature along each path contributes.
            let mut stack: Vec<(NodeId, Vec<usize>)> = vec![(0, Vec::new())];
            while let Some((id, used)) = stack.pop() {
                if let Node::Split {
                    feature,
                    left,
                    right,
                    share,
                    ..
                } = &nodes[id]
                {
                    let mut used = used;
                    if !used.contains(feature) {
                        usage[*feature] += share;
                        used.push(*feature);
                    }
                    stack.push((*left, used.clone()));
                    stack.push((*right, used));
                }
            }
        }
        let stages = self.stages.len().max(1) as f64;
        let mut out: Vec<(usize, f64)> = usage
            .into_iter()
            .map(|u| 100.0 * u / stages)
            .enumerate()
            .collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out.into_iter()
            .map(|(f, p)| (self.feature_schema[f].clone(), p))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ClassifierError::Load(e.to_string()))?;
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(ClassifierError::Load(format!(
                "unsupported schema version {}",
                file.schema_version
            )));
        }
        file.model.validate().map_err(ClassifierError::Load)?;
        Ok(file.model)
    }

    fn validate(&self) -> Result<(), String> {
        if self.feature_schema != feature_names() {
            return Err(format!(
                "feature schema has {} names; expected the fixed {FEATURE_COUNT}-feature schema",
                self.feature_schema.len()
            ));
        }
        if self.stages.is_empty() || self.stages.len() > self.config.boosting_rounds {
            return Err(format!(
                "{} stages for {} boosting rounds",
                self.stages.len(),
                self.config.boosting_rounds
            ));
        }
        for (s, stage) in self.stages.iter().enumerate() {
            if !(stage.weight.is_finite() && stage.weight >= 0.0) {
                return Err(format!("stage {s} has invalid weight {}", stage.weight));
            }
            let nodes = &stage.tree.nodes;
            if nodes.is_empty() {
                return Err(format!("stage {s} has an empty tree"));
            }
            for (id, node) in nodes.iter().enumerate() {
                match node {
                    Node::Split {
                        feature,
                        predicate,
                        left,
                        right,
                        ..
                    } => {
                        if *left <= id || *right <= id || *left >= nodes.len() || *right >= nodes.len() {
                            return Err(format!("stage {s} node {id} has invalid children"));
                        }
                        if *feature >= FEATURE_COUNT {
                            return Err(format!("stage {s} node {id} splits on unknown feature"));
                        }
                        let kind_ok = matches!(
                            (feature_kind(*feature), predicate),
                            (FeatureKind::Numeric, SplitPredicate::Le { .. })
                                | (FeatureKind::Categorical, SplitPredicate::In { .. })
                        );
                        if !kind_ok {
                            return Err(format!("stage {s} node {id} predicate does not fit its feature"));
                        }
                    }
                    Node::Leaf { probability, .. } => {
                        if !(0.0..=1.0).contains(probability) {
                            return Err(format!("stage {s} node {id} probability out of range"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    #[serde(flatten)]
    model: BoostedTreeModel,
}

pub fn save_model(model: &BoostedTreeModel, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
    fs::write(path, model.to_json())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BoostedTreeModel, ClassifierError> {
    BoostedTreeModel::from_json(&fs::read_to_string(path)?)
}

/// Confusion counts over every row of `corpus`; rows are not rebalanced.
pub fn evaluate(model: &BoostedTreeModel, corpus: &Corpus, event: EventType) -> EvalReport {
    EvalReport::from_predictions(
        corpus
            .rows
            .iter()
            .map(|r| (model.predict(&r.features).0, r.is_positive(event))),
    )
}

/// Something that says which events an element is expected to handle.
pub trait Predictor {
    fn predicts(&self, event: EventType, features: &FeatureVector) -> bool;

    fn predicted_events(&self, features: &FeatureVector) -> EventSet {
        EventType::ALL
            .into_iter()
            .filter(|&e| self.predicts(e, features))
            .collect()
    }

    fn supports(&self, event: EventType) -> bool;
}

/// Up to one trained model per event type.
#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    pub models: BTreeMap<EventType, BoostedTreeModel>,
}

impl ModelSet {
    pub fn insert(&mut self, model: BoostedTreeModel) {
        self.models.insert(model.event, model);
    }

    /// Loads `<event>.model.json` files present in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        let mut set = ModelSet::default();
        for event in EventType::ALL {
            let path = dir.as_ref().join(model_file_name(event));
            if path.exists() {
                set.insert(load_model(&path)?);
            }
        }
        Ok(set)
    }
}

pub fn model_file_name(event: EventType) -> String {
    format!("{event}.model.json")
}

impl Predictor for ModelSet {
    fn predicts(&self, event: EventType, features: &FeatureVector) -> bool {
        self.models
            .get(&event)
            .is_some_and(|m| m.predict(features).0)
    }

    fn supports(&self, event: EventType) -> bool {
        self.models.contains_key(&event)
    }
}

//! Binary decision trees grown by information-gain ratio over weighted rows.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{FeatureKind, FeatureValue};

pub type NodeId = usize;

/// Test applied at an internal node. Rows satisfying it go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SplitPredicate {
    /// Numeric feature: `value <= threshold`.
    Le { threshold: f64 },
    /// Categorical feature: `value ∈ values`. `others` holds the values
    /// seen at this node during training that went right; anything in
    /// neither set follows `unseen_left`.
    In {
        values: BTreeSet<String>,
        others: BTreeSet<String>,
        unseen_left: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        predicate: SplitPredicate,
        left: NodeId,
        right: NodeId,
        /// Training rows that reached this node.
        samples: usize,
        /// `samples` over the size of the training set.
        share: f64,
    },
    Leaf {
        positive: bool,
        /// Weighted share of positive training rows in the leaf.
        probability: f64,
        samples: usize,
        share: f64,
    },
}

impl Node {
    pub fn share(&self) -> f64 {
        match self {
            Node::Split { share, .. } | Node::Leaf { share, .. } => *share,
        }
    }
}

/// Nodes are stored flat; the root is node 0 and children always have a
/// larger index than their parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    fn leaf_for<'a>(&'a self, row: &[FeatureValue]) -> &'a Node {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split {
                    feature,
                    predicate,
                    left,
                    right,
                    ..
                } => {
                    let go_left = match (predicate, &row[*feature]) {
                        (SplitPredicate::Le { threshold }, FeatureValue::Num(v)) => v <= threshold,
                        (
                            SplitPredicate::In {
                                values,
                                others,
                                unseen_left,
                            },
                            FeatureValue::Cat(v),
                        ) => values.contains(v) || (*unseen_left && !others.contains(v)),
                        // Kinds are validated on load and on training input.
                        _ => false,
                    };
                    id = if go_left { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    pub fn predict(&self, row: &[FeatureValue]) -> bool {
        matches!(self.leaf_for(row), Node::Leaf { positive: true, .. })
    }

    pub fn probability(&self, row: &[FeatureValue]) -> f64 {
        match self.leaf_for(row) {
            Node::Leaf { probability, .. } => *probability,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, id: NodeId) -> usize {
            match &t.nodes[id] {
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }

    pub fn split_features(&self) -> BTreeSet<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GrowParams {
    pub min_leaf_size: usize,
    pub max_depth: usize,
}

/// Column-major training data with categorical values interned.
pub(crate) struct TrainingSet {
    columns: Vec<Column>,
    labels: Vec<bool>,
}

enum Column {
    Numeric(Vec<f64>),
    Categorical { codes: Vec<u32>, values: Vec<String> },
}

impl TrainingSet {
    /// `rows` must already conform to `kinds`.
    pub fn new(rows: &[Vec<FeatureValue>], labels: Vec<bool>, kinds: &[FeatureKind]) -> Self {
        let columns = kinds
            .iter()
            .enumerate()
            .map(|(f, kind)| match kind {
                FeatureKind::Numeric => Column::Numeric(
                    rows.iter()
                        .map(|r| r[f].as_num().expect("numeric feature"))
                        .collect(),
                ),
                FeatureKind::Categorical => {
                    let mut values: Vec<String> = rows
                        .iter()
                        .map(|r| r[f].as_cat().expect("categorical feature").to_string())
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    values.shrink_to_fit();
                    let codes = rows
                        .iter()
                        .map(|r| {
                            let v = r[f].as_cat().unwrap();
                            values.binary_search_by(|x| x.as_str().cmp(v)).unwrap() as u32
                        })
                        .collect();
                    Column::Categorical { codes, values }
                }
            })
            .collect();
        TrainingSet { columns, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, i: usize) -> bool {
        self.labels[i]
    }
}

fn entropy(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = (pos / total).clamp(0.0, 1.0);
    let mut h = 0.0;
    for q in [p, 1.0 - p] {
        if q > 0.0 {
            h -= q * q.log2();
        }
    }
    h
}

struct Candidate {
    feature: usize,
    predicate: SplitPredicate,
    gain: f64,
    ratio: f64,
}

/// Weighted class totals for one side of a split.
#[derive(Clone, Copy, Default)]
struct Side {
    weight: f64,
    positive: f64,
    count: usize,
}

impl Side {
    fn add(&mut self, w: f64, label: bool) {
        self.weight += w;
        if label {
            self.positive += w;
        }
        self.count += 1;
    }
}

fn score_partition(left: Side, right: Side, parent_entropy: f64, n: usize, penalty: f64) -> Option<(f64, f64)> {
    let total = left.weight + right.weight;
    if total <= 0.0 {
        return None;
    }
    let (pl, pr) = (left.weight / total, right.weight / total);
    let gain = parent_entropy
        - pl * entropy(left.positive, left.weight)
        - pr * entropy(right.positive, right.weight)
        - penalty / n as f64;
    let split_info = -[pl, pr]
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>();
    if split_info <= 1e-12 {
        return None;
    }
    Some((gain, gain / split_info))
}

pub(crate) struct TreeGrower<'a> {
    data: &'a TrainingSet,
    weights: &'a [f64],
    params: GrowParams,
    /// Feature visiting order; ties in split quality go to the earlier one.
    feature_order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> TreeGrower<'a> {
    pub fn new(
        data: &'a TrainingSet,
        weights: &'a [f64],
        params: GrowParams,
        feature_order: Vec<usize>,
    ) -> Self {
        TreeGrower {
            data,
            weights,
            params,
            feature_order,
            nodes: Vec::new(),
        }
    }

    pub fn grow(mut self) -> DecisionTree {
        let all: Vec<usize> = (0..self.data.len()).collect();
        self.grow_node(all, 0);
        DecisionTree { nodes: self.nodes }
    }

    fn grow_node(&mut self, rows: Vec<usize>, depth: usize) -> NodeId {
        let mut side = Side::default();
        for &i in &rows {
            side.add(self.weights[i], self.data.labels[i]);
        }
        let samples = rows.len();
        let share = samples as f64 / self.data.len() as f64;
        let probability = if side.weight > 0.0 {
            side.positive / side.weight
        } else {
            let pos = rows.iter().filter(|&&i| self.data.labels[i]).count();
            pos as f64 / samples.max(1) as f64
        };
        let leaf = Node::Leaf {
            positive: probability >= 0.5,
            probability,
            samples,
            share,
        };
        let pure = rows.iter().all(|&i| self.data.labels[i]) || rows.iter().all(|&i| !self.data.labels[i]);
        if pure || depth >= self.params.max_depth || samples < 2 * self.params.min_leaf_size.max(1) {
            self.nodes.push(leaf);
            return self.nodes.len() - 1;
        }
        let Some(best) = self.best_split(&rows, side) else {
            self.nodes.push(leaf);
            return self.nodes.len() - 1;
        };

        let id = self.nodes.len();
        self.nodes.push(leaf);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.goes_left(best.feature, &best.predicate, i));
        let left = self.grow_node(left_rows, depth + 1);
        let right = self.grow_node(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            predicate: best.predicate,
            left,
            right,
            samples,
            share,
        };
        id
    }

    fn goes_left(&self, feature: usize, predicate: &SplitPredicate, row: usize) -> bool {
        match (&self.data.columns[feature], predicate) {
            (Column::Numeric(v), SplitPredicate::Le { threshold }) => v[row] <= *threshold,
            (Column::Categorical { codes, values }, SplitPredicate::In { values: set, .. }) => {
                set.contains(&values[codes[row] as usize])
            }
            _ => unreachable!("predicate kind follows column kind"),
        }
    }

    /// Candidates must keep `min_leaf_size` rows on both sides. Among the
    /// candidates with positive gain and at least average gain, the highest
    /// gain ratio wins.
    fn best_split(&self, rows: &[usize], parent: Side) -> Option<Candidate> {
        let h = entropy(parent.positive, parent.weight);
        let mut candidates = Vec::new();
        for &f in &self.feature_order {
            let c = match &self.data.columns[f] {
                Column::Numeric(v) => self.numeric_candidate(f, v, rows, h),
                Column::Categorical { codes, values } => {
                    self.categorical_candidate(f, codes, values, rows, h)
                }
            };
            if let Some(c) = c.filter(|c| c.gain > 1e-12) {
                candidates.push(c);
            }
        }
        if candidates.is_empty() {
            return None;
        }
        let mean_gain = candidates.iter().map(|c| c.gain).sum::<f64>() / candidates.len() as f64;
        candidates
            .into_iter()
            .filter(|c| c.gain >= mean_gain - 1e-12)
            .fold(None, |best: Option<Candidate>, c| match best {
                Some(b) if c.ratio <= b.ratio + 1e-12 => Some(b),
                _ => Some(c),
            })
    }

    fn numeric_candidate(&self, feature: usize, values: &[f64], rows: &[usize], h: f64) -> Option<Candidate> {
        let mut sorted: Vec<usize> = rows.to_vec();
        sorted.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
        let total = {
            let mut s = Side::default();
            for &i in rows {
                s.add(self.weights[i], self.data.labels[i]);
            }
            s
        };
        let distinct = sorted.windows(2).filter(|w| values[w[0]] < values[w[1]]).count();
        if distinct == 0 {
            return None;
        }
        // Thresholds chosen among many cut points overstate gain; charge the
        // cost of naming one of them.
        let penalty = (distinct as f64).log2();
        let min_leaf = self.params.min_leaf_size;
        let mut left = Side::default();
        let mut best: Option<(f64, f64, f64)> = None;
        for k in 0..sorted.len() - 1 {
            let i = sorted[k];
            left.add(self.weights[i], self.data.labels[i]);
            let (a, b) = (values[i], values[sorted[k + 1]]);
            if a >= b || left.count < min_leaf || sorted.len() - left.count < min_leaf {
                continue;
            }
            let right = Side {
                weight: total.weight - left.weight,
                positive: total.positive - left.positive,
                count: total.count - left.count,
            };
            if let Some((gain, _)) = score_partition(left, right, h, rows.len(), penalty) {
                if best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                    let threshold = a + (b - a) / 2.0;
                    let threshold = if threshold >= b { a } else { threshold };
                    let (_, ratio) = score_partition(left, right, h, rows.len(), penalty).unwrap();
                    best = Some((gain, ratio, threshold));
                }
            }
        }
        best.map(|(gain, ratio, threshold)| Candidate {
            feature,
            predicate: SplitPredicate::Le { threshold },
            gain,
            ratio,
        })
    }

    fn categorical_candidate(
        &self,
        feature: usize,
        codes: &[u32],
        values: &[String],
        rows: &[usize],
        h: f64,
    ) -> Option<Candidate> {
        let mut per_code: Vec<Side> = vec![Side::default(); values.len()];
        for &i in rows {
            per_code[codes[i] as usize].add(self.weights[i], self.data.labels[i]);
        }
        let mut present: Vec<usize> = (0..values.len()).filter(|&c| per_code[c].count > 0).collect();
        if present.len() < 2 {
            return None;
        }
        // For two classes the best binary grouping is a prefix of the
        // categories ordered by positive rate.
        let rate = |c: usize| {
            let s = per_code[c];
            if s.weight > 0.0 {
                s.positive / s.weight
            } else {
                0.0
            }
        };
        present.sort_by(|&a, &b| rate(a).partial_cmp(&rate(b)).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        let penalty = ((present.len() - 1) as f64).log2();
        let total = present.iter().fold(Side::default(), |mut acc, &c| {
            acc.weight += per_code[c].weight;
            acc.positive += per_code[c].positive;
            acc.count += per_code[c].count;
            acc
        });
        let min_leaf = self.params.min_leaf_size;
        let mut left = Side::default();
        let mut best: Option<(f64, f64, usize)> = None;
        for (k, &c) in present.iter().enumerate().take(present.len() - 1) {
            left.weight += per_code[c].weight;
            left.positive += per_code[c].positive;
            left.count += per_code[c].count;
            let right = Side {
                weight: total.weight - left.weight,
                positive: total.positive - left.positive,
                count: total.count - left.count,
            };
            if left.count < min_leaf || right.count < min_leaf {
                continue;
            }
            if let Some((gain, ratio)) = score_partition(left, right, h, rows.len(), penalty) {
                if best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                    best = Some((gain, ratio, k));
                }
            }
        }
        best.map(|(gain, ratio, k)| {
            let left_codes = &present[..=k];
            let left_count: usize = left_codes.iter().map(|&c| per_code[c].count).sum();
            Candidate {
                feature,
                predicate: SplitPredicate::In {
                    values: left_codes.iter().map(|&c| values[c].clone()).collect(),
                    others: present[k + 1..].iter().map(|&c| values[c].clone()).collect(),
                    unseen_left: left_count * 2 >= total.count,
                },
                gain,
                ratio,
            }
        })
    }
}

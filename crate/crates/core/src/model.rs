//! Shared domain types: events, geometry, the 68-slot feature vector,
//! labeled elements and DOM snapshots.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of an element within its snapshot (preorder position).
pub type ElementId = usize;

/// The five event types the crawler predicts and fires.
///
/// The derived ordering is the popularity order used to sequence several
/// events predicted on one element: `Click` comes first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventType {
    Click,
    Mouseover,
    Mouseout,
    Mousedown,
    Touchstart,
}

impl EventType {
    pub const ALL: [EventType; 5] = [
        EventType::Click,
        EventType::Mouseover,
        EventType::Mouseout,
        EventType::Mousedown,
        EventType::Touchstart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Click => "click",
            EventType::Mouseover => "mouseover",
            EventType::Mouseout => "mouseout",
            EventType::Mousedown => "mousedown",
            EventType::Touchstart => "touchstart",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("unknown event type `{0}`")]
pub struct UnknownEventType(pub String);

impl FromStr for EventType {
    type Err = UnknownEventType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventType::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| UnknownEventType(s.to_string()))
    }
}

pub type EventSet = BTreeSet<EventType>;

/// Rendered element rectangle in CSS pixels. `x`/`y` can be negative for
/// elements placed outside the viewport.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        BoundingBox { x, y, width, height }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.width.is_finite()
            && self.height.is_finite()
            && self.width >= 0.0
            && self.height >= 0.0
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }
}

/// Structural features, in schema order.
pub const STRUCTURAL_FEATURES: [&str; 7] = [
    "bbox_x",
    "bbox_y",
    "bbox_width",
    "bbox_height",
    "dom_depth",
    "descendant_count",
    "subtree_height",
];

/// Computed-style properties used as raw feature values, in schema order.
pub const CSS_PROPERTIES: [&str; 51] = [
    "align-content",
    "align-items",
    "align-self",
    "backface-visibility",
    "border-block-end-style",
    "border-block-start-style",
    "border-bottom-style",
    "border-collapse",
    "border-inline-end-style",
    "border-inline-start-style",
    "border-left-style",
    "border-right-style",
    "border-top-style",
    "box-sizing",
    "clear",
    "cursor",
    "display",
    "flex-direction",
    "flex-grow",
    "flex-wrap",
    "float",
    "font-style",
    "font-weight",
    "hyphens",
    "justify-content",
    "list-style-position",
    "list-style-type",
    "mix-blend-mode",
    "object-fit",
    "opacity",
    "outline-style",
    "overflow-wrap",
    "overflow-x",
    "overflow-y",
    "pointer-events",
    "position",
    "resize",
    "table-layout",
    "text-align",
    "text-decoration-line",
    "text-decoration-style",
    "text-overflow",
    "text-rendering",
    "text-size-adjust",
    "text-transform",
    "transform-style",
    "unicode-bidi",
    "user-select",
    "visibility",
    "white-space",
    "word-break",
];

/// CSS properties whose computed value is real-valued.
pub const NUMERIC_CSS_PROPERTIES: [&str; 2] = ["opacity", "flex-grow"];

/// Source properties of the binary predictors that are not already part of
/// [`CSS_PROPERTIES`]. Their concrete values are kept alongside the feature
/// vector for style signatures.
pub const PREDICTOR_SOURCE_PROPERTIES: [&str; 9] = [
    "animation-name",
    "transition-property",
    "background-image",
    "background-color",
    "box-shadow",
    "touch-action",
    "transform",
    "will-change",
    "z-index",
];

/// Properties reduced to "is a non-default value set?".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryPredictor {
    HasAnimation,
    HasBackground,
    HasBorder,
    HasOutline,
    HasBoxShadow,
    HasTextDecoration,
    HasTouchAction,
    HasTransform,
    HasWillChange,
    HasZIndex,
}

impl BinaryPredictor {
    pub const ALL: [BinaryPredictor; 10] = [
        BinaryPredictor::HasAnimation,
        BinaryPredictor::HasBackground,
        BinaryPredictor::HasBorder,
        BinaryPredictor::HasOutline,
        BinaryPredictor::HasBoxShadow,
        BinaryPredictor::HasTextDecoration,
        BinaryPredictor::HasTouchAction,
        BinaryPredictor::HasTransform,
        BinaryPredictor::HasWillChange,
        BinaryPredictor::HasZIndex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinaryPredictor::HasAnimation => "has_animation",
            BinaryPredictor::HasBackground => "has_background",
            BinaryPredictor::HasBorder => "has_border",
            BinaryPredictor::HasOutline => "has_outline",
            BinaryPredictor::HasBoxShadow => "has_box_shadow",
            BinaryPredictor::HasTextDecoration => "has_text_decoration",
            BinaryPredictor::HasTouchAction => "has_touch_action",
            BinaryPredictor::HasTransform => "has_transform",
            BinaryPredictor::HasWillChange => "has_will_change",
            BinaryPredictor::HasZIndex => "has_z_index",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

pub const FEATURE_COUNT: usize =
    STRUCTURAL_FEATURES.len() + CSS_PROPERTIES.len() + BinaryPredictor::ALL.len();

/// Offset of the first CSS feature in the flat schema.
pub const CSS_OFFSET: usize = STRUCTURAL_FEATURES.len();
/// Offset of the first binary predictor in the flat schema.
pub const BINARY_OFFSET: usize = CSS_OFFSET + CSS_PROPERTIES.len();

/// The ordered 68 feature names shared by corpora and models.
pub fn feature_names() -> Vec<String> {
    STRUCTURAL_FEATURES
        .iter()
        .chain(CSS_PROPERTIES.iter())
        .map(|s| s.to_string())
        .chain(BinaryPredictor::ALL.iter().map(|p| p.name().to_string()))
        .collect()
}

pub fn feature_index(name: &str) -> Option<usize> {
    feature_names().iter().position(|n| n == name)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// Kind of the feature at `index` in the flat schema. Binary predictors are
/// numeric 0/1 so that a single threshold split separates them.
pub fn feature_kind(index: usize) -> FeatureKind {
    if (CSS_OFFSET..BINARY_OFFSET).contains(&index) {
        let name = CSS_PROPERTIES[index - CSS_OFFSET];
        if NUMERIC_CSS_PROPERTIES.contains(&name) {
            FeatureKind::Numeric
        } else {
            FeatureKind::Categorical
        }
    } else {
        FeatureKind::Numeric
    }
}

/// One model input value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Num(f64),
    Cat(String),
}

impl FeatureValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            FeatureValue::Num(v) => Some(*v),
            FeatureValue::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            FeatureValue::Cat(s) => Some(s),
            FeatureValue::Num(_) => None,
        }
    }

    /// Canonical string form; numbers use the shortest round-trip decimal.
    pub fn to_canonical_string(&self) -> String {
        match self {
            FeatureValue::Num(v) => format!("{v}"),
            FeatureValue::Cat(s) => s.clone(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureVectorError {
    #[error("expected {expected} feature values, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("feature `{name}` has the wrong kind of value")]
    Kind { name: String },
    #[error("feature `{name}` is out of range: {value}")]
    Range { name: String, value: f64 },
}

/// The structural and visual style features of one element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub bounding_box: BoundingBox,
    pub dom_depth: u32,
    pub descendant_count: u32,
    pub subtree_height: u32,
    /// One value per entry of [`CSS_PROPERTIES`].
    pub css: Vec<FeatureValue>,
    /// One flag per entry of [`BinaryPredictor::ALL`].
    pub predictors: [bool; 10],
    /// Concrete values of [`PREDICTOR_SOURCE_PROPERTIES`]. Not model inputs.
    pub predictor_sources: Vec<String>,
}

impl FeatureVector {
    pub fn css_value(&self, property: &str) -> Option<&FeatureValue> {
        CSS_PROPERTIES
            .iter()
            .position(|p| *p == property)
            .map(|i| &self.css[i])
    }

    pub fn predictor(&self, p: BinaryPredictor) -> bool {
        self.predictors[p.index()]
    }

    pub fn predictor_source(&self, property: &str) -> Option<&str> {
        PREDICTOR_SOURCE_PROPERTIES
            .iter()
            .position(|p| *p == property)
            .map(|i| self.predictor_sources[i].as_str())
    }

    /// Flattened model input in schema order (68 values).
    pub fn values(&self) -> Vec<FeatureValue> {
        let b = &self.bounding_box;
        let mut out = Vec::with_capacity(FEATURE_COUNT);
        out.extend(
            [
                b.x,
                b.y,
                b.width,
                b.height,
                f64::from(self.dom_depth),
                f64::from(self.descendant_count),
                f64::from(self.subtree_height),
            ]
            .map(FeatureValue::Num),
        );
        out.extend(self.css.iter().cloned());
        out.extend(
            self.predictors
                .iter()
                .map(|&p| FeatureValue::Num(if p { 1.0 } else { 0.0 })),
        );
        out
    }

    /// Inverse of [`FeatureVector::values`].
    pub fn from_values(
        values: &[FeatureValue],
        predictor_sources: Vec<String>,
    ) -> Result<Self, FeatureVectorError> {
        if values.len() != FEATURE_COUNT {
            return Err(FeatureVectorError::Arity {
                expected: FEATURE_COUNT,
                got: values.len(),
            });
        }
        if predictor_sources.len() != PREDICTOR_SOURCE_PROPERTIES.len() {
            return Err(FeatureVectorError::Arity {
                expected: PREDICTOR_SOURCE_PROPERTIES.len(),
                got: predictor_sources.len(),
            });
        }
        let names = feature_names();
        let num = |i: usize| -> Result<f64, FeatureVectorError> {
            values[i].as_num().ok_or_else(|| FeatureVectorError::Kind {
                name: names[i].clone(),
            })
        };
        let count = |i: usize| -> Result<u32, FeatureVectorError> {
            let v = num(i)?;
            if v < 0.0 || v.fract() != 0.0 || v > f64::from(u32::MAX) {
                return Err(FeatureVectorError::Range {
                    name: names[i].clone(),
                    value: v,
                });
            }
            Ok(v as u32)
        };
        let bounding_box = BoundingBox::new(num(0)?, num(1)?, num(2)?, num(3)?);
        if !bounding_box.is_valid() {
            return Err(FeatureVectorError::Range {
                name: "bbox".into(),
                value: bounding_box.width.min(bounding_box.height),
            });
        }
        let mut css = Vec::with_capacity(CSS_PROPERTIES.len());
        for i in CSS_OFFSET..BINARY_OFFSET {
            let ok = matches!(
                (feature_kind(i), &values[i]),
                (FeatureKind::Numeric, FeatureValue::Num(_))
                    | (FeatureKind::Categorical, FeatureValue::Cat(_))
            );
            if !ok {
                return Err(FeatureVectorError::Kind {
                    name: names[i].clone(),
                });
            }
            css.push(values[i].clone());
        }
        let mut predictors = [false; 10];
        for (k, slot) in predictors.iter_mut().enumerate() {
            let v = num(BINARY_OFFSET + k)?;
            *slot = match v {
                x if x == 0.0 => false,
                x if x == 1.0 => true,
                _ => {
                    return Err(FeatureVectorError::Range {
                        name: names[BINARY_OFFSET + k].clone(),
                        value: v,
                    })
                }
            };
        }
        Ok(FeatureVector {
            bounding_box,
            dom_depth: count(4)?,
            descendant_count: count(5)?,
            subtree_height: count(6)?,
            css,
            predictors,
            predictor_sources,
        })
    }
}

/// Attributes consulted when deciding whether an element is actionable
/// without any script.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementAttributes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub href: Option<String>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub input_type: Option<String>,
}

/// One element of a page, its features and its labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledElement {
    pub element_id: ElementId,
    pub snapshot_id: String,
    pub site_id: String,
    /// Metadata only; never a model feature.
    pub tag_name: String,
    pub attributes: ElementAttributes,
    pub features: FeatureVector,
    pub direct_listeners: EventSet,
    pub effective_labels: EventSet,
    pub is_default_actionable: bool,
}

impl LabeledElement {
    pub fn is_positive(&self, event: EventType) -> bool {
        self.effective_labels.contains(&event)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("element {0} is reachable along more than one path (cycle or shared child)")]
    Cycle(ElementId),
    #[error("element {0} is not reachable from the root")]
    Orphan(ElementId),
    #[error("child reference {child} of element {parent} is out of range")]
    DanglingChild { parent: ElementId, child: ElementId },
    #[error("element at position {position} carries id {id}")]
    IdMismatch { position: usize, id: ElementId },
    #[error("adjacency has {adjacency} entries for {elements} elements")]
    Shape { adjacency: usize, elements: usize },
    #[error("snapshot has no elements")]
    Empty,
}

/// A page at one instant: a rooted element tree plus the raw markup used for
/// state abstraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomSnapshot {
    pub snapshot_id: String,
    pub root: ElementId,
    /// `children[i]` lists the children of element `i` in document order.
    pub children: Vec<Vec<ElementId>>,
    /// `elements[i].element_id == i`.
    pub elements: Vec<LabeledElement>,
    pub serialized_dom: String,
}

impl DomSnapshot {
    /// Checks the adjacency forms one rooted tree covering every element.
    pub fn validate(&self) -> Result<(), SnapshotError> {
        let n = self.elements.len();
        if n == 0 {
            return Err(SnapshotError::Empty);
        }
        if self.children.len() != n {
            return Err(SnapshotError::Shape {
                adjacency: self.children.len(),
                elements: n,
            });
        }
        for (i, e) in self.elements.iter().enumerate() {
            if e.element_id != i {
                return Err(SnapshotError::IdMismatch {
                    position: i,
                    id: e.element_id,
                });
            }
        }
        if self.root >= n {
            return Err(SnapshotError::Orphan(self.root));
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.root];
        seen[self.root] = true;
        while let Some(node) = stack.pop() {
            for &child in &self.children[node] {
                if child >= n {
                    return Err(SnapshotError::DanglingChild {
                        parent: node,
                        child,
                    });
                }
                if seen[child] {
                    return Err(SnapshotError::Cycle(child));
                }
                seen[child] = true;
                stack.push(child);
            }
        }
        match seen.iter().position(|s| !s) {
            Some(orphan) => Err(SnapshotError::Orphan(orphan)),
            None => Ok(()),
        }
    }

    /// Element ids in preorder (document order).
    pub fn preorder(&self) -> Vec<ElementId> {
        let mut out = Vec::with_capacity(self.elements.len());
        let mut stack = vec![self.root];
        while let Some(node) = stack.pop() {
            out.push(node);
            stack.extend(self.children[node].iter().rev().copied());
        }
        out
    }

    /// Parent of every element; `None` for the root.
    pub fn parents(&self) -> Vec<Option<ElementId>> {
        let mut parents = vec![None; self.elements.len()];
        for (p, kids) in self.children.iter().enumerate() {
            for &c in kids {
                parents[c] = Some(p);
            }
        }
        parents
    }

    /// Copy with ground-truth listener data removed. Crawling strategies only
    /// ever see snapshots in this form.
    pub fn without_ground_truth(&self) -> DomSnapshot {
        let mut out = self.clone();
        for e in &mut out.elements {
            e.direct_listeners.clear();
            e.effective_labels.clear();
            if e.is_default_actionable {
                e.effective_labels.insert(EventType::Click);
            }
        }
        out
    }
}

/// Depth, descendant count and subtree height of every element, computed
/// from the adjacency alone.
pub fn structural_metrics(snapshot: &DomSnapshot) -> Result<Vec<(u32, u32, u32)>, SnapshotError> {
    snapshot.validate()?;
    let n = snapshot.elements.len();
    let order = snapshot.preorder();
    let mut depth = vec![0u32; n];
    for &node in &order {
        for &c in &snapshot.children[node] {
            depth[c] = depth[node] + 1;
        }
    }
    let mut descendants = vec![0u32; n];
    let mut height = vec![0u32; n];
    for &node in order.iter().rev() {
        for &c in &snapshot.children[node] {
            descendants[node] += descendants[c] + 1;
            height[node] = height[node].max(height[c] + 1);
        }
    }
    Ok((0..n).map(|i| (depth[i], descendants[i], height[i])).collect())
}

/// Rewrites the structural features of every element to match the tree.
pub fn recompute_structural(mut snapshot: DomSnapshot) -> Result<DomSnapshot, SnapshotError> {
    let metrics = structural_metrics(&snapshot)?;
    for (e, (d, desc, h)) in snapshot.elements.iter_mut().zip(metrics) {
        e.features.dom_depth = d;
        e.features.descendant_count = desc;
        e.features.subtree_height = h;
    }
    Ok(snapshot)
}

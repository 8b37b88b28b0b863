//! What the instrumentation script returns and how it becomes a snapshot.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use stylecrawl_core::dataset::mark_default_actionables;
use stylecrawl_core::features::{extract_features, required_properties, RawElementObservation, TreePosition};
use stylecrawl_core::model::{
    recompute_structural, BoundingBox, DomSnapshot, ElementAttributes, EventSet, LabeledElement,
};

pub const PAYLOAD_SCHEMA_VERSION: u32 = 1;

/// Source of the injected page script.
pub const INSTRUMENT_JS: &str = include_str!("instrument.js");

/// `Runtime.evaluate` expression running the script in `mode`.
pub fn instrument_expression(mode: &str, arg: Option<usize>) -> String {
    let props = serde_json::to_string(&required_properties()).expect("strings serialize");
    let arg = arg.map_or("null".to_string(), |a| a.to_string());
    format!("({})({props}, {mode:?}, {arg})", INSTRUMENT_JS.trim_end())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<BoxRecord> for BoundingBox {
    fn from(b: BoxRecord) -> Self {
        BoundingBox::new(b.x, b.y, b.w, b.h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementRecord {
    /// Preorder position on the page.
    pub index: usize,
    pub parent: Option<usize>,
    pub tag: String,
    #[serde(default)]
    pub attrs: ElementAttributes,
    #[serde(rename = "box")]
    pub bbox: BoxRecord,
    #[serde(default)]
    pub styles: BTreeMap<String, String>,
    /// Set when the page could not read the element's style.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionPayload {
    pub schema_version: u32,
    pub elements: Vec<ElementRecord>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PayloadError {
    #[error("unsupported payload schema version {0}")]
    Version(u32),
    #[error("payload has no elements")]
    Empty,
    #[error("record {position} carries index {index}")]
    Index { position: usize, index: usize },
    #[error("record {index} has parent {parent}, which does not precede it")]
    Parent { index: usize, parent: usize },
    #[error("record {0} has no parent but is not the first record")]
    ExtraRoot(usize),
    #[error("record {index} lacks required style `{property}`")]
    MissingStyle { index: usize, property: String },
    #[error("the root element could not be read")]
    UnreadableRoot,
    #[error("payload does not form a tree: {0}")]
    Shape(String),
}

impl ExtractionPayload {
    /// Checks the structural invariants; records flagged with an error are
    /// exempt from the style check.
    pub fn validate(&self) -> Result<(), PayloadError> {
        if self.schema_version != PAYLOAD_SCHEMA_VERSION {
            return Err(PayloadError::Version(self.schema_version));
        }
        if self.elements.is_empty() {
            return Err(PayloadError::Empty);
        }
        let required = required_properties();
        for (position, r) in self.elements.iter().enumerate() {
            if r.index != position {
                return Err(PayloadError::Index {
                    position,
                    index: r.index,
                });
            }
            match r.parent {
                None if position != 0 => return Err(PayloadError::ExtraRoot(position)),
                Some(p) if p >= position => {
                    return Err(PayloadError::Parent {
                        index: position,
                        parent: p,
                    })
                }
                _ => {}
            }
            if r.error.is_none() {
                if let Some(p) = required.iter().find(|p| !r.styles.contains_key(**p)) {
                    return Err(PayloadError::MissingStyle {
                        index: position,
                        property: p.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A snapshot built from a payload, with the page index of every element.
#[derive(Clone, Debug, PartialEq)]
pub struct PageSnapshot {
    pub snapshot: DomSnapshot,
    /// `page_index[id]` is the preorder position of snapshot element `id`
    /// on the page; they differ once unreadable records are skipped.
    pub page_index: Vec<usize>,
    /// Page indices of skipped records.
    pub skipped: Vec<usize>,
}

/// Turns a payload into a snapshot. Unreadable records are dropped and
/// their children attached to the nearest kept ancestor.
pub fn payload_to_snapshot(
    payload: &ExtractionPayload,
    snapshot_id: &str,
    site_id: &str,
    serialized_dom: String,
) -> Result<PageSnapshot, PayloadError> {
    payload.validate()?;
    let n = payload.elements.len();
    let mut new_id: Vec<Option<usize>> = vec![None; n];
    let mut page_index = Vec::new();
    let mut skipped = Vec::new();
    let mut elements = Vec::new();
    let mut parent_of = Vec::new();
    for r in &payload.elements {
        let features = if r.error.is_some() {
            None
        } else {
            let obs = RawElementObservation {
                computed_style: r.styles.clone(),
                bounding_box: r.bbox.into(),
            };
            extract_features(&obs, TreePosition::default()).ok()
        };
        let Some(features) = features else {
            if r.index == 0 {
                return Err(PayloadError::UnreadableRoot);
            }
            skipped.push(r.index);
            continue;
        };
        // Nearest kept ancestor.
        let mut p = r.parent;
        while let Some(q) = p {
            if new_id[q].is_some() {
                break;
            }
            p = payload.elements[q].parent;
        }
        let id = elements.len();
        new_id[r.index] = Some(id);
        page_index.push(r.index);
        parent_of.push(p.and_then(|q| new_id[q]));
        elements.push(LabeledElement {
            element_id: id,
            snapshot_id: snapshot_id.to_string(),
            site_id: site_id.to_string(),
            tag_name: r.tag.to_ascii_lowercase(),
            attributes: r.attrs.clone(),
            features,
            direct_listeners: EventSet::new(),
            effective_labels: EventSet::new(),
            is_default_actionable: false,
        });
    }
    let mut children = vec![Vec::new(); elements.len()];
    for (id, p) in parent_of.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(id);
        }
    }
    let snapshot = DomSnapshot {
        snapshot_id: snapshot_id.to_string(),
        root: 0,
        children,
        elements,
        serialized_dom,
    };
    let snapshot = recompute_structural(snapshot).map_err(|e| PayloadError::Shape(e.to_string()))?;
    Ok(PageSnapshot {
        snapshot: mark_default_actionables(snapshot),
        page_index,
        skipped,
    })
}

//! Synthetic elements, trees and corpora for tests, fixtures and
//! experiments.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::features::{css_initial_values, extract_features, RawElementObservation, TreePosition};
use crate::model::{
    BoundingBox, DomSnapshot, ElementAttributes, ElementId, EventSet, LabeledElement,
};

/// Builds an element from style overrides on top of the initial values.
pub fn styled_element(
    element_id: ElementId,
    tag: &str,
    attributes: ElementAttributes,
    style: &BTreeMap<String, String>,
    bounding_box: BoundingBox,
) -> LabeledElement {
    let mut computed_style = css_initial_values();
    computed_style.extend(style.iter().map(|(k, v)| (k.clone(), v.clone())));
    let obs = RawElementObservation {
        computed_style,
        bounding_box,
    };
    let features = extract_features(&obs, TreePosition::default())
        .expect("initial values cover every required property");
    LabeledElement {
        element_id,
        snapshot_id: "synthetic".into(),
        site_id: "synthetic".into(),
        tag_name: tag.into(),
        attributes,
        features,
        direct_listeners: EventSet::new(),
        effective_labels: EventSet::new(),
        is_default_actionable: false,
    }
}

pub fn plain_element(element_id: ElementId, tag: &str) -> LabeledElement {
    styled_element(
        element_id,
        tag,
        ElementAttributes::default(),
        &BTreeMap::new(),
        BoundingBox::new(0.0, 0.0, 10.0, 10.0),
    )
}

/// A snapshot of plain `div`s wired by `children`, with structural features
/// recomputed when the adjacency is valid.
pub fn snapshot_from_children(children: Vec<Vec<ElementId>>) -> DomSnapshot {
    let elements = (0..children.len()).map(|i| plain_element(i, "div")).collect();
    let snapshot = DomSnapshot {
        snapshot_id: "synthetic".into(),
        root: 0,
        children,
        elements,
        serialized_dom: String::new(),
    };
    crate::model::recompute_structural(snapshot.clone()).unwrap_or(snapshot)
}

/// Random tree of `n` nodes with ids in preorder.
///
/// Each new node attaches to a node on the current rightmost path, which is
/// exactly the set of attachment points that keep ids in preorder.
pub fn random_tree(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<ElementId>> {
    assert!(n >= 1);
    let mut children = vec![Vec::new(); n];
    let mut rightmost = vec![0usize];
    for id in 1..n {
        let keep = rng.gen_range(1..=rightmost.len());
        rightmost.truncate(keep);
        let parent = *rightmost.last().unwrap();
        children[parent].push(id);
        rightmost.push(id);
    }
    children
}

/// Values a synthetic row draws from for each categorical property.
const CURSORS: &[&str] = &["auto", "pointer", "default", "text", "move"];
const DISPLAYS: &[&str] = &["block", "inline", "inline-block", "flex", "none"];
const POSITIONS: &[&str] = &["static", "relative", "absolute", "fixed"];
const TEXT_ALIGNS: &[&str] = &["start", "center", "left", "right"];
const FONT_WEIGHTS: &[&str] = &["400", "700", "300"];

/// Random style row with noisy but plausible values for a handful of
/// properties; everything else stays at its initial value.
pub fn random_style(rng: &mut ChaCha8Rng) -> BTreeMap<String, String> {
    let mut style = BTreeMap::new();
    let mut pick = |prop: &str, values: &[&str], rng: &mut ChaCha8Rng| {
        style.insert(prop.to_string(), values.choose(rng).unwrap().to_string());
    };
    pick("cursor", CURSORS, rng);
    pick("display", DISPLAYS, rng);
    pick("position", POSITIONS, rng);
    pick("text-align", TEXT_ALIGNS, rng);
    pick("font-weight", FONT_WEIGHTS, rng);
    pick("border-top-style", &["none", "none", "solid"], rng);
    pick("background-image", &["none", "none", "url(x.png)"], rng);
    pick("z-index", &["auto", "auto", "1", "10"], rng);
    pick("text-decoration-line", &["none", "underline"], rng);
    let opacity = [1.0, 1.0, 0.5, 0.8][rng.gen_range(0..4)];
    style.insert("opacity".into(), format!("{opacity}"));
    style
}

pub fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    BoundingBox::new(
        rng.gen_range(-200.0..1200.0_f64).round(),
        rng.gen_range(-200.0..3000.0_f64).round(),
        rng.gen_range(0.0..800.0_f64).round(),
        rng.gen_range(0.0..400.0_f64).round(),
    )
}

/// `n` rows with random styles, geometry and tree positions spread over
/// `sites` sites, labeled for `event` by `rule`.
pub fn rule_corpus(
    n: usize,
    sites: usize,
    event: crate::model::EventType,
    seed: u64,
    rule: impl Fn(&crate::model::FeatureVector) -> bool,
) -> crate::dataset::Corpus {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = crate::dataset::Corpus::new(format!("synthetic rule corpus, seed {seed}"));
    for i in 0..n {
        let site = format!("site-{:03}", i % sites.max(1));
        corpus.sites.insert(site.clone());
        let style = random_style(&mut rng);
        let mut e = styled_element(i, "div", ElementAttributes::default(), &style, random_box(&mut rng));
        e.site_id = site;
        e.snapshot_id = format!("snap-{}", i % sites.max(1));
        e.features.dom_depth = rng.gen_range(0..25);
        e.features.subtree_height = rng.gen_range(0..8);
        e.features.descendant_count = e.features.subtree_height * rng.gen_range(0..5);
        if rule(&e.features) {
            e.effective_labels.insert(event);
        }
        corpus.rows.push(e);
    }
    corpus
}

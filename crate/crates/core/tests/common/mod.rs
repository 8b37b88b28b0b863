//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stylecrawl_core::classifier::{ClassMetrics, Confusion};
use stylecrawl_core::model::{
    BinaryPredictor, DomSnapshot, ElementAttributes, EventSet, EventType, FeatureValue,
    FeatureVector,
};
use stylecrawl_core::sim::{ElementSpec, MockAppSpec, StateSpec, TransitionSpec, APP_SCHEMA_VERSION};
use stylecrawl_core::synth::{random_tree, snapshot_from_children};

/// Random tree with random listeners and a mix of default-actionable tags.
pub fn random_listener_tree(n: usize, seed: u64) -> DomSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = snapshot_from_children(random_tree(n, &mut rng));
    let tags = ["div", "span", "a", "button", "input", "li", "A", "INPUT"];
    let types = ["text", "button", "submit", "image", "checkbox", "SUBMIT"];
    for e in &mut s.elements {
        let tag = *tags.choose(&mut rng).unwrap();
        e.tag_name = tag.to_string();
        e.attributes = ElementAttributes {
            href: rng.gen_bool(0.5).then(|| "#x".to_string()),
            input_type: rng.gen_bool(0.7).then(|| types.choose(&mut rng).unwrap().to_string()),
        };
        for ev in EventType::ALL {
            if rng.gen_bool(0.1) {
                e.direct_listeners.insert(ev);
            }
        }
    }
    s
}

/// Clickable without script, spelled out independently of the crate.
pub fn oracle_default_actionable(tag: &str, attrs: &ElementAttributes) -> bool {
    let tag = tag.to_lowercase();
    if tag == "button" {
        return true;
    }
    if tag == "a" {
        return attrs.href.is_some();
    }
    if tag == "input" {
        let t = attrs.input_type.clone().unwrap_or_default().to_lowercase();
        return t == "button" || t == "submit" || t == "image";
    }
    false
}

/// Labels by walking up to the root from every element.
pub fn oracle_labels(s: &DomSnapshot) -> Vec<EventSet> {
    let n = s.elements.len();
    let mut parent = vec![usize::MAX; n];
    for (p, cs) in s.children.iter().enumerate() {
        for &c in cs {
            parent[c] = p;
        }
    }
    (0..n)
        .map(|i| {
            let mut labels = EventSet::new();
            let mut node = i;
            loop {
                labels.extend(s.elements[node].direct_listeners.iter().copied());
                if node == s.root {
                    break;
                }
                node = parent[node];
            }
            let e = &s.elements[i];
            if oracle_default_actionable(&e.tag_name, &e.attributes) {
                labels.insert(EventType::Click);
            }
            labels
        })
        .collect()
}

/// Confusion counts straight from (predicted, actual) pairs.
pub fn oracle_confusion(pairs: &[(bool, bool)]) -> (u64, u64, u64, u64) {
    let count = |p: bool, a: bool| pairs.iter().filter(|&&x| x == (p, a)).count() as u64;
    (count(true, true), count(true, false), count(false, true), count(false, false))
}

/// Precision, recall and F-measure with 0 for undefined ratios.
pub fn oracle_prf(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let ratio = |a: u64, b: u64| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let p = ratio(tp, fp);
    let r = ratio(tp, fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

pub fn metrics_close(m: &ClassMetrics, expect: (f64, f64, f64), tol: f64) -> bool {
    (m.precision - expect.0).abs() <= tol
        && (m.recall - expect.1).abs() <= tol
        && (m.f_measure - expect.2).abs() <= tol
}

pub fn confusion_of(pairs: &[(bool, bool)]) -> Confusion {
    let mut c = Confusion::default();
    for &(p, a) in pairs {
        c.record(p, a);
    }
    c
}

fn cat(fv: &FeatureVector, prop: &str) -> String {
    match fv.css_value(prop) {
        Some(FeatureValue::Cat(s)) => s.clone(),
        other => panic!("{prop} is not categorical: {other:?}"),
    }
}

pub type Rule = fn(&FeatureVector) -> bool;

/// Labeling rules over at most three features each.
pub fn classifier_rules() -> Vec<(&'static str, Rule)> {
    vec![
        ("cursor is pointer", |f| cat(f, "cursor") == "pointer"),
        ("cursor pointer xor has background", |f| {
            (cat(f, "cursor") == "pointer") ^ f.predictor(BinaryPredictor::HasBackground)
        }),
        ("inline-block deep or bordered", |f| {
            (cat(f, "display") == "inline-block" && f.dom_depth > 5)
                || f.predictor(BinaryPredictor::HasBorder)
        }),
    ]
}

/// XOR of two features that are each independent of the label. Greedy
/// splitting sees no gain on either at the root, so this is reported but
/// not required.
pub fn balanced_xor_rule() -> (&'static str, Rule) {
    ("underline xor right half", |f| {
        f.predictor(BinaryPredictor::HasTextDecoration) ^ (f.bounding_box.x > 500.0)
    })
}

/// Random app: a few states with random trees, random listeners and
/// transitions drawn from them.
pub fn random_app(seed: u64) -> MockAppSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = rng.gen_range(1..6);
    let ids: Vec<String> = (0..n_states).map(|i| format!("s{i}")).collect();
    let mut states = Vec::new();
    let mut transitions = Vec::new();
    let mut units = BTreeMap::new();
    for id in &ids {
        let n = rng.gen_range(1..12);
        let children = random_tree(n, &mut rng);
        let mut parent = vec![None; n];
        for (p, cs) in children.iter().enumerate() {
            for &c in cs {
                parent[c] = Some(p);
            }
        }
        let mut elements = Vec::new();
        for (i, p) in parent.iter().enumerate() {
            let mut listeners = EventSet::new();
            for e in EventType::ALL {
                if rng.gen_bool(0.2) {
                    listeners.insert(e);
                }
            }
            let tag = ["div", "span", "button", "p"][rng.gen_range(0..4)];
            let mut style = BTreeMap::new();
            style.insert("cursor".to_string(), ["auto", "pointer"][rng.gen_range(0..2)].to_string());
            for e in &listeners {
                if rng.gen_bool(0.7) {
                    let unit = format!("{id}-{i}-{e}");
                    units.insert(unit.clone(), rng.gen_range(1..20));
                    transitions.push(TransitionSpec {
                        state: id.clone(),
                        element: i,
                        event: *e,
                        target: ids[rng.gen_range(0..n_states)].clone(),
                        units: vec![unit],
                        button: None,
                    });
                }
            }
            elements.push(ElementSpec {
                tag: tag.into(),
                attributes: Default::default(),
                parent: *p,
                bounding_box: stylecrawl_core::model::BoundingBox::new(0.0, 0.0, 10.0, 10.0),
                style,
                listeners,
            });
        }
        states.push(StateSpec {
            id: id.clone(),
            elements,
        });
    }
    MockAppSpec {
        schema_version: APP_SCHEMA_VERSION,
        name: format!("random-{seed}"),
        initial_state: ids[0].clone(),
        states,
        transitions,
        units,
        load_units: vec![],
        action_cost_ms: rng.gen_range(100..2000),
        reset_cost_ms: rng.gen_range(100..4000),
    }
}


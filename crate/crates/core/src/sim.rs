//! Deterministic simulated web apps.
//!
//! An app is a finite set of states, each a fixed page, and transitions
//! keyed by `(state, element, event)`. Every transition covers a set of
//! abstract code units; a unit of weight `w` is reported as script
//! `unit/<id>` with range `[0, w)`. Time is virtual: each fired event and
//! each reset advances the clock by a fixed cost.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Predictor;
use crate::dataset::label_snapshot;
use crate::engine::coverage::{CoverageMap, IntervalSet};
use crate::engine::{Backend, BackendError, EventPayload};
use crate::model::{
    recompute_structural, BoundingBox, DomSnapshot, ElementAttributes, ElementId, EventSet,
    EventType, FeatureVector,
};
use crate::ranking::{signature_of, StyleSignature};
use crate::synth::styled_element;

pub const APP_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid app: {0}")]
    Invalid(String),
    #[error("state `{0}` has no element {1}")]
    UnknownElement(String, ElementId),
    #[error("cannot parse app: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_box() -> BoundingBox {
    BoundingBox::new(0.0, 0.0, 100.0, 20.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementSpec {
    pub tag: String,
    #[serde(default)]
    pub attributes: ElementAttributes,
    /// `None` for the root. Elements must be listed in document order.
    #[serde(default)]
    pub parent: Option<ElementId>,
    #[serde(default = "default_box")]
    pub bounding_box: BoundingBox,
    /// Computed-style overrides on top of the initial values.
    #[serde(default)]
    pub style: BTreeMap<String, String>,
    /// Events with a handler attached directly to this element.
    #[serde(default)]
    pub listeners: EventSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub id: String,
    pub elements: Vec<ElementSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub state: String,
    pub element: ElementId,
    pub event: EventType,
    pub target: String,
    #[serde(default)]
    pub units: Vec<String>,
    /// Only fires for this mouse button when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub button: Option<u8>,
}

fn default_action_cost() -> u64 {
    1000
}

fn default_reset_cost() -> u64 {
    2000
}

/// Serialized form of a simulated app.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockAppSpec {
    pub schema_version: u32,
    pub name: String,
    pub initial_state: String,
    pub states: Vec<StateSpec>,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
    /// Unit id to weight.
    #[serde(default)]
    pub units: BTreeMap<String, u64>,
    /// Units covered by loading the initial page.
    #[serde(default)]
    pub load_units: Vec<String>,
    #[serde(default = "default_action_cost")]
    pub action_cost_ms: u64,
    #[serde(default = "default_reset_cost")]
    pub reset_cost_ms: u64,
}

impl MockAppSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("app serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Transition {
    target: usize,
    units: Vec<String>,
    button: Option<u8>,
}

/// A validated app with every state's page prebuilt.
#[derive(Clone, Debug)]
pub struct MockApp {
    spec: MockAppSpec,
    snapshots: Vec<DomSnapshot>,
    initial: usize,
    transitions: HashMap<(usize, ElementId, EventType), Vec<Transition>>,
}

pub fn unit_key(unit: &str) -> String {
    format!("unit/{unit}")
}

impl MockApp {
    pub fn new(spec: MockAppSpec) -> Result<Self, SimError> {
        let invalid = |m: String| SimError::Invalid(m);
        if spec.schema_version != APP_SCHEMA_VERSION {
            return Err(invalid(format!("unsupported schema version {}", spec.schema_version)));
        }
        let mut index = HashMap::new();
        for (i, s) in spec.states.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate state `{}`", s.id)));
            }
        }
        let initial = *index
            .get(&spec.initial_state)
            .ok_or_else(|| invalid(format!("unknown initial state `{}`", spec.initial_state)))?;
        let unit_ok = |u: &String| spec.units.contains_key(u);
        if let Some(u) = spec.load_units.iter().find(|u| !unit_ok(u)) {
            return Err(invalid(format!("unknown unit `{u}`")));
        }
        let snapshots = spec
            .states
            .iter()
            .map(|s| build_snapshot(&spec.name, s))
            .collect::<Result<Vec<_>, _>>()?;

        let mut transitions: HashMap<(usize, ElementId, EventType), Vec<Transition>> = HashMap::new();
        for t in &spec.transitions {
            let &state = index
                .get(&t.state)
                .ok_or_else(|| invalid(format!("transition from unknown state `{}`", t.state)))?;
            let &target = index
                .get(&t.target)
                .ok_or_else(|| invalid(format!("transition to unknown state `{}`", t.target)))?;
            let el = snapshots[state]
                .elements
                .get(t.element)
                .ok_or_else(|| SimError::UnknownElement(t.state.clone(), t.element))?;
            let handled = el.direct_listeners.contains(&t.event)
                || (t.event == EventType::Click && el.is_default_actionable);
            if !handled {
                return Err(invalid(format!(
                    "element {} of `{}` does not handle {}",
                    t.element, t.state, t.event
                )));
            }
            if let Some(u) = t.units.iter().find(|u| !unit_ok(u)) {
                return Err(invalid(format!("unknown unit `{u}`")));
            }
            let slot = transitions.entry((state, t.element, t.event)).or_default();
            if slot.iter().any(|x| x.button.is_none() || t.button.is_none() || x.button == t.button) {
                return Err(invalid(format!(
                    "duplicate transition for element {} of `{}` on {}",
                    t.element, t.state, t.event
                )));
            }
            slot.push(Transition {
                target,
                units: t.units.clone(),
                button: t.button,
            });
        }
        Ok(MockApp {
            spec,
            snapshots,
            initial,
            transitions,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::new(MockAppSpec::from_json(&fs::read_to_string(path)?)?)
    }

    pub fn spec(&self) -> &MockAppSpec {
        &self.spec
    }

    pub fn initial_state(&self) -> usize {
        self.initial
    }

    pub fn state_count(&self) -> usize {
        self.snapshots.len()
    }

    pub fn state_name(&self, state: usize) -> &str {
        &self.spec.states[state].id
    }

    /// The labeled page of a state, ground truth included.
    pub fn snapshot(&self, state: usize) -> &DomSnapshot {
        &self.snapshots[state]
    }

    /// Total weight of every unit.
    pub fn total_weight(&self) -> u64 {
        self.spec.units.values().sum()
    }

    pub fn coverage_of<'a>(&self, units: impl IntoIterator<Item = &'a String>) -> CoverageMap {
        units
            .into_iter()
            .map(|u| (unit_key(u), IntervalSet::from_ranges([(0, self.spec.units[u])])))
            .collect()
    }

    /// Next state and covered units of firing `event` on `element` in
    /// `state`. Events without a transition leave the state unchanged.
    pub fn step(
        &self,
        state: usize,
        element: ElementId,
        event: EventType,
        payload: &EventPayload,
    ) -> Result<(usize, &[String]), SimError> {
        if element >= self.snapshots[state].elements.len() {
            return Err(SimError::UnknownElement(self.state_name(state).into(), element));
        }
        let hit = self.transitions.get(&(state, element, event)).and_then(|ts| {
            ts.iter()
                .find(|t| t.button.is_none() || t.button == payload.button)
        });
        Ok(match hit {
            Some(t) => (t.target, &t.units),
            None => (state, &[]),
        })
    }
}

fn build_snapshot(app: &str, state: &StateSpec) -> Result<DomSnapshot, SimError> {
    let invalid = |m: String| SimError::Invalid(format!("state `{}`: {m}", state.id));
    let n = state.elements.len();
    if n == 0 {
        return Err(invalid("no elements".into()));
    }
    let mut children = vec![Vec::new(); n];
    let mut root = None;
    for (i, e) in state.elements.iter().enumerate() {
        match e.parent {
            None if root.is_none() => root = Some(i),
            None => return Err(invalid("more than one root".into())),
            Some(p) if p < i => children[p].push(i),
            Some(p) => return Err(invalid(format!("element {i} has parent {p} listed after it"))),
        }
    }
    let snapshot_id = format!("{app}/{}", state.id);
    let elements = state
        .elements
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut el = styled_element(i, &e.tag, e.attributes.clone(), &e.style, e.bounding_box);
            el.snapshot_id = snapshot_id.clone();
            el.site_id = app.to_string();
            el.direct_listeners = e.listeners.clone();
            el
        })
        .collect();
    let snapshot = DomSnapshot {
        snapshot_id,
        root: root.ok_or_else(|| invalid("no root".into()))?,
        children,
        elements,
        serialized_dom: String::new(),
    };
    let mut snapshot = recompute_structural(snapshot).map_err(|e| invalid(e.to_string()))?;
    if snapshot.preorder() != (0..n).collect::<Vec<_>>() {
        return Err(invalid("elements are not in document order".into()));
    }
    snapshot = label_snapshot(snapshot).map_err(|e| invalid(e.to_string()))?;
    snapshot.serialized_dom = serialize(state, &snapshot);
    Ok(snapshot)
}

/// Canonical markup of a state.
fn serialize(state: &StateSpec, snapshot: &DomSnapshot) -> String {
    fn open(out: &mut String, e: &ElementSpec) {
        write!(out, "<{}", e.tag).unwrap();
        if let Some(h) = &e.attributes.href {
            write!(out, " href=\"{h}\"").unwrap();
        }
        if let Some(t) = &e.attributes.input_type {
            write!(out, " type=\"{t}\"").unwrap();
        }
        if !e.style.is_empty() {
            let css: Vec<String> = e.style.iter().map(|(k, v)| format!("{k}: {v}")).collect();
            write!(out, " style=\"{}\"", css.join("; ")).unwrap();
        }
        out.push('>');
    }
    fn walk(out: &mut String, state: &StateSpec, snapshot: &DomSnapshot, node: ElementId) {
        let e = &state.elements[node];
        open(out, e);
        for &c in &snapshot.children[node] {
            walk(out, state, snapshot, c);
        }
        write!(out, "</{}>", e.tag).unwrap();
    }
    let mut out = format!("<!-- view {} -->", state.id);
    walk(&mut out, state, snapshot, snapshot.root);
    out
}

/// A running session on a simulated app.
#[derive(Clone, Debug)]
pub struct SimBackend {
    app: MockApp,
    state: usize,
    clock_ms: u64,
    covered: CoverageMap,
    fires: usize,
    fail_after: Option<usize>,
}

impl SimBackend {
    pub fn new(app: MockApp) -> Self {
        SimBackend {
            state: app.initial,
            app,
            clock_ms: 0,
            covered: CoverageMap::new(),
            fires: 0,
            fail_after: None,
        }
    }

    /// Makes every fire after the first `n` fail, to exercise partial runs.
    pub fn failing_after(mut self, n: usize) -> Self {
        self.fail_after = Some(n);
        self
    }

    pub fn app(&self) -> &MockApp {
        &self.app
    }

    pub fn current_state(&self) -> usize {
        self.state
    }

    /// Number of `fire` calls that reached the app, replays included.
    pub fn fires(&self) -> usize {
        self.fires
    }

    fn cover(&mut self, units: &[String]) {
        let sample = self.app.coverage_of(units);
        crate::engine::coverage::merge_into(&mut self.covered, &sample);
    }
}

impl Backend for SimBackend {
    fn load_initial(&mut self) -> Result<DomSnapshot, BackendError> {
        self.clock_ms += self.app.spec.reset_cost_ms;
        self.state = self.app.initial;
        let units = self.app.spec.load_units.clone();
        self.cover(&units);
        Ok(self.app.snapshots[self.state].clone())
    }

    fn fire(
        &mut self,
        element: ElementId,
        event: EventType,
        payload: &EventPayload,
    ) -> Result<DomSnapshot, BackendError> {
        if self.fail_after.is_some_and(|n| self.fires >= n) {
            return Err(BackendError::Failure("simulated backend failure".into()));
        }
        let (next, units) = match self.app.step(self.state, element, event, payload) {
            Ok((next, units)) => (next, units.to_vec()),
            Err(_) => return Err(BackendError::Stale(element)),
        };
        self.fires += 1;
        self.clock_ms += self.app.spec.action_cost_ms;
        self.state = next;
        self.cover(&units);
        Ok(self.app.snapshots[next].clone())
    }

    fn coverage(&mut self) -> Result<CoverageMap, BackendError> {
        Ok(self.covered.clone())
    }

    fn elapsed(&self) -> Duration {
        Duration::from_millis(self.clock_ms)
    }
}

/// Perfect predictor for an app: a signature predicts the events handled
/// by any element that looks like it.
#[derive(Clone, Debug, Default)]
pub struct SignatureOracle {
    events: HashMap<StyleSignature, EventSet>,
}

impl SignatureOracle {
    pub fn for_app(app: &MockApp) -> Self {
        let mut events: HashMap<StyleSignature, EventSet> = HashMap::new();
        for s in &app.snapshots {
            for e in &s.elements {
                let mut handled = e.direct_listeners.clone();
                if e.is_default_actionable {
                    handled.insert(EventType::Click);
                }
                events.entry(signature_of(&e.features)).or_default().extend(handled);
            }
        }
        SignatureOracle { events }
    }
}

impl Predictor for SignatureOracle {
    fn predicts(&self, event: EventType, features: &FeatureVector) -> bool {
        self.events
            .get(&signature_of(features))
            .is_some_and(|s| s.contains(&event))
    }

    fn supports(&self, _event: EventType) -> bool {
        true
    }
}

fn element(tag: &str, parent: Option<ElementId>) -> ElementSpec {
    ElementSpec {
        tag: tag.into(),
        attributes: ElementAttributes::default(),
        parent,
        bounding_box: default_box(),
        style: BTreeMap::new(),
        listeners: EventSet::new(),
    }
}

fn link(href: &str, parent: ElementId) -> ElementSpec {
    let mut e = element("a", Some(parent));
    e.attributes.href = Some(href.into());
    e.style.insert("cursor".into(), "pointer".into());
    e
}

/// Two pages: a link on the first leads to the second.
pub fn two_state_anchor() -> MockAppSpec {
    MockAppSpec {
        schema_version: APP_SCHEMA_VERSION,
        name: "two-state-anchor".into(),
        initial_state: "home".into(),
        states: vec![
            StateSpec {
                id: "home".into(),
                elements: vec![element("body", None), element("p", Some(0)), link("/about", 0)],
            },
            StateSpec {
                id: "about".into(),
                elements: vec![element("body", None), element("p", Some(0))],
            },
        ],
        transitions: vec![TransitionSpec {
            state: "home".into(),
            element: 2,
            event: EventType::Click,
            target: "about".into(),
            units: vec!["about".into()],
            button: None,
        }],
        units: [("boot".to_string(), 10), ("about".to_string(), 30)].into(),
        load_units: vec!["boot".into()],
        action_cost_ms: default_action_cost(),
        reset_cost_ms: default_reset_cost(),
    }
}

/// `classes * clones` look-alike `div`s on one page. Clones of a class share
/// their style and their click handler; clicking any clone of class `i`
/// opens the same result page and covers unit `class-i`. Class membership
/// is shuffled by `seed`. The first clone is the page root.
pub fn generate_equivalence_app(classes: usize, clones: usize, seed: u64) -> MockAppSpec {
    assert!(classes >= 1 && clones >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut class_of: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, clones)).collect();
    class_of.shuffle(&mut rng);
    let elements = class_of
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let mut e = element("div", if i == 0 { None } else { Some(0) });
            e.bounding_box = if i == 0 {
                BoundingBox::new(0.0, 0.0, 1000.0, 40.0 * class_of.len() as f64)
            } else {
                BoundingBox::new(10.0, 40.0 * i as f64, 300.0, 30.0)
            };
            e.style.insert("cursor".into(), "pointer".into());
            e.style
                .insert("background-color".into(), format!("rgb({}, {}, 200)", c / 256, c % 256));
            e.listeners.insert(EventType::Click);
            e
        })
        .collect();
    let transitions = class_of
        .iter()
        .enumerate()
        .map(|(i, &c)| TransitionSpec {
            state: "catalog".into(),
            element: i,
            event: EventType::Click,
            target: "result".into(),
            units: vec![format!("class-{c}")],
            button: None,
        })
        .collect();
    MockAppSpec {
        schema_version: APP_SCHEMA_VERSION,
        name: format!("equivalence-{classes}x{clones}"),
        initial_state: "catalog".into(),
        states: vec![
            StateSpec {
                id: "catalog".into(),
                elements,
            },
            StateSpec {
                id: "result".into(),
                elements: vec![element("body", None)],
            },
        ],
        transitions,
        units: (0..classes).map(|c| (format!("class-{c}"), 10)).collect(),
        load_units: Vec::new(),
        action_cost_ms: default_action_cost(),
        reset_cost_ms: default_reset_cost(),
    }
}

/// A chain of menus. Menu `k` has a side button leading to a shared dead
/// end and, except for the last, a next button leading to menu `k + 1`.
pub fn deep_menu(depth: usize) -> MockAppSpec {
    assert!(depth >= 1);
    let button = |parent| element("button", Some(parent));
    let mut states = Vec::new();
    let mut transitions = Vec::new();
    let mut units = BTreeMap::new();
    for k in 0..depth {
        let id = format!("menu-{k}");
        let mut elements = vec![element("body", None), button(0)];
        transitions.push(TransitionSpec {
            state: id.clone(),
            element: 1,
            event: EventType::Click,
            target: "dead-end".into(),
            units: vec![format!("side-{k}")],
            button: None,
        });
        units.insert(format!("side-{k}"), 5);
        if k + 1 < depth {
            elements.push(button(0));
            transitions.push(TransitionSpec {
                state: id.clone(),
                element: 2,
                event: EventType::Click,
                target: format!("menu-{}", k + 1),
                units: vec![format!("menu-{}", k + 1)],
                button: None,
            });
            units.insert(format!("menu-{}", k + 1), 10);
        }
        states.push(StateSpec { id, elements });
    }
    states.push(StateSpec {
        id: "dead-end".into(),
        elements: vec![element("body", None), element("p", Some(0))],
    });
    units.insert("boot".into(), 10);
    MockAppSpec {
        schema_version: APP_SCHEMA_VERSION,
        name: format!("deep-menu-{depth}"),
        initial_state: "menu-0".into(),
        states,
        transitions,
        units,
        load_units: vec!["boot".into()],
        action_cost_ms: default_action_cost(),
        reset_cost_ms: default_reset_cost(),
    }
}

/// Names of the bundled fixtures with their generators.
pub fn bundled_fixtures() -> Vec<(&'static str, MockAppSpec)> {
    vec![
        ("two_state_anchor.json", two_state_anchor()),
        ("equivalence_5x10.json", generate_equivalence_app(5, 10, 7)),
        ("deep_menu_3.json", deep_menu(3)),
    ]
}

/// Units a set of crawls could at most cover: everything reachable from the
/// initial state.
pub fn reachable_units(app: &MockApp) -> BTreeSet<String> {
    let mut seen = vec![false; app.state_count()];
    let mut stack = vec![app.initial];
    seen[app.initial] = true;
    let mut units: BTreeSet<String> = app.spec.load_units.iter().cloned().collect();
    while let Some(s) = stack.pop() {
        for ((from, _, _), ts) in &app.transitions {
            if *from != s {
                continue;
            }
            for t in ts {
                units.extend(t.units.iter().cloned());
                if !seen[t.target] {
                    seen[t.target] = true;
                    stack.push(t.target);
                }
            }
        }
    }
    units
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_validate() {
        for (_, spec) in bundled_fixtures() {
            let app = MockApp::new(spec.clone()).unwrap();
            let back = MockAppSpec::from_json(&spec.to_json()).unwrap();
            assert_eq!(back, spec);
            for s in 0..app.state_count() {
                app.snapshot(s).validate().unwrap();
            }
        }
    }

    #[test]
    fn equivalence_shape() {
        let spec = generate_equivalence_app(5, 10, 1);
        let app = MockApp::new(spec).unwrap();
        let catalog = app.snapshot(0);
        assert_eq!(catalog.elements.len(), 50);
        let sigs: BTreeSet<_> = catalog.elements.iter().map(|e| signature_of(&e.features)).collect();
        assert_eq!(sigs.len(), 5);
        assert_eq!(app.total_weight(), 50);
        assert_eq!(reachable_units(&app).len(), 5);
    }

    #[test]
    fn step_semantics() {
        let app = MockApp::new(two_state_anchor()).unwrap();
        let none = EventPayload::default();
        let (next, units) = app.step(0, 2, EventType::Click, &none).unwrap();
        assert_eq!((app.state_name(next), units), ("about", &["about".to_string()][..]));
        let (same, units) = app.step(0, 1, EventType::Click, &none).unwrap();
        assert_eq!((same, units.len()), (0, 0));
        assert!(matches!(app.step(1, 2, EventType::Click, &none), Err(SimError::UnknownElement(..))));
        assert!(app.snapshot(0).elements[2].is_default_actionable);
    }

    #[test]
    fn backend_clock_and_coverage() {
        let mut b = SimBackend::new(MockApp::new(two_state_anchor()).unwrap());
        b.load_initial().unwrap();
        assert_eq!(b.elapsed(), Duration::from_millis(2000));
        b.fire(2, EventType::Click, &EventPayload::default()).unwrap();
        assert_eq!(b.elapsed(), Duration::from_millis(3000));
        assert_eq!(crate::engine::coverage::weight(&b.coverage().unwrap()), 40);
        assert!(matches!(
            b.fire(2, EventType::Click, &EventPayload::default()),
            Err(BackendError::Stale(2))
        ));
    }

    #[test]
    fn rejects_bad_apps() {
        let mut s = two_state_anchor();
        s.transitions[0].element = 1;
        assert!(matches!(MockApp::new(s), Err(SimError::Invalid(_))));
        let mut s = two_state_anchor();
        s.transitions.push(s.transitions[0].clone());
        assert!(MockApp::new(s).is_err());
        let mut s = two_state_anchor();
        s.states[0].elements[1].parent = Some(2);
        assert!(MockApp::new(s).is_err());
        let mut s = two_state_anchor();
        s.transitions[0].target = "nowhere".into();
        assert!(MockApp::new(s).is_err());
    }

    #[test]
    fn oracle_matches_ground_truth() {
        let app = MockApp::new(generate_equivalence_app(3, 4, 2)).unwrap();
        let oracle = SignatureOracle::for_app(&app);
        for e in &app.snapshot(0).elements {
            assert!(oracle.predicts(EventType::Click, &e.features));
            assert!(!oracle.predicts(EventType::Touchstart, &e.features));
        }
        assert!(!oracle.predicts(EventType::Click, &app.snapshot(1).elements[0].features));
    }
}

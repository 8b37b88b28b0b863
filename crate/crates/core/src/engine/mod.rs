//! The crawl loop: extract candidate actionables for the current state,
//! fire them in strategy order, abstract the resulting DOM into states and
//! record the state-flow graph, the action log and coverage.
//!
//! Exploration is depth-first. When the current state has nothing left to
//! fire, the most recently discovered state with unfired candidates is
//! revisited by resetting the backend and replaying the path that first
//! reached it.

pub mod coverage;
pub mod graph;
mod report;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Predictor;
use crate::model::{DomSnapshot, ElementId, EventType};
use crate::ranking::{signature_of, ExaminationRegistry, StyleSignature};
use coverage::{CoverageLedger, CoverageMap};
use graph::{abstract_state, Edge, StateFlowGraph, StateId, StateNode};

pub use report::{RunReport, SeriesPoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Default clickables, document order.
    #[serde(rename = "DEF")]
    Def,
    /// Every element, seeded random order, click only.
    #[serde(rename = "RND")]
    Rnd,
    /// Predicted click targets, ranked by style novelty.
    #[serde(rename = "STYLEX_CLK")]
    StylexClk,
    /// Every predicted event type, ranked by style novelty.
    #[serde(rename = "STYLEX_EVNTS")]
    StylexEvnts,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Def,
        StrategyKind::Rnd,
        StrategyKind::StylexClk,
        StrategyKind::StylexEvnts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Def => "DEF",
            StrategyKind::Rnd => "RND",
            StrategyKind::StylexClk => "STYLEX_CLK",
            StrategyKind::StylexEvnts => "STYLEX_EVNTS",
        }
    }

    pub fn uses_ranking(self) -> bool {
        matches!(self, StrategyKind::StylexClk | StrategyKind::StylexEvnts)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| EngineError::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub predictor: Option<Arc<dyn Predictor + Send + Sync>>,
    /// Drives RND ordering and random event payloads.
    pub seed: u64,
    /// Registry matching threshold for the STYLEX strategies.
    pub epsilon: f64,
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Strategy")
            .field("kind", &self.kind)
            .field("predictor", &self.predictor.is_some())
            .field("seed", &self.seed)
            .field("epsilon", &self.epsilon)
            .finish()
    }
}

impl Strategy {
    pub fn new(kind: StrategyKind, seed: u64) -> Self {
        Strategy {
            kind,
            predictor: None,
            seed,
            epsilon: 0.0,
        }
    }

    pub fn with_predictor(mut self, predictor: Arc<dyn Predictor + Send + Sync>) -> Self {
        self.predictor = Some(predictor);
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    fn check(&self) -> Result<(), EngineError> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(EngineError::Config(format!("invalid epsilon {}", self.epsilon)));
        }
        let needed: &[EventType] = match self.kind {
            StrategyKind::Def | StrategyKind::Rnd => return Ok(()),
            StrategyKind::StylexClk => &[EventType::Click],
            StrategyKind::StylexEvnts => &EventType::ALL,
        };
        let predictor = self.predictor.as_ref().ok_or_else(|| {
            EngineError::Config(format!("{} needs actionable prediction models", self.kind))
        })?;
        for &e in needed {
            if !predictor.supports(e) {
                return Err(EngineError::Config(format!(
                    "{} needs a `{e}` model",
                    self.kind
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlBudget {
    pub max_actions: Option<usize>,
    #[serde(with = "opt_millis")]
    pub max_wall_time: Option<Duration>,
}

impl Default for CrawlBudget {
    fn default() -> Self {
        CrawlBudget {
            max_actions: Some(100),
            max_wall_time: Some(Duration::from_secs(600)),
        }
    }
}

impl CrawlBudget {
    pub fn actions(n: usize) -> Self {
        CrawlBudget {
            max_actions: Some(n),
            max_wall_time: None,
        }
    }

    pub fn time(limit: Duration) -> Self {
        CrawlBudget {
            max_actions: None,
            max_wall_time: Some(limit),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_actions.is_none() && self.max_wall_time.is_none() {
            return Err(EngineError::Config("a crawl budget needs an action or time bound".into()));
        }
        Ok(())
    }
}

mod opt_millis {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        d.map(|d| d.as_millis() as u64).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<u64>::deserialize(d)?.map(Duration::from_millis))
    }
}

/// Input data some events carry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventPayload {
    /// Mouse button for `mousedown` (0 main, 1 auxiliary, 2 secondary).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub button: Option<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("element {0} is no longer present")]
    Stale(ElementId),
    #[error("backend failure: {0}")]
    Failure(String),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("replay diverged at action {index}: {message}")]
    ReplayDiverged { index: usize, message: String },
}

/// Something the crawler can drive: a simulated app or a live page.
///
/// Snapshots returned to the engine may carry ground-truth listeners; the
/// engine strips them before any strategy sees a snapshot.
pub trait Backend {
    /// Resets the app to its initial page and returns it.
    fn load_initial(&mut self) -> Result<DomSnapshot, BackendError>;
    /// Fires `event` on `element`, waits for the page to settle and returns
    /// the resulting page.
    fn fire(
        &mut self,
        element: ElementId,
        event: EventType,
        payload: &EventPayload,
    ) -> Result<DomSnapshot, BackendError>;
    /// Cumulative coverage of the session so far.
    fn coverage(&mut self) -> Result<CoverageMap, BackendError>;
    /// Time elapsed since the session started.
    fn elapsed(&self) -> Duration;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ActionBudget,
    TimeBudget,
    Exhausted,
    BackendFailure,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub index: usize,
    pub from: StateId,
    pub element_id: ElementId,
    pub event: EventType,
    pub payload: EventPayload,
    pub to: StateId,
    /// Whether `to` was discovered by this action.
    pub discovered: bool,
    /// Cumulative covered weight right after the action.
    pub covered_weight: u64,
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug)]
pub struct CrawlOutcome {
    pub strategy: StrategyKind,
    pub graph: StateFlowGraph,
    pub ledger: CoverageLedger,
    pub actions: Vec<ActionRecord>,
    pub stop: StopReason,
    /// Set when a backend failure cut the crawl short.
    pub failure: Option<String>,
    pub registry: Option<ExaminationRegistry>,
    /// Covered weight before the first action (page load).
    pub baseline_weight: u64,
}

impl CrawlOutcome {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

/// Candidate `(element, event)` pairs of a page for `strategy`, in firing
/// order given the current registry.
pub fn extract_candidates(
    snapshot: &DomSnapshot,
    strategy: &Strategy,
    registry: &ExaminationRegistry,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(ElementId, EventType)>, EngineError> {
    strategy.check()?;
    let order = snapshot.preorder();
    let pairs = match strategy.kind {
        StrategyKind::Def => order
            .into_iter()
            .filter(|&i| snapshot.elements[i].is_default_actionable)
            .map(|i| (i, EventType::Click))
            .collect(),
        StrategyKind::Rnd => {
            let mut all: Vec<(ElementId, EventType)> =
                order.into_iter().map(|i| (i, EventType::Click)).collect();
            all.shuffle(rng);
            all
        }
        StrategyKind::StylexClk | StrategyKind::StylexEvnts => {
            let predictor = strategy.predictor.as_ref().expect("checked above");
            let events: &[EventType] = if strategy.kind == StrategyKind::StylexClk {
                &[EventType::Click]
            } else {
                &EventType::ALL
            };
            let pairs: Vec<(ElementId, EventType)> = order
                .into_iter()
                .flat_map(|i| {
                    let fv = &snapshot.elements[i].features;
                    events
                        .iter()
                        .filter(|&&e| predictor.predicts(e, fv))
                        .map(move |&e| (i, e))
                        .collect::<Vec<_>>()
                })
                .collect();
            let sigs: HashMap<ElementId, StyleSignature> = pairs
                .iter()
                .map(|&(i, _)| (i, signature_of(&snapshot.elements[i].features)))
                .collect();
            registry.rank_with(pairs, |(i, _)| &sigs[i])
        }
    };
    Ok(pairs)
}

/// Depth-first choice of the state to expand: stay while the current state
/// has unfired candidates, otherwise the most recently discovered state
/// that still has some.
#[derive(Clone, Debug, Default)]
pub struct Frontier {
    discovered: Vec<StateId>,
    pending: HashSet<StateId>,
}

impl Frontier {
    pub fn discover(&mut self, id: StateId, has_candidates: bool) {
        if !self.discovered.contains(&id) {
            self.discovered.push(id.clone());
        }
        self.set_pending(&id, has_candidates);
    }

    pub fn set_pending(&mut self, id: &StateId, pending: bool) {
        if pending {
            self.pending.insert(id.clone());
        } else {
            self.pending.remove(id);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn choose_next_state(&self, current: Option<&StateId>) -> Option<StateId> {
        if let Some(c) = current.filter(|c| self.pending.contains(*c)) {
            return Some(c.clone());
        }
        self.discovered
            .iter()
            .rev()
            .find(|s| self.pending.contains(*s))
            .cloned()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Step {
    element_id: ElementId,
    event: EventType,
    payload: EventPayload,
}

enum Navigation {
    Arrived,
    Missed,
    OutOfTime,
}

struct StateEntry {
    signatures: Vec<StyleSignature>,
    remaining: Vec<(ElementId, EventType)>,
    path: Vec<Step>,
}

struct Session<'a, B: Backend> {
    backend: &'a mut B,
    strategy: &'a Strategy,
    budget: CrawlBudget,
    rng: ChaCha8Rng,
    registry: ExaminationRegistry,
    graph: StateFlowGraph,
    frontier: Frontier,
    states: HashMap<StateId, StateEntry>,
    current: Option<StateId>,
    ledger: CoverageLedger,
    actions: Vec<ActionRecord>,
}

impl<'a, B: Backend> Session<'a, B> {
    fn enter(&mut self, snapshot: DomSnapshot, path: Vec<Step>) -> Result<(StateId, bool), EngineError> {
        let view = snapshot.without_ground_truth();
        let id = abstract_state(&view);
        let fresh = !self.states.contains_key(&id);
        if fresh {
            self.graph.add_state(StateNode {
                id: id.clone(),
                snapshot_id: view.snapshot_id.clone(),
            });
            let remaining = extract_candidates(&view, self.strategy, &self.registry, &mut self.rng)?;
            let signatures = if self.strategy.kind.uses_ranking() {
                view.elements.iter().map(|e| signature_of(&e.features)).collect()
            } else {
                Vec::new()
            };
            self.frontier.discover(id.clone(), !remaining.is_empty());
            self.states.insert(
                id.clone(),
                StateEntry {
                    signatures,
                    remaining,
                    path,
                },
            );
        }
        Ok((id, fresh))
    }

    fn out_of_budget(&self) -> Option<StopReason> {
        if self
            .budget
            .max_actions
            .is_some_and(|max| self.actions.len() >= max)
        {
            return Some(StopReason::ActionBudget);
        }
        if self.out_of_time() {
            return Some(StopReason::TimeBudget);
        }
        None
    }

    fn out_of_time(&self) -> bool {
        self.budget
            .max_wall_time
            .is_some_and(|max| self.backend.elapsed() >= max)
    }

    /// Resets the backend and replays the discovery path of `target`.
    fn navigate(&mut self, target: &StateId) -> Result<Navigation, BackendError> {
        let path = self.states[target].path.clone();
        let mut snapshot = self.backend.load_initial()?;
        for step in &path {
            if self.out_of_time() {
                return Ok(Navigation::OutOfTime);
            }
            match self.backend.fire(step.element_id, step.event, &step.payload) {
                Ok(s) => snapshot = s,
                Err(BackendError::Stale(_)) => return Ok(Navigation::Missed),
                Err(e) => return Err(e),
            }
        }
        Ok(if abstract_state(&snapshot) == *target {
            Navigation::Arrived
        } else {
            Navigation::Missed
        })
    }

    fn pick(&mut self, state: &StateId) -> (ElementId, EventType) {
        let entry = self.states.get_mut(state).expect("known state");
        if self.strategy.kind.uses_ranking() {
            let sigs = &entry.signatures;
            let remaining = std::mem::take(&mut entry.remaining);
            entry.remaining = self.registry.rank_with(remaining, |(i, _)| &sigs[*i]);
        }
        let next = entry.remaining.remove(0);
        let has_more = !entry.remaining.is_empty();
        self.frontier.set_pending(state, has_more);
        next
    }

    fn payload_for(&mut self, event: EventType) -> EventPayload {
        match event {
            EventType::Mousedown => EventPayload {
                button: Some(self.rng.gen_range(0..3)),
            },
            _ => EventPayload::default(),
        }
    }

    fn sample_coverage(&mut self) -> Result<(), BackendError> {
        let sample = self.backend.coverage()?;
        self.ledger.record(&sample);
        Ok(())
    }

    fn run(mut self) -> Result<CrawlOutcome, EngineError> {
        let initial = self.backend.load_initial()?;
        self.graph = StateFlowGraph::new(StateNode {
            id: abstract_state(&initial),
            snapshot_id: initial.snapshot_id.clone(),
        });
        let (initial_id, _) = self.enter(initial, Vec::new())?;
        self.current = Some(initial_id);
        self.sample_coverage()?;
        let baseline_weight = self.ledger.covered_weight();

        let mut failure = None;
        let stop = loop {
            if let Some(reason) = self.out_of_budget() {
                break reason;
            }
            let Some(target) = self.frontier.choose_next_state(self.current.as_ref()) else {
                break StopReason::Exhausted;
            };
            if self.current.as_ref() != Some(&target) {
                match self.navigate(&target) {
                    Ok(Navigation::Arrived) => self.current = Some(target),
                    Ok(Navigation::OutOfTime) => break StopReason::TimeBudget,
                    Ok(Navigation::Missed) => {
                        // The path no longer leads there; give the state up.
                        if let Some(entry) = self.states.get_mut(&target) {
                            entry.remaining.clear();
                        }
                        self.frontier.set_pending(&target, false);
                        self.current = None;
                    }
                    Err(e) => {
                        failure = Some(e.to_string());
                        break StopReason::BackendFailure;
                    }
                }
                continue;
            }

            let (element_id, event) = self.pick(&target);
            let payload = self.payload_for(event);
            let snapshot = match self.backend.fire(element_id, event, &payload) {
                Ok(s) => s,
                Err(BackendError::Stale(_)) => continue,
                Err(e) => {
                    failure = Some(e.to_string());
                    break StopReason::BackendFailure;
                }
            };
            if self.strategy.kind.uses_ranking() {
                let sig = self.states[&target].signatures[element_id].clone();
                self.registry.record_examination(&sig);
            }
            let mut path = self.states[&target].path.clone();
            path.push(Step {
                element_id,
                event,
                payload,
            });
            let (to, discovered) = match self.enter(snapshot, path) {
                Ok(r) => r,
                Err(e) => {
                    failure = Some(e.to_string());
                    break StopReason::BackendFailure;
                }
            };
            self.graph.add_edge(Edge {
                from: target.clone(),
                element_id,
                event,
                to: to.clone(),
            });
            if let Err(e) = self.sample_coverage() {
                failure = Some(e.to_string());
            }
            self.actions.push(ActionRecord {
                index: self.actions.len(),
                from: target,
                element_id,
                event,
                payload,
                to: to.clone(),
                discovered,
                covered_weight: self.ledger.covered_weight(),
                elapsed_ms: self.backend.elapsed().as_millis() as u64,
            });
            self.current = Some(to);
            if failure.is_some() {
                break StopReason::BackendFailure;
            }
        };

        Ok(CrawlOutcome {
            strategy: self.strategy.kind,
            graph: self.graph,
            ledger: self.ledger,
            actions: self.actions,
            stop,
            failure,
            registry: self
                .strategy
                .kind
                .uses_ranking()
                .then_some(self.registry),
            baseline_weight,
        })
    }
}

/// Crawls until the budget runs out or no state has unfired candidates.
///
/// Errors are returned only when the crawl cannot start; failures after
/// that end the crawl with partial results and `failure` set.
pub fn crawl<B: Backend>(
    backend: &mut B,
    strategy: &Strategy,
    budget: CrawlBudget,
) -> Result<CrawlOutcome, EngineError> {
    budget.validate()?;
    strategy.check()?;
    let session = Session {
        backend,
        strategy,
        budget,
        rng: ChaCha8Rng::seed_from_u64(strategy.seed),
        registry: ExaminationRegistry::new(strategy.epsilon),
        graph: StateFlowGraph::new(StateNode {
            id: StateId(String::new()),
            snapshot_id: String::new(),
        }),
        frontier: Frontier::default(),
        states: HashMap::new(),
        current: None,
        ledger: CoverageLedger::default(),
        actions: Vec::new(),
    };
    session.run()
}

/// Re-executes a logged crawl and rebuilds its state-flow graph.
pub fn replay_actions<B: Backend>(
    backend: &mut B,
    actions: &[ActionRecord],
) -> Result<StateFlowGraph, EngineError> {
    let initial = backend.load_initial()?;
    let initial_id = abstract_state(&initial);
    let mut graph = StateFlowGraph::new(StateNode {
        id: initial_id.clone(),
        snapshot_id: initial.snapshot_id.clone(),
    });
    let mut paths: HashMap<StateId, Vec<Step>> = HashMap::from([(initial_id.clone(), Vec::new())]);
    let mut current = initial_id;
    for a in actions {
        let diverged = |message: String| EngineError::ReplayDiverged {
            index: a.index,
            message,
        };
        if current != a.from {
            let path = paths
                .get(&a.from)
                .cloned()
                .ok_or_else(|| diverged(format!("state {} was never reached", a.from.short())))?;
            let mut snap = backend.load_initial()?;
            for s in &path {
                snap = backend.fire(s.element_id, s.event, &s.payload)?;
            }
            if abstract_state(&snap) != a.from {
                return Err(diverged("navigation reached a different state".into()));
            }
        }
        let snap = backend.fire(a.element_id, a.event, &a.payload)?;
        let to = abstract_state(&snap);
        if to != a.to {
            return Err(diverged(format!("expected {}, reached {}", a.to.short(), to.short())));
        }
        if graph.add_state(StateNode {
            id: to.clone(),
            snapshot_id: snap.snapshot_id.clone(),
        }) {
            let mut path = paths[&a.from].clone();
            path.push(Step {
                element_id: a.element_id,
                event: a.event,
                payload: a.payload,
            });
            paths.insert(to.clone(), path);
        }
        graph.add_edge(Edge {
            from: a.from.clone(),
            element_id: a.element_id,
            event: a.event,
            to: to.clone(),
        });
        current = to;
    }
    Ok(graph)
}

//! State abstraction and the state-flow graph.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{DomSnapshot, ElementId, EventType};

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

/// SHA-256 of the trimmed serialized DOM, hex encoded.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub String);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl StateId {
    pub fn short(&self) -> &str {
        &self.0[..self.0.len().min(12)]
    }
}

pub fn hash_dom(serialized_dom: &str) -> StateId {
    StateId(hex::encode(Sha256::digest(serialized_dom.trim().as_bytes())))
}

pub fn abstract_state(snapshot: &DomSnapshot) -> StateId {
    hash_dom(&snapshot.serialized_dom)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateNode {
    pub id: StateId,
    /// Identifier of the snapshot the state was first seen in.
    pub snapshot_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: StateId,
    pub element_id: ElementId,
    pub event: EventType,
    pub to: StateId,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge {index} references unknown state {state}")]
    DanglingEdge { index: usize, state: StateId },
    #[error("state {0} appears twice")]
    DuplicateState(StateId),
    #[error("initial state {0} is not in the graph")]
    MissingInitial(StateId),
    #[error("cannot load graph: {0}")]
    Load(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Discovered states in discovery order and every fired transition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateFlowGraph {
    pub initial: StateId,
    pub states: Vec<StateNode>,
    pub edges: Vec<Edge>,
}

impl StateFlowGraph {
    pub fn new(initial: StateNode) -> Self {
        StateFlowGraph {
            initial: initial.id.clone(),
            states: vec![initial],
            edges: Vec::new(),
        }
    }

    pub fn contains(&self, id: &StateId) -> bool {
        self.states.iter().any(|s| &s.id == id)
    }

    /// Adds the state if it is new; returns whether it was.
    pub fn add_state(&mut self, node: StateNode) -> bool {
        if self.contains(&node.id) {
            false
        } else {
            self.states.push(node);
            true
        }
    }

    pub fn add_edge(&mut self, edge: Edge) {
        debug_assert!(self.contains(&edge.from) && self.contains(&edge.to));
        self.edges.push(edge);
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let mut seen = BTreeMap::new();
        for s in &self.states {
            if seen.insert(&s.id, ()).is_some() {
                return Err(GraphError::DuplicateState(s.id.clone()));
            }
        }
        if !seen.contains_key(&self.initial) {
            return Err(GraphError::MissingInitial(self.initial.clone()));
        }
        for (index, e) in self.edges.iter().enumerate() {
            for state in [&e.from, &e.to] {
                if !seen.contains_key(state) {
                    return Err(GraphError::DanglingEdge {
                        index,
                        state: state.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Graphviz rendering: nodes are states labeled by DOM hash prefix,
    /// edges are labeled `element:event`.
    pub fn to_dot(&self) -> String {
        let index: BTreeMap<&StateId, usize> =
            self.states.iter().enumerate().map(|(i, s)| (&s.id, i)).collect();
        let mut out = String::from("digraph stateflow {\n");
        for (i, s) in self.states.iter().enumerate() {
            let shape = if s.id == self.initial { "doublecircle" } else { "circle" };
            writeln!(
                out,
                "  s{i} [label=\"s{i}\\n{}\", shape={shape}, tooltip=\"{}\"];",
                s.id.short(),
                s.id
            )
            .unwrap();
        }
        for e in &self.edges {
            writeln!(
                out,
                "  s{} -> s{} [label=\"{}:{}\"];",
                index[&e.from], index[&e.to], e.element_id, e.event
            )
            .unwrap();
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            schema_version: GRAPH_SCHEMA_VERSION,
            graph: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| GraphError::Load(e.to_string()))?;
        if file.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(GraphError::Load(format!(
                "unsupported schema version {}",
                file.schema_version
            )));
        }
        file.graph.validate()?;
        Ok(file.graph)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    schema_version: u32,
    #[serde(flatten)]
    graph: StateFlowGraph,
}

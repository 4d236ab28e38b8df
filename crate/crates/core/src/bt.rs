//! A small behavior-tree interpreter.
//!
//! Trees are plain data ([`TreeSpec`]); leaf behavior is supplied at tick
//! time through the [`Leaves`] trait, so the same description can be ticked
//! against scripted or live handlers. The engine keeps no state between
//! ticks: everything a tree needs lives in the [`Blackboard`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeStatus {
    Success,
    Failure,
    Running,
}

/// Declarative node description, as found in tree files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeSpec {
    Selector { name: String, children: Vec<NodeSpec> },
    Sequence { name: String, children: Vec<NodeSpec> },
    Condition { name: String, predicate: String },
    Action { name: String, effect: String },
}

impl NodeSpec {
    pub fn name(&self) -> &str {
        match self {
            NodeSpec::Selector { name, .. }
            | NodeSpec::Sequence { name, .. }
            | NodeSpec::Condition { name, .. }
            | NodeSpec::Action { name, .. } => name,
        }
    }

    pub fn children(&self) -> &[NodeSpec] {
        match self {
            NodeSpec::Selector { children, .. } | NodeSpec::Sequence { children, .. } => children,
            _ => &[],
        }
    }

    fn walk<'a>(&'a self, out: &mut Vec<&'a NodeSpec>) {
        out.push(self);
        for c in self.children() {
            c.walk(out);
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("duplicate node name '{0}'")]
    DuplicateName(String),
    #[error("empty composite '{0}'")]
    EmptyComposite(String),
    #[error("node with empty name")]
    EmptyName,
    #[error("leaf '{node}' references unknown {what} '{reference}'")]
    UnknownReference {
        node: String,
        what: &'static str,
        reference: String,
    },
    #[error("malformed tree description: {0}")]
    Parse(String),
}

/// A structurally validated tree: unique names, no empty composites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct TreeSpec {
    root: NodeSpec,
}

/// Validates a description and wraps it as a [`TreeSpec`].
pub fn build_tree(root: NodeSpec) -> Result<TreeSpec, TreeError> {
    let mut nodes = Vec::new();
    root.walk(&mut nodes);
    let mut seen = BTreeSet::new();
    for node in nodes {
        if node.name().trim().is_empty() {
            return Err(TreeError::EmptyName);
        }
        if !seen.insert(node.name()) {
            return Err(TreeError::DuplicateName(node.name().to_string()));
        }
        if matches!(node, NodeSpec::Selector { children, .. } | NodeSpec::Sequence { children, .. } if children.is_empty())
        {
            return Err(TreeError::EmptyComposite(node.name().to_string()));
        }
    }
    Ok(TreeSpec { root })
}

impl TreeSpec {
    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let root: NodeSpec = serde_json::from_str(text).map_err(|e| TreeError::Parse(e.to_string()))?;
        build_tree(root)
    }

    pub fn root(&self) -> &NodeSpec {
        &self.root
    }

    pub fn nodes(&self) -> Vec<&NodeSpec> {
        let mut out = Vec::new();
        self.root.walk(&mut out);
        out
    }

    /// Checks every leaf reference against the names a handler understands.
    pub fn check_references(&self, predicates: &[&str], effects: &[&str]) -> Result<(), TreeError> {
        for node in self.nodes() {
            match node {
                NodeSpec::Condition { name, predicate } if !predicates.contains(&predicate.as_str()) => {
                    return Err(TreeError::UnknownReference {
                        node: name.clone(),
                        what: "predicate",
                        reference: predicate.clone(),
                    });
                }
                NodeSpec::Action { name, effect } if !effects.contains(&effect.as_str()) => {
                    return Err(TreeError::UnknownReference {
                        node: name.clone(),
                        what: "effect",
                        reference: effect.clone(),
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BoardError {
    #[error("blackboard key '{0}' is not set")]
    Missing(String),
    #[error("blackboard key '{key}' already written by '{first}' this tick, rejected write from '{second}'")]
    WriterConflict { key: String, first: String, second: String },
    #[error("blackboard key '{0}' holds a value of the wrong type")]
    WrongType(String),
}

/// Key-value state shared by the nodes of one tree.
///
/// Each key may be written by at most one leaf reference per tick; reads of
/// absent keys are explicit misses.
#[derive(Debug, Clone)]
pub struct Blackboard<V> {
    entries: BTreeMap<String, V>,
    writers: BTreeMap<String, String>,
    current_writer: String,
}

impl<V> Default for Blackboard<V> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
            writers: BTreeMap::new(),
            current_writer: "external".to_string(),
        }
    }
}

impl<V> Blackboard<V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Result<&V, BoardError> {
        self.entries.get(key).ok_or_else(|| BoardError::Missing(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn set(&mut self, key: &str, value: V) -> Result<(), BoardError> {
        match self.writers.get(key) {
            Some(first) if *first != self.current_writer => {
                return Err(BoardError::WriterConflict {
                    key: key.to_string(),
                    first: first.clone(),
                    second: self.current_writer.clone(),
                })
            }
            _ => {}
        }
        self.writers.insert(key.to_string(), self.current_writer.clone());
        self.entries.insert(key.to_string(), value);
        Ok(())
    }

    pub fn remove(&mut self, key: &str) -> Option<V> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn begin_tick(&mut self) {
        self.writers.clear();
    }

    fn set_writer(&mut self, writer: &str) {
        self.current_writer.clear();
        self.current_writer.push_str(writer);
    }
}

/// Error raised by a leaf; the engine records it and maps the leaf to Failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafError(pub String);

impl LeafError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for LeafError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for LeafError {}

impl From<BoardError> for LeafError {
    fn from(e: BoardError) -> Self {
        Self(e.to_string())
    }
}

/// Leaf behavior, looked up by the predicate/effect names in the tree.
pub trait Leaves<V> {
    fn condition(&mut self, predicate: &str, board: &mut Blackboard<V>) -> Result<bool, LeafError>;
    fn action(&mut self, effect: &str, board: &mut Blackboard<V>) -> Result<NodeStatus, LeafError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub node: String,
    pub order: usize,
    pub status: NodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Nodes visited during one tick, in entry order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TickTrace {
    pub events: Vec<TraceEvent>,
}

impl TickTrace {
    pub fn status_of(&self, node: &str) -> Option<NodeStatus> {
        self.events.iter().find(|e| e.node == node).map(|e| e.status)
    }

    pub fn visited(&self, node: &str) -> bool {
        self.status_of(node).is_some()
    }

    pub fn node_names(&self) -> Vec<&str> {
        self.events.iter().map(|e| e.node.as_str()).collect()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Ticks the tree once from the root.
pub fn tick<V>(tree: &TreeSpec, board: &mut Blackboard<V>, leaves: &mut dyn Leaves<V>) -> (NodeStatus, TickTrace) {
    board.begin_tick();
    let mut trace = TickTrace::default();
    let status = visit(&tree.root, board, leaves, &mut trace);
    board.set_writer("external");
    (status, trace)
}

fn visit<V>(node: &NodeSpec, board: &mut Blackboard<V>, leaves: &mut dyn Leaves<V>, trace: &mut TickTrace) -> NodeStatus {
    let slot = trace.events.len();
    trace.events.push(TraceEvent {
        node: node.name().to_string(),
        order: slot,
        status: NodeStatus::Failure,
        error: None,
    });

    let (status, error) = match node {
        NodeSpec::Selector { children, .. } => {
            let mut status = NodeStatus::Failure;
            for child in children {
                match visit(child, board, leaves, trace) {
                    NodeStatus::Failure => continue,
                    other => {
                        status = other;
                        break;
                    }
                }
            }
            (status, None)
        }
        NodeSpec::Sequence { children, .. } => {
            let mut status = NodeStatus::Success;
            for child in children {
                match visit(child, board, leaves, trace) {
                    NodeStatus::Success => continue,
                    other => {
                        status = other;
                        break;
                    }
                }
            }
            (status, None)
        }
        NodeSpec::Condition { predicate, .. } => {
            board.set_writer(predicate);
            match leaves.condition(predicate, board) {
                Ok(true) => (NodeStatus::Success, None),
                Ok(false) => (NodeStatus::Failure, None),
                Err(e) => (NodeStatus::Failure, Some(e.0)),
            }
        }
        NodeSpec::Action { effect, .. } => {
            board.set_writer(effect);
            match leaves.action(effect, board) {
                Ok(s) => (s, None),
                Err(e) => (NodeStatus::Failure, Some(e.0)),
            }
        }
    };

    trace.events[slot].status = status;
    trace.events[slot].error = error;
    status
}

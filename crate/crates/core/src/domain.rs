//! Shared vocabulary: actions, tasks, ingredients, utterances and verdicts,
//! plus the pure validation rules over them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper bound on any instantiated quantity.
pub const DEFAULT_QUANTITY_LIMIT: u32 = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("action catalog is empty")]
    EmptyCatalog,
    #[error("duplicate action name '{0}'")]
    DuplicateAction(String),
    #[error("action '{action}' declares parameter '{param}' twice")]
    DuplicateParam { action: String, param: String },
    #[error("duplicate task name '{0}'")]
    DuplicateTask(String),
    #[error("task name must not be empty")]
    EmptyTaskName,
    #[error("quantity limit must be at least 1")]
    ZeroQuantityLimit,
    #[error("utterance text must not be empty")]
    EmptyUtterance,
}

/// Lowercases, trims and collapses inner whitespace.
pub fn normalize_name(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Ingredient,
    Quantity,
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub description: String,
}

impl ActionSpec {
    pub fn signature(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| {
                let kind = match p.kind {
                    ParamKind::Ingredient => "ingredient",
                    ParamKind::Quantity => "quantity",
                    ParamKind::FreeText => "text",
                };
                format!("{}: {}", p.name, kind)
            })
            .collect();
        format!("{}({})", self.name, params.join(", "))
    }
}

/// The set of actions the robot can perform, keyed by normalized name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ActionSpec>", into = "Vec<ActionSpec>")]
pub struct ActionCatalog {
    specs: BTreeMap<String, ActionSpec>,
}

impl ActionCatalog {
    pub fn new(specs: Vec<ActionSpec>) -> Result<Self, DomainError> {
        if specs.is_empty() {
            return Err(DomainError::EmptyCatalog);
        }
        let mut map = BTreeMap::new();
        for mut spec in specs {
            spec.name = normalize_name(&spec.name);
            let mut seen = BTreeSet::new();
            for p in &spec.params {
                if !seen.insert(p.name.clone()) {
                    return Err(DomainError::DuplicateParam {
                        action: spec.name.clone(),
                        param: p.name.clone(),
                    });
                }
            }
            if map.contains_key(&spec.name) {
                return Err(DomainError::DuplicateAction(spec.name));
            }
            map.insert(spec.name.clone(), spec);
        }
        Ok(Self { specs: map })
    }

    pub fn get(&self, name: &str) -> Option<&ActionSpec> {
        self.specs.get(&normalize_name(name))
    }

    pub fn specs(&self) -> impl Iterator<Item = &ActionSpec> {
        self.specs.values()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

impl TryFrom<Vec<ActionSpec>> for ActionCatalog {
    type Error = DomainError;

    fn try_from(specs: Vec<ActionSpec>) -> Result<Self, Self::Error> {
        Self::new(specs)
    }
}

impl From<ActionCatalog> for Vec<ActionSpec> {
    fn from(catalog: ActionCatalog) -> Self {
        catalog.specs.into_values().collect()
    }
}

/// A single argument value on the wire: an ingredient/free text or an integer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Int(i64),
    Text(String),
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Int(v) => write!(f, "{v}"),
            ArgValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCall {
    pub action: String,
    #[serde(default)]
    pub args: BTreeMap<String, ArgValue>,
}

impl ActionCall {
    pub fn new(action: impl Into<String>) -> Self {
        Self {
            action: action.into(),
            args: BTreeMap::new(),
        }
    }

    pub fn arg(mut self, name: impl Into<String>, value: ArgValue) -> Self {
        self.args.insert(name.into(), value);
        self
    }

    /// Human-readable rendering, e.g. `fry (ingredient: bacon, quantity: 2)`.
    pub fn describe(&self) -> String {
        let verb = self.action.replace('_', " ");
        if self.args.is_empty() {
            return verb;
        }
        let args: Vec<String> = self.args.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        format!("{verb} ({})", args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub task_name: String,
    pub steps: Vec<ActionCall>,
}

impl TaskSequence {
    pub fn to_wire_json(&self) -> String {
        serde_json::to_string(self).expect("task sequence serializes")
    }
}

/// Known tasks, in a stable order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TaskSequence>", into = "Vec<TaskSequence>")]
pub struct TaskLibrary {
    tasks: Vec<TaskSequence>,
}

impl TaskLibrary {
    pub fn new(tasks: Vec<TaskSequence>) -> Result<Self, DomainError> {
        let mut seen = BTreeSet::new();
        for t in &tasks {
            let key = normalize_name(&t.task_name);
            if key.is_empty() {
                return Err(DomainError::EmptyTaskName);
            }
            if !seen.insert(key) {
                return Err(DomainError::DuplicateTask(t.task_name.clone()));
            }
        }
        Ok(Self { tasks })
    }

    pub fn tasks(&self) -> &[TaskSequence] {
        &self.tasks
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tasks.iter().map(|t| t.task_name.as_str())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        lookup_task(name, self).is_some()
    }

    /// Adds a task, rejecting duplicate names.
    pub fn push(&mut self, task: TaskSequence) -> Result<(), DomainError> {
        if normalize_name(&task.task_name).is_empty() {
            return Err(DomainError::EmptyTaskName);
        }
        if self.contains(&task.task_name) {
            return Err(DomainError::DuplicateTask(task.task_name));
        }
        self.tasks.push(task);
        Ok(())
    }

    /// Runs [`validate_action_call`] over every step of every task.
    pub fn self_check(&self, catalog: &ActionCatalog, inventory: &Inventory) -> Vec<(String, usize, Diagnostic)> {
        let mut out = Vec::new();
        for task in &self.tasks {
            if task.steps.is_empty() {
                out.push((
                    task.task_name.clone(),
                    0,
                    Diagnostic::new(DiagnosticKind::Empty, "task has no steps"),
                ));
            }
            for (i, step) in task.steps.iter().enumerate() {
                if let Err(diags) = validate_action_call(step, catalog, inventory) {
                    out.extend(diags.into_iter().map(|d| (task.task_name.clone(), i, d)));
                }
            }
        }
        out
    }
}

impl TryFrom<Vec<TaskSequence>> for TaskLibrary {
    type Error = DomainError;

    fn try_from(tasks: Vec<TaskSequence>) -> Result<Self, Self::Error> {
        Self::new(tasks)
    }
}

impl From<TaskLibrary> for Vec<TaskSequence> {
    fn from(lib: TaskLibrary) -> Self {
        lib.tasks
    }
}

/// Exact lookup after case and whitespace normalization.
pub fn lookup_task<'a>(name: &str, library: &'a TaskLibrary) -> Option<&'a TaskSequence> {
    let key = normalize_name(name);
    if key.is_empty() {
        return None;
    }
    library
        .tasks
        .iter()
        .find(|t| normalize_name(&t.task_name) == key)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    ingredients: BTreeSet<String>,
    quantity_limit: u32,
}

impl Inventory {
    pub fn new<I, S>(ingredients: I, quantity_limit: u32) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if quantity_limit == 0 {
            return Err(DomainError::ZeroQuantityLimit);
        }
        Ok(Self {
            ingredients: ingredients
                .into_iter()
                .map(|s| normalize_name(s.as_ref()))
                .filter(|s| !s.is_empty())
                .collect(),
            quantity_limit,
        })
    }

    pub fn contains(&self, ingredient: &str) -> bool {
        self.ingredients.contains(&normalize_name(ingredient))
    }

    pub fn ingredients(&self) -> impl Iterator<Item = &str> {
        self.ingredients.iter().map(String::as_str)
    }

    pub fn quantity_limit(&self) -> u32 {
        self.quantity_limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Parse,
    UnknownAction,
    UnknownIngredient,
    BadQuantity,
    ArgMismatch,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub detail: String,
}

impl Diagnostic {
    pub fn new(kind: DiagnosticKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

pub type ValidationResult = Result<(), Vec<Diagnostic>>;

/// Checks one call against the catalog and inventory.
///
/// Diagnostics come out in rule order: action membership, argument shape,
/// ingredient membership, quantity bounds. An unknown action stops there
/// since there is no parameter list to compare against.
pub fn validate_action_call(call: &ActionCall, catalog: &ActionCatalog, inventory: &Inventory) -> ValidationResult {
    let Some(spec) = catalog.get(&call.action) else {
        return Err(vec![Diagnostic::new(
            DiagnosticKind::UnknownAction,
            format!("unknown action '{}'", call.action),
        )]);
    };

    let mut diags = Vec::new();

    for p in &spec.params {
        if !call.args.contains_key(&p.name) {
            diags.push(Diagnostic::new(
                DiagnosticKind::ArgMismatch,
                format!("missing arg '{}' for action '{}'", p.name, spec.name),
            ));
        }
    }
    for key in call.args.keys() {
        if !spec.params.iter().any(|p| &p.name == key) {
            diags.push(Diagnostic::new(
                DiagnosticKind::ArgMismatch,
                format!("extra arg '{}' for action '{}'", key, spec.name),
            ));
        }
    }
    for p in &spec.params {
        if let (ParamKind::Ingredient | ParamKind::FreeText, Some(ArgValue::Int(v))) = (p.kind, call.args.get(&p.name)) {
            diags.push(Diagnostic::new(
                DiagnosticKind::ArgMismatch,
                format!("arg '{}' expects text, got integer {v}", p.name),
            ));
        }
    }

    for p in spec.params.iter().filter(|p| p.kind == ParamKind::Ingredient) {
        if let Some(ArgValue::Text(name)) = call.args.get(&p.name) {
            if !inventory.contains(name) {
                diags.push(Diagnostic::new(
                    DiagnosticKind::UnknownIngredient,
                    format!("unknown ingredient '{}'", normalize_name(name)),
                ));
            }
        }
    }

    let limit = i64::from(inventory.quantity_limit());
    for p in spec.params.iter().filter(|p| p.kind == ParamKind::Quantity) {
        match call.args.get(&p.name) {
            Some(ArgValue::Int(q)) if *q <= 0 => diags.push(Diagnostic::new(
                DiagnosticKind::BadQuantity,
                format!("non-positive quantity {q} for '{}'", p.name),
            )),
            Some(ArgValue::Int(q)) if *q > limit => diags.push(Diagnostic::new(
                DiagnosticKind::BadQuantity,
                format!("quantity exceeds limit: {q} > {limit}"),
            )),
            Some(ArgValue::Text(s)) => diags.push(Diagnostic::new(
                DiagnosticKind::BadQuantity,
                format!("quantity '{}' is not a positive integer", s),
            )),
            _ => {}
        }
    }

    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Robot,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::User => "USER",
            Role::Robot => "ROBOT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub text: String,
    pub turn_index: u32,
    pub timestamp: DateTime<Utc>,
}

/// Append-only record of the dialogue.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationHistory {
    utterances: Vec<Utterance>,
}

impl ConversationHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an utterance stamped with the next turn index and returns that index.
    pub fn append(&mut self, role: Role, text: impl Into<String>, timestamp: DateTime<Utc>) -> Result<u32, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyUtterance);
        }
        let turn_index = self.utterances.last().map_or(0, |u| u.turn_index + 1);
        self.utterances.push(Utterance {
            role,
            text,
            turn_index,
            timestamp,
        });
        Ok(turn_index)
    }

    pub fn push_now(&mut self, role: Role, text: impl Into<String>) -> Result<u32, DomainError> {
        self.append(role, text, Utc::now())
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn last(&self) -> Option<&Utterance> {
        self.utterances.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Clear,
    Ambiguous,
    Modification,
    Infeasible,
}

impl Verdict {
    pub const ALL: [Verdict; 4] = [
        Verdict::Clear,
        Verdict::Ambiguous,
        Verdict::Modification,
        Verdict::Infeasible,
    ];
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Verdict::Clear => "Clear",
            Verdict::Ambiguous => "Ambiguous",
            Verdict::Modification => "Modification",
            Verdict::Infeasible => "Infeasible",
        })
    }
}

/// A verdict; `matched_task` is present exactly when the verdict is Clear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    matched_task: Option<String>,
}

impl Classification {
    pub fn clear(task: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Clear,
            matched_task: Some(task.into()),
        }
    }

    pub fn ambiguous() -> Self {
        Self::other(Verdict::Ambiguous)
    }

    pub fn modification() -> Self {
        Self::other(Verdict::Modification)
    }

    pub fn infeasible() -> Self {
        Self::other(Verdict::Infeasible)
    }

    fn other(verdict: Verdict) -> Self {
        debug_assert_ne!(verdict, Verdict::Clear);
        Self {
            verdict,
            matched_task: None,
        }
    }

    pub fn verdict(&self) -> Verdict {
        self.verdict
    }

    pub fn matched_task(&self) -> Option<&str> {
        self.matched_task.as_deref()
    }
}

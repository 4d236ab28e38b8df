use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{lookup_task, normalize_name, TaskLibrary, TaskSequence, Verdict};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseSource {
    /// One of the example rows given with the original method.
    Published,
    /// Written for this dataset.
    #[default]
    Authored,
}

/// Per-case hints for building the canonical rule table. They describe
/// what a well-behaved model answers at the points where the gold category
/// alone does not determine it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptHints {
    /// Answer of the known-task check (and, for ambiguous cases, whether the
    /// ambiguity check lets the request through to the task selector).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<bool>,
    /// Infeasibility reason given by the safety check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followup: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    pub id: String,
    pub category: Verdict,
    pub instruction: String,
    pub expected_behavior: String,
    /// User replies fed in order whenever the system asks something.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scripted_followups: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sequence: Option<TaskSequence>,
    #[serde(default)]
    pub source: CaseSource,
    /// Golden trace file stem for the first turn, if this case has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden_trace: Option<String>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub script: ScriptHints,
}

fn is_default(h: &ScriptHints) -> bool {
    *h == ScriptHints::default()
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
    #[error("case file contains no cases")]
    Empty,
    #[error("line {line}: duplicate case id '{id}'")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: case '{id}': {message}")]
    Invalid { line: usize, id: String, message: String },
}

/// 1-based line of the `"id": "<id>"` entry, or 0 when it cannot be found.
fn line_of_id(text: &str, id: &str, occurrence: usize) -> usize {
    let needle = serde_json::to_string(id).expect("string serializes");
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim_start();
            t.starts_with("\"id\"") && t.contains(&needle)
        })
        .nth(occurrence)
        .map_or(0, |(i, _)| i + 1)
}

fn check_case(case: &CaseRecord) -> Result<(), String> {
    if case.id.trim().is_empty() {
        return Err("empty id".into());
    }
    if case.instruction.trim().is_empty() {
        return Err("empty instruction".into());
    }
    match case.category {
        Verdict::Clear if case.gold_task.is_none() => Err("Clear cases need gold_task".into()),
        Verdict::Modification if case.gold_sequence.is_none() => Err("Modification cases need gold_sequence".into()),
        Verdict::Modification if case.scripted_followups.is_empty() => {
            Err("Modification cases need a confirmation reply in scripted_followups".into())
        }
        Verdict::Infeasible if case.gold_task.is_some() || case.gold_sequence.is_some() => {
            Err("Infeasible cases cannot carry gold_task or gold_sequence".into())
        }
        Verdict::Ambiguous if case.gold_task.is_some() && case.scripted_followups.is_empty() => {
            Err("an Ambiguous case with gold_task needs the clarifying reply in scripted_followups".into())
        }
        _ => Ok(()),
    }
}

/// Parses a case file. Every error names a line.
pub fn parse_cases(text: &str) -> Result<Vec<CaseRecord>, CaseError> {
    let cases: Vec<CaseRecord> = serde_json::from_str(text).map_err(|e| CaseError::Schema {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if cases.is_empty() {
        return Err(CaseError::Empty);
    }
    let mut seen = BTreeSet::new();
    for case in &cases {
        if !seen.insert(case.id.as_str()) {
            return Err(CaseError::DuplicateId {
                line: line_of_id(text, &case.id, 1),
                id: case.id.clone(),
            });
        }
        check_case(case).map_err(|message| CaseError::Invalid {
            line: line_of_id(text, &case.id, 0),
            id: case.id.clone(),
            message,
        })?;
    }
    Ok(cases)
}

pub fn load_cases(path: &Path) -> Result<Vec<CaseRecord>, CaseError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_cases(&text)
}

/// Problems with cases relative to a task library (unknown gold tasks or candidates).
pub fn check_against_library(cases: &[CaseRecord], library: &TaskLibrary) -> Vec<String> {
    let mut problems = Vec::new();
    for case in cases {
        if let Some(t) = &case.gold_task {
            if lookup_task(t, library).is_none() {
                problems.push(format!("case '{}': gold_task '{t}' is not in the library", case.id));
            }
        }
        for c in case.script.candidates.iter().flatten() {
            if !library.contains(&normalize_name(c)) {
                problems.push(format!("case '{}': candidate '{c}' is not in the library", case.id));
            }
        }
    }
    problems
}

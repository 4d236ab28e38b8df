//! Replaying a case dataset against either system and scoring the result.

pub mod canonical;
pub mod cases;
pub mod detect;
pub mod report;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{BackendConfig, ConfigError, Kitchen};
use crate::llm::{ChatBackend, RemoteBackend, ScriptError, ScriptedBackend};
use crate::orchestrator::{Engine, ReplyKind, SystemKind};

pub use canonical::{canonical_backend, canonical_rules, UNSCRIPTED};
pub use cases::{load_cases, parse_cases, CaseError, CaseRecord, CaseSource, ScriptHints};
pub use detect::{detect_taxonomy_errors, TaxonomyError, TaxonomyKind, Transcript};
pub use report::{emit_report, CaseOutcome, CaseReport, Format, RunReport};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no cases to run")]
    NoCases,
    #[error(transparent)]
    Cases(#[from] CaseError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Replays one case in a fresh session. Scripted followups are fed one at a
/// time, and only while the robot is asking something.
pub fn run_case(system: SystemKind, case: &CaseRecord, engine: &Engine, backend: &dyn ChatBackend) -> Transcript {
    let mut session = engine.new_session(system);
    let mut error = None;
    let mut followups = case.scripted_followups.iter();
    let mut next = Some(case.instruction.as_str());
    while let Some(text) = next.take() {
        match engine.run_turn(&mut session, text, backend) {
            Ok(reply) => {
                if matches!(reply.kind, ReplyKind::ClarificationQuestion | ReplyKind::ConfirmationRequest) {
                    next = followups.next().map(String::as_str);
                }
            }
            Err(e) => error = Some(e.to_string()),
        }
    }
    Transcript {
        system,
        turns: session.turns,
        executed: session.executed,
        history: session.history,
        error,
    }
}

/// A case passes when the first verdict matches the gold category (tree
/// system only), the right thing was executed and no taxonomy error fired.
pub fn score_case(transcript: &Transcript, case: &CaseRecord, kitchen: &Kitchen) -> CaseReport {
    let observed = transcript.first_verdict();
    let mut failures = Vec::new();
    if let Some(e) = &transcript.error {
        failures.push(format!("replay error: {e}"));
    }
    if transcript.system == SystemKind::BtAction && observed != Some(case.category) {
        failures.push(format!(
            "verdict {} does not match {}",
            observed.map_or("none".to_string(), |v| v.to_string()),
            case.category
        ));
    }
    if let Err(e) = detect::execution_as_expected(transcript, case, kitchen) {
        failures.push(e);
    }
    let taxonomy_errors = detect_taxonomy_errors(transcript, case, kitchen);
    let outcome = if transcript.error.is_some() {
        CaseOutcome::Error
    } else if failures.is_empty() && taxonomy_errors.is_empty() {
        CaseOutcome::Pass
    } else {
        CaseOutcome::Fail
    };
    CaseReport {
        id: case.id.clone(),
        category: case.category,
        observed_verdict: observed,
        outcome,
        failures,
        taxonomy_errors,
        turn_count: transcript.turns.len(),
        turns: transcript.turns.iter().map(Into::into).collect(),
        executed: transcript.executed.iter().map(|e| e.sequence.clone()).collect(),
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".to_string())
}

/// Runs every case in parallel. A case that panics is reported as an error
/// and does not stop the others. Reports keep the dataset order.
pub fn run_suite(
    system: SystemKind,
    cases: &[CaseRecord],
    engine: &Engine,
    backend: &dyn ChatBackend,
) -> Result<RunReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::NoCases);
    }
    let start = Instant::now();
    let reports: Vec<CaseReport> = cases
        .par_iter()
        .map(|case| {
            let transcript = catch_unwind(AssertUnwindSafe(|| run_case(system, case, engine, backend)))
                .unwrap_or_else(|p| Transcript {
                    system,
                    turns: Vec::new(),
                    executed: Vec::new(),
                    history: Default::default(),
                    error: Some(format!("panicked: {}", panic_message(p.as_ref()))),
                });
            score_case(&transcript, case, &engine.kitchen)
        })
        .collect();
    Ok(RunReport::new(system, reports, start.elapsed().as_secs_f64() * 1000.0))
}

/// Builds the backend a config names.
pub fn backend_from_config(config: &BackendConfig, kitchen: &Kitchen) -> Result<Box<dyn ChatBackend>, EvalError> {
    match config {
        BackendConfig::Remote { .. } => {
            let remote = config.remote_config().expect("remote variant")?;
            Ok(Box::new(RemoteBackend::new(remote)))
        }
        BackendConfig::Scripted { rules } => {
            let text = std::fs::read_to_string(rules).map_err(|source| ConfigError::Io {
                path: rules.clone(),
                source,
            })?;
            Ok(Box::new(ScriptedBackend::from_json(&text)?))
        }
        BackendConfig::Canonical { cases } => {
            let cases = load_cases(cases)?;
            Ok(Box::new(canonical_backend(&cases, &kitchen.library)?))
        }
    }
}

/// Trace of the first turn of `case` under the tree system, as written to a
/// golden file.
pub fn golden_trace_text(case: &CaseRecord, engine: &Engine, backend: &dyn ChatBackend) -> String {
    let mut session = engine.new_session(SystemKind::BtAction);
    let trace = match engine.run_turn(&mut session, &case.instruction, backend) {
        Ok(_) => session.turns.remove(0).trace,
        Err(_) => Default::default(),
    };
    let mut text = trace.to_json_pretty();
    text.push('\n');
    text
}

/// Rewrites `<dir>/<stem>.json` for every case that names a golden trace.
pub fn bless_golden_traces(
    cases: &[CaseRecord],
    engine: &Engine,
    backend: &dyn ChatBackend,
    dir: &std::path::Path,
) -> std::io::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for case in cases {
        let Some(stem) = &case.golden_trace else { continue };
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, golden_trace_text(case, engine, backend))?;
        written.push(path);
    }
    Ok(written)
}

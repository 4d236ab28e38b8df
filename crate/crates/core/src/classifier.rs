//! Stepwise binary condition checks that assign a verdict to an instruction.

use serde::{Deserialize, Serialize};

use crate::domain::{lookup_task, ActionCatalog, Classification, ConversationHistory, Inventory, TaskLibrary};
use crate::guards::{check_mapping, knowno, requested_quantity_over_limit, run_safety_check};
use crate::llm::{
    encode_history, encode_task_names, parse_bool_answer, render_user_embedding, Llm, LlmError, PromptKind, TallyBackend,
};

/// The result of one boolean condition prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionOutcome {
    pub name: String,
    pub answer: bool,
    /// The completion text, or a bracketed note when no completion was obtained.
    pub raw_completion: String,
    #[serde(skip)]
    pub error: Option<LlmError>,
}

impl ConditionOutcome {
    fn answered(name: &str, answer: bool, raw: String) -> Self {
        Self {
            name: name.to_string(),
            answer,
            raw_completion: raw,
            error: None,
        }
    }

    fn failed(name: &str, answer: bool, error: LlmError) -> Self {
        Self {
            name: name.to_string(),
            answer,
            raw_completion: format!("[no completion: {error}]"),
            error: Some(error),
        }
    }

    /// True when the outcome came from a backend failure rather than an answer.
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

fn condition(name: &str, llm: Llm<'_>, kind: PromptKind, bindings: &[(&'static str, String)], u: &str, history: &ConversationHistory, conservative: bool) -> ConditionOutcome {
    let embedded = match render_user_embedding(u) {
        Ok(e) => e,
        Err(e) => return ConditionOutcome::failed(name, conservative, LlmError::Prompt(e.to_string())),
    };
    match llm.ask(kind, bindings, &[embedded, encode_history(history)]) {
        Ok(raw) => {
            let answer = parse_bool_answer(&raw).unwrap_or(conservative);
            ConditionOutcome::answered(name, answer, raw)
        }
        Err(e) => ConditionOutcome::failed(name, conservative, e),
    }
}

/// Is the request ambiguous? Unclear answers and failures count as ambiguous.
pub fn check_ambiguous(u: &str, history: &ConversationHistory, library: &TaskLibrary, llm: Llm<'_>) -> ConditionOutcome {
    condition(
        "ambiguous",
        llm,
        PromptKind::Ambiguity,
        &[("known_tasks", encode_task_names(library))],
        u,
        history,
        true,
    )
}

/// Does the instruction map directly to a known task?
///
/// Unclear answers and failures count as "no". An empty library or a request
/// for more than the quantity limit of anything is "no" without asking.
pub fn check_known_match(
    u: &str,
    history: &ConversationHistory,
    library: &TaskLibrary,
    inventory: &Inventory,
    llm: Llm<'_>,
) -> ConditionOutcome {
    const NAME: &str = "known_match";
    if library.is_empty() {
        return ConditionOutcome::answered(NAME, false, "[skipped: empty library]".into());
    }
    if let Some(q) = requested_quantity_over_limit(u, inventory.quantity_limit()) {
        return ConditionOutcome::answered(NAME, false, format!("[skipped: requested quantity {q} over limit]"));
    }
    condition(
        NAME,
        llm,
        PromptKind::KnownTask,
        &[("known_tasks", encode_task_names(library))],
        u,
        history,
        false,
    )
}

/// Everything that was asked while classifying, in call order.
#[derive(Debug, Clone, Default)]
pub struct ClassifyLog {
    pub outcomes: Vec<ConditionOutcome>,
    pub candidates: Vec<String>,
    pub llm_calls: usize,
    pub llm_failures: usize,
}

/// Full classification without the tree: ambiguous, then known match
/// (confirmed by the candidate set and the mapping re-check), then
/// feasibility; Modification is what remains.
///
/// Returns an error only when every backend call made failed.
pub fn classify(
    u: &str,
    history: &ConversationHistory,
    library: &TaskLibrary,
    catalog: &ActionCatalog,
    inventory: &Inventory,
    llm: Llm<'_>,
) -> Result<(Classification, ClassifyLog), LlmError> {
    let tally = TallyBackend::new(llm.backend);
    let counted = Llm::new(&tally, llm.prompts);
    let mut log = ClassifyLog::default();
    let verdict = classify_steps(u, history, library, catalog, inventory, counted, &mut log);
    log.llm_calls = tally.calls();
    log.llm_failures = tally.failures();
    if let Some(e) = tally.total_outage() {
        return Err(e);
    }
    Ok((verdict, log))
}

fn classify_steps(
    u: &str,
    history: &ConversationHistory,
    library: &TaskLibrary,
    catalog: &ActionCatalog,
    inventory: &Inventory,
    llm: Llm<'_>,
    log: &mut ClassifyLog,
) -> Classification {
    let ambiguous = check_ambiguous(u, history, library, llm);
    let is_ambiguous = ambiguous.answer;
    log.outcomes.push(ambiguous);
    if is_ambiguous {
        return Classification::ambiguous();
    }

    let known = check_known_match(u, history, library, inventory, llm);
    let is_known = known.answer;
    log.outcomes.push(known);
    if is_known {
        let candidates = knowno(u, history, library, llm);
        log.candidates = candidates.tasks().to_vec();
        let Some(name) = candidates.single() else {
            return Classification::ambiguous();
        };
        let task = lookup_task(name, library).expect("candidates come from the library");
        if check_mapping(u, history, task, llm) == Ok(true) {
            return Classification::clear(task.task_name.clone());
        }
        return Classification::modification();
    }

    let (safety, _) = run_safety_check(u, history, catalog, inventory, llm);
    if safety.feasible {
        Classification::modification()
    } else {
        Classification::infeasible()
    }
}

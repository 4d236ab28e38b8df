//! Robot utterances: follow-up questions, confirmation summaries,
//! infeasibility explanations and the fixed fallback lines.

use crate::domain::{ActionCatalog, ConversationHistory, Inventory, TaskLibrary, TaskSequence};
use crate::llm::{
    encode_catalog, encode_history, encode_inventory, encode_task_library, render_user_embedding, Llm, PromptKind,
};

pub const CLARIFICATION_OPENER: &str = "There are multiple options that might fit your request";
pub const CONFIRMATION_QUESTION: &str = "Does this sound good to you?";
pub const RESTATE_AFTER_INVALID: &str =
    "I'm sorry, I couldn't put together a valid plan for that. Could you restate your instructions in a clearer way?";
pub const RESTATE_AFTER_REJECTION: &str =
    "Okay, I won't make that. Could you restate your instructions in a clearer way?";
pub const OUTAGE_RETRY: &str =
    "I'm having trouble thinking right now. Please try your request again in a moment.";
pub const TERMINAL_FALLBACK: &str =
    "I'm sorry, I still couldn't work out what you would like. Please start a new request.";

/// "a", "a or b", "a, b or c".
pub fn or_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} or {}", init.join(", "), last),
    }
}

pub fn acknowledgment(task_name: &str) -> String {
    format!("I'll get started on the task for the {task_name}.")
}

pub fn confirmed_acknowledgment(task_name: &str) -> String {
    format!("Great, I'll get started on the task for the {task_name}.")
}

/// Clarification built from the candidate names only, no model involved.
pub fn candidate_question(candidates: &[String]) -> String {
    let named: Vec<String> = candidates.iter().map(|c| format!("the {c}")).collect();
    format!("{CLARIFICATION_OPENER}: {}. Which one would you like?", or_list(&named))
}

pub fn static_followup(library: &TaskLibrary) -> String {
    let named: Vec<String> = library.names().map(|n| format!("the {n}")).collect();
    if named.is_empty() {
        return "Could you tell me more precisely what you would like?".to_string();
    }
    format!(
        "{CLARIFICATION_OPENER}. I can make {}. Do you have something else in mind?",
        or_list(&named)
    )
}

/// Q from the history and the known tasks; the static question on failure.
pub fn make_followup_question(history: &ConversationHistory, library: &TaskLibrary, llm: Llm<'_>) -> String {
    match llm.ask(
        PromptKind::FollowUp,
        &[],
        &[encode_history(history), encode_task_library(library)],
    ) {
        Ok(q) if !q.trim().is_empty() => q.trim().to_string(),
        _ => static_followup(library),
    }
}

/// Steps spelled out one by one, ending in the confirmation question.
pub fn template_summary(seq: &TaskSequence) -> String {
    let steps: Vec<String> = seq
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.describe()))
        .collect();
    format!("To fulfill your request, I will: {}. {CONFIRMATION_QUESTION}", steps.join("; "))
}

/// Natural-language summary of a proposed sequence, always ending in a question.
pub fn summarize_for_confirmation(seq: &TaskSequence, history: &ConversationHistory, llm: Llm<'_>) -> String {
    match llm.ask(PromptKind::Summary, &[], &[seq.to_wire_json(), encode_history(history)]) {
        Ok(s) if !s.trim().is_empty() => {
            let s = s.trim();
            if s.ends_with('?') {
                s.to_string()
            } else {
                format!("{s} {CONFIRMATION_QUESTION}")
            }
        }
        _ => template_summary(seq),
    }
}

pub fn static_explanation(reason: &str) -> String {
    let reason = reason.trim().trim_end_matches('.');
    format!("I'm sorry, I can't do that: {reason}.")
}

/// Why the request cannot be fulfilled, grounded in the safety check's reason.
pub fn explain_infeasible(
    u: &str,
    reason: &str,
    catalog: &ActionCatalog,
    inventory: &Inventory,
    llm: Llm<'_>,
) -> String {
    let Ok(embedded) = render_user_embedding(u) else {
        return static_explanation(reason);
    };
    match llm.ask(
        PromptKind::Explanation,
        &[
            ("actions", encode_catalog(catalog)),
            ("ingredients", encode_inventory(inventory)),
            ("reason", reason.to_string()),
        ],
        &[embedded],
    ) {
        Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
        _ => static_explanation(reason),
    }
}

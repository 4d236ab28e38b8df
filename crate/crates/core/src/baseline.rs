//! The comparison system: one static prompt per turn, no tree and no guards.

use crate::config::Kitchen;
use crate::domain::{normalize_name, Role, TaskLibrary, TaskSequence, Verdict};
use crate::llm::{
    encode_catalog, encode_inventory, encode_task_library, ChatMessage, ChatRequest, ChatRole, Llm, LlmError,
    PromptKind,
};
use crate::orchestrator::{replies, Attachment, Pending, ReplyKind, RobotReply, Session};
use crate::wire::{extract_json_block, parse_sequence};

/// S: the known tasks, robot actions, ingredients and quantity limit. The
/// tree system's prompts use the same encoders.
pub fn system_context(kitchen: &Kitchen, library: &TaskLibrary) -> String {
    format!(
        "{}\n\nAvailable actions:\n{}\n\nAvailable ingredients: {}\n\nQuantity limit: at most {} units of anything.",
        encode_task_library(library),
        encode_catalog(&kitchen.catalog),
        encode_inventory(&kitchen.inventory),
        kitchen.inventory.quantity_limit()
    )
}

/// The single request of a baseline turn: S with the base prompt as the
/// system message, the history as chat turns, then the new instruction.
pub fn baseline_request(kitchen: &Kitchen, session: &Session, u: &str, llm: Llm<'_>) -> Result<ChatRequest, LlmError> {
    let system = llm
        .prompts
        .render(
            PromptKind::Baseline,
            &[("system_context", system_context(kitchen, &session.session_library))],
        )
        .map_err(|e| LlmError::Prompt(e.to_string()))?;
    let mut messages = vec![ChatMessage::system(system)?];
    for utt in session.history.utterances() {
        let role = match utt.role {
            Role::User => ChatRole::User,
            Role::Robot => ChatRole::Assistant,
        };
        messages.push(ChatMessage::new(role, utt.text.clone())?);
    }
    messages.push(ChatMessage::user(u)?);
    Ok(ChatRequest::new(PromptKind::Baseline.name(), messages))
}

pub struct BaselineOutcome {
    pub reply: RobotReply,
    pub verdict: Option<Verdict>,
    pub execute: Option<TaskSequence>,
    pub pending: Pending,
    pub emitted_json: Option<String>,
}

const DECLINE_CUES: &[&str] = &[
    "i'm sorry",
    "i am sorry",
    "unfortunately",
    "i can't",
    "i cannot",
    "i am unable",
    "i'm unable",
    "i'm not able",
    "not able to",
];

const COMMENCE_CUES: &[&str] = &[
    "i'll get started",
    "i will get started",
    "i'll start",
    "i will start",
    "i'll commence",
    "i will commence",
    "i'll prepare",
    "i will prepare",
    "i'll make",
    "i will make",
    "commencing",
    "starting",
];

fn contains_any(haystack: &str, needles: &[&str]) -> bool {
    needles.iter().any(|n| haystack.contains(n))
}

fn mentioned_task<'a>(text: &str, library: &'a TaskLibrary) -> Option<&'a TaskSequence> {
    let lower = normalize_name(text);
    library
        .tasks()
        .iter()
        .filter(|t| lower.contains(&normalize_name(&t.task_name)))
        .max_by_key(|t| t.task_name.len())
}

/// Reads the kind of a free-form baseline completion and what, if anything,
/// it commits to executing.
///
/// A JSON sequence means the baseline commits to it as written. Otherwise an
/// apology is a decline, a commencement phrase naming a known task executes
/// that task, and a question is a clarification.
pub fn interpret_completion(text: &str, library: &TaskLibrary) -> BaselineOutcome {
    let reply_text = if text.trim().is_empty() {
        replies::OUTAGE_RETRY.to_string()
    } else {
        text.trim().to_string()
    };
    let lower = reply_text.to_lowercase().replace('\u{2019}', "'");
    let emitted_json = extract_json_block(text).map(str::to_string);

    if let Some(seq) = emitted_json.as_deref().and_then(|b| parse_sequence(b).ok()) {
        return BaselineOutcome {
            reply: RobotReply::new(reply_text, ReplyKind::Acknowledgment).with(Attachment::Sequence(seq.clone())),
            verdict: Some(Verdict::Modification),
            execute: Some(seq),
            pending: Pending::None,
            emitted_json,
        };
    }
    let (kind, verdict, execute) = if contains_any(&lower, DECLINE_CUES) {
        (ReplyKind::InfeasibilityExplanation, Some(Verdict::Infeasible), None)
    } else if let Some(task) = mentioned_task(&lower, library).filter(|_| contains_any(&lower, COMMENCE_CUES)) {
        (ReplyKind::Acknowledgment, Some(Verdict::Clear), Some(task.clone()))
    } else if lower.contains('?') {
        (ReplyKind::ClarificationQuestion, Some(Verdict::Ambiguous), None)
    } else {
        (ReplyKind::Fallback, None, None)
    };
    let mut reply = RobotReply::new(reply_text, kind);
    if let Some(task) = &execute {
        reply = reply.with(Attachment::Sequence(task.clone()));
    }
    BaselineOutcome {
        reply,
        verdict,
        execute,
        pending: if kind == ReplyKind::ClarificationQuestion {
            Pending::AwaitingClarification
        } else {
            Pending::None
        },
        emitted_json,
    }
}

/// One baseline turn. Exactly one backend call is made.
pub fn baseline_turn(kitchen: &Kitchen, session: &Session, u: &str, llm: Llm<'_>) -> BaselineOutcome {
    let completion = baseline_request(kitchen, session, u, llm).and_then(|req| llm.backend.complete(&req));
    match completion {
        Ok(text) => {
            tracing::debug!(prompt = "baseline", completion = %text, "llm call");
            interpret_completion(&text, &session.session_library)
        }
        Err(e) => {
            tracing::warn!(prompt = "baseline", error = %e, "llm call failed");
            BaselineOutcome {
                reply: RobotReply::new(replies::OUTAGE_RETRY, ReplyKind::Fallback),
                verdict: None,
                execute: None,
                pending: session.pending.clone(),
                emitted_json: None,
            }
        }
    }
}

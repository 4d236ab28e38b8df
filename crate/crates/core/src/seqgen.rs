//! New task sequences for modification requests.

use crate::domain::{normalize_name, ActionCatalog, ConversationHistory, Inventory, TaskLibrary, TaskSequence};
use crate::llm::{
    encode_catalog, encode_history, encode_inventory, encode_task_library, render_user_embedding, ChatRequest, Llm,
    LlmError, PromptKind,
};

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub instruction: &'a str,
    pub history: &'a ConversationHistory,
    pub library: &'a TaskLibrary,
    pub catalog: &'a ActionCatalog,
    pub inventory: &'a Inventory,
}

impl GenerationRequest<'_> {
    /// f(u), g(H) and w(T) joined by blank lines, under the generation pre-prompt.
    pub fn render(&self, llm: Llm<'_>) -> Result<ChatRequest, LlmError> {
        let embedded = render_user_embedding(self.instruction).map_err(|e| LlmError::Prompt(e.to_string()))?;
        llm.request(
            PromptKind::Generate,
            &[
                ("actions", encode_catalog(self.catalog)),
                ("ingredients", encode_inventory(self.inventory)),
                ("quantity_limit", self.inventory.quantity_limit().to_string()),
            ],
            &[embedded, encode_history(self.history), encode_task_library(self.library)],
        )
    }
}

/// Asks for a new sequence and returns the raw completion; validation is
/// the caller's job.
pub fn generate_sequence(req: &GenerationRequest<'_>, llm: Llm<'_>) -> Result<String, LlmError> {
    let request = req.render(llm)?;
    let out = llm.backend.complete(&request);
    match &out {
        Ok(text) => tracing::debug!(prompt = "generate", completion = %text, "llm call"),
        Err(e) => tracing::warn!(prompt = "generate", error = %e, "llm call failed"),
    }
    out
}

/// Head of a task name: the part before " with ", " without ", " on ", "(" or ",".
fn head_phrase(task_name: &str) -> &str {
    let mut head = task_name;
    for sep in [" with ", " without ", " on ", " (", ","] {
        if let Some(i) = head.find(sep) {
            head = &head[..i];
        }
    }
    head.trim()
}

pub(crate) fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub(crate) fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

/// Name for a generated sequence, e.g. "pancakes (modified #1)".
///
/// The base is the head phrase of the first library task the instruction
/// mentions, otherwise the generated task's own name. `ordinal` is the
/// number of sequences proposed in the session so far, plus one; it is
/// bumped until the name is free in `library`.
pub fn name_generated_task(seq: &TaskSequence, u: &str, library: &TaskLibrary, ordinal: u32) -> String {
    let u_words = words(u);
    let base = library
        .names()
        .map(head_phrase)
        .find(|head| contains_phrase(&u_words, &words(head)))
        .map(str::to_string)
        .unwrap_or_else(|| {
            let own = normalize_name(&seq.task_name);
            if own.is_empty() {
                "custom task".to_string()
            } else {
                head_phrase(&own).to_string()
            }
        });
    let base = normalize_name(&base);
    let mut k = ordinal.max(1);
    loop {
        let name = format!("{base} (modified #{k})");
        if !library.contains(&name) {
            return name;
        }
        k += 1;
    }
}

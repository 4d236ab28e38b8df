use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompts::{extract_history_block, extract_user_instruction};
use super::{ChatBackend, ChatRequest, ChatRole, LlmError};
use crate::domain::normalize_name;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("rule table is empty")]
    Empty,
    #[error("the last rule must be a catch-all (rule {0} has conditions)")]
    NoCatchAll(usize),
    #[error("malformed rule table: {0}")]
    Parse(String),
}

/// Conditions over a rendered request. Every present field must hold; an
/// all-empty matcher is a catch-all.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleMatcher {
    /// Exact template name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// The embedded user instruction (or the last user message), compared
    /// after case and whitespace normalization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    /// Case-insensitive substring of the conversation-history portion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_contains: Option<String>,
    /// Case-sensitive substring anywhere in the rendered messages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
}

impl RuleMatcher {
    pub fn is_catch_all(&self) -> bool {
        self.prompt.is_none() && self.instruction.is_none() && self.history_contains.is_none() && self.contains.is_none()
    }

    fn matches(&self, req: &ChatRequest, text: &str) -> bool {
        if let Some(p) = &self.prompt {
            if *p != req.prompt {
                return false;
            }
        }
        if let Some(c) = &self.contains {
            if !text.contains(c.as_str()) {
                return false;
            }
        }
        if let Some(want) = &self.instruction {
            let got = extract_user_instruction(text).or_else(|| {
                req.messages
                    .iter()
                    .rev()
                    .find(|m| m.role == ChatRole::User)
                    .map(|m| m.content.clone())
            });
            if got.map(|g| normalize_name(&g)) != Some(normalize_name(want)) {
                return false;
            }
        }
        if let Some(h) = &self.history_contains {
            let haystack = extract_history_block(text).unwrap_or_else(|| {
                let n = req.messages.len().saturating_sub(1);
                req.messages[..n]
                    .iter()
                    .filter(|m| m.role != ChatRole::System)
                    .map(|m| m.content.as_str())
                    .collect::<Vec<_>>()
                    .join("\n")
            });
            if !haystack.to_lowercase().contains(&h.to_lowercase()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default)]
    pub when: RuleMatcher,
    pub respond: String,
}

impl ScriptRule {
    pub fn new(id: impl Into<String>, when: RuleMatcher, respond: impl Into<String>) -> Self {
        Self {
            id: Some(id.into()),
            when,
            respond: respond.into(),
        }
    }
}

/// Deterministic stand-in for an LLM: the first matching rule answers.
#[derive(Debug)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    calls: AtomicUsize,
    fired: Mutex<Vec<usize>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self, ScriptError> {
        let last = rules.last().ok_or(ScriptError::Empty)?;
        if !last.when.is_catch_all() {
            return Err(ScriptError::NoCatchAll(rules.len() - 1));
        }
        Ok(Self {
            rules,
            calls: AtomicUsize::new(0),
            fired: Mutex::new(Vec::new()),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let rules: Vec<ScriptRule> = serde_json::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))?;
        Self::new(rules)
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Indices of the rules that answered, in call order.
    pub fn fired(&self) -> Vec<usize> {
        self.fired.lock().expect("fired log poisoned").clone()
    }

    pub fn select(&self, request: &ChatRequest) -> usize {
        let text = request.full_text();
        self.rules
            .iter()
            .position(|r| r.when.matches(request, &text))
            .unwrap_or(self.rules.len() - 1)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        if request.messages.is_empty() {
            return Err(LlmError::EmptyRequest);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let idx = self.select(request);
        self.fired.lock().expect("fired log poisoned").push(idx);
        Ok(self.rules[idx].respond.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{render_user_embedding, ChatMessage};

    fn rule(when: RuleMatcher, respond: &str) -> ScriptRule {
        ScriptRule {
            id: None,
            when,
            respond: respond.into(),
        }
    }

    fn catch_all(respond: &str) -> ScriptRule {
        rule(RuleMatcher::default(), respond)
    }

    fn request(prompt: &str, system: &str, instruction: &str) -> ChatRequest {
        ChatRequest::new(
            prompt,
            vec![
                ChatMessage::system(system).unwrap(),
                ChatMessage::user(render_user_embedding(instruction).unwrap()).unwrap(),
            ],
        )
    }

    #[test]
    fn contains_rule_fires() {
        let b = ScriptedBackend::new(vec![
            rule(
                RuleMatcher {
                    contains: Some("is the request ambiguous".into()),
                    ..Default::default()
                },
                "False",
            ),
            catch_all("fallback"),
        ])
        .unwrap();
        let req = request(
            "ambiguity",
            "Based on the user instruction and history, is the request ambiguous?",
            "Can I get the bacon and egg sandwich?",
        );
        assert_eq!(b.complete(&req).unwrap(), "False");
        assert_eq!(b.fired(), vec![0]);
    }

    #[test]
    fn catch_all_fires_when_nothing_matches() {
        let b = ScriptedBackend::new(vec![
            rule(
                RuleMatcher {
                    prompt: Some("safety".into()),
                    ..Default::default()
                },
                "True",
            ),
            catch_all("canned"),
        ])
        .unwrap();
        assert_eq!(b.complete(&request("ambiguity", "sys", "hi")).unwrap(), "canned");
        assert_eq!(b.calls(), 1);
    }

    #[test]
    fn first_match_wins() {
        let b = ScriptedBackend::new(vec![
            rule(
                RuleMatcher {
                    instruction: Some("make me a sandwich".into()),
                    ..Default::default()
                },
                "first",
            ),
            rule(
                RuleMatcher {
                    prompt: Some("knowno".into()),
                    ..Default::default()
                },
                "second",
            ),
            catch_all("last"),
        ])
        .unwrap();
        assert_eq!(b.complete(&request("knowno", "s", "Make me a  SANDWICH")).unwrap(), "first");
        assert_eq!(b.complete(&request("knowno", "s", "Make me a sandwich please")).unwrap(), "second");
    }

    #[test]
    fn table_needs_final_catch_all() {
        assert_eq!(ScriptedBackend::new(vec![]).unwrap_err(), ScriptError::Empty);
        let only = rule(
            RuleMatcher {
                prompt: Some("x".into()),
                ..Default::default()
            },
            "y",
        );
        assert_eq!(ScriptedBackend::new(vec![only]).unwrap_err(), ScriptError::NoCatchAll(0));
    }

    #[test]
    fn history_matcher_reads_history_block() {
        let b = ScriptedBackend::new(vec![
            rule(
                RuleMatcher {
                    history_contains: Some("PANCAKES".into()),
                    ..Default::default()
                },
                "hit",
            ),
            catch_all("miss"),
        ])
        .unwrap();
        let req = ChatRequest::new(
            "ambiguity",
            vec![ChatMessage::user("HISTORY:\n0. USER: pancakes please\n\npancakes outside history").unwrap()],
        );
        assert_eq!(b.complete(&req).unwrap(), "hit");
        let req = ChatRequest::new(
            "ambiguity",
            vec![ChatMessage::user("HISTORY (empty)\n\npancakes outside history").unwrap()],
        );
        assert_eq!(b.complete(&req).unwrap(), "miss");
    }

    #[test]
    fn json_rule_table() {
        let b = ScriptedBackend::from_json(
            r#"[{"id":"a","when":{"prompt":"ambiguity"},"respond":"True"},{"respond":"False"}]"#,
        )
        .unwrap();
        assert_eq!(b.rules().len(), 2);
        assert!(ScriptedBackend::from_json(r#"[{"when":{"bogus":1},"respond":"x"}]"#).is_err());
    }
}

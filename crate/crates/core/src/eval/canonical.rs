//! The canonical rule table: a scripted backend whose answers follow the
//! gold labels of a case dataset.

use crate::domain::{TaskLibrary, TaskSequence, Verdict};
use crate::guards::option_label;
use crate::llm::{PromptKind, RuleMatcher, ScriptError, ScriptRule, ScriptedBackend};
use crate::orchestrator::replies;

use super::cases::CaseRecord;

/// Response of the final catch-all rule.
pub const UNSCRIPTED: &str = "UNSCRIPTED";

fn on(kind: PromptKind, instruction: &str) -> RuleMatcher {
    RuleMatcher {
        prompt: Some(kind.name().to_string()),
        instruction: Some(instruction.to_string()),
        ..Default::default()
    }
}

fn after(kind: PromptKind, history_contains: &str) -> RuleMatcher {
    RuleMatcher {
        prompt: Some(kind.name().to_string()),
        history_contains: Some(history_contains.to_string()),
        ..Default::default()
    }
}

fn letters(names: &[String], library: &TaskLibrary) -> String {
    let picked: Vec<String> = names
        .iter()
        .filter_map(|n| library.names().position(|l| l == n.as_str()))
        .map(option_label)
        .collect();
    if picked.is_empty() {
        "NONE".to_string()
    } else {
        picked.join(", ")
    }
}

struct Table<'a> {
    rules: Vec<ScriptRule>,
    library: &'a TaskLibrary,
}

impl Table<'_> {
    fn add(&mut self, id: String, when: RuleMatcher, respond: impl Into<String>) {
        self.rules.push(ScriptRule::new(id, when, respond));
    }

    /// A request that names a known task outright.
    fn direct_request(&mut self, prefix: &str, u: &str, task: &str) {
        self.add(format!("{prefix}/ambiguity"), on(PromptKind::Ambiguity, u), "False");
        self.add(format!("{prefix}/known_task"), on(PromptKind::KnownTask, u), "True");
        self.add(
            format!("{prefix}/knowno"),
            on(PromptKind::Knowno, u),
            letters(&[task.to_string()], self.library),
        );
        self.add(format!("{prefix}/check_mapping"), on(PromptKind::CheckMapping, u), "True");
        self.add(
            format!("{prefix}/baseline"),
            on(PromptKind::Baseline, u),
            format!("Of course! I'll get started on the {task} right away."),
        );
    }

    fn case(&mut self, case: &CaseRecord) {
        let id = case.id.as_str();
        let u = case.instruction.as_str();
        let hints = &case.script;
        match case.category {
            Verdict::Clear => {
                let task = case.gold_task.as_deref().unwrap_or_default();
                self.direct_request(id, u, task);
            }
            Verdict::Ambiguous => {
                let reaches_selector = hints.known_match.unwrap_or(false);
                let ambiguous = if reaches_selector { "False" } else { "True" };
                self.add(format!("{id}/ambiguity"), on(PromptKind::Ambiguity, u), ambiguous);
                if reaches_selector {
                    self.add(format!("{id}/known_task"), on(PromptKind::KnownTask, u), "True");
                    let candidates = hints.candidates.clone().unwrap_or_default();
                    self.add(
                        format!("{id}/knowno"),
                        on(PromptKind::Knowno, u),
                        letters(&candidates, self.library),
                    );
                }
                let question = hints
                    .followup
                    .clone()
                    .unwrap_or_else(|| replies::static_followup(self.library));
                self.add(format!("{id}/followup"), after(PromptKind::FollowUp, u), question);
                let menu: Vec<String> = self.library.names().map(|n| format!("the {n}")).collect();
                self.add(
                    format!("{id}/baseline"),
                    on(PromptKind::Baseline, u),
                    format!("Could you be more specific? I can make {}.", replies::or_list(&menu)),
                );
                if let (Some(answer), Some(task)) = (case.scripted_followups.first(), &case.gold_task) {
                    self.direct_request(&format!("{id}/reply-1"), answer, task);
                }
            }
            Verdict::Modification => {
                let gold = case.gold_sequence.clone().unwrap_or_else(|| TaskSequence {
                    task_name: String::new(),
                    steps: Vec::new(),
                });
                self.add(format!("{id}/ambiguity"), on(PromptKind::Ambiguity, u), "False");
                let known = hints.known_match.unwrap_or(false);
                self.add(
                    format!("{id}/known_task"),
                    on(PromptKind::KnownTask, u),
                    if known { "True" } else { "False" },
                );
                if known {
                    let candidates = hints.candidates.clone().unwrap_or_default();
                    self.add(format!("{id}/knowno"), on(PromptKind::Knowno, u), letters(&candidates, self.library));
                    let mapping = if hints.mapping.unwrap_or(false) { "True" } else { "False" };
                    self.add(format!("{id}/check_mapping"), on(PromptKind::CheckMapping, u), mapping);
                }
                self.add(format!("{id}/safety"), on(PromptKind::Safety, u), "True");
                self.add(format!("{id}/generate"), on(PromptKind::Generate, u), gold.to_wire_json());
                let summary = hints.summary.clone().unwrap_or_else(|| {
                    format!("I will make the {} for you. {}", gold.task_name, replies::CONFIRMATION_QUESTION)
                });
                self.add(format!("{id}/summary"), after(PromptKind::Summary, u), summary);
                if let Some(answer) = case.scripted_followups.first() {
                    self.add(
                        format!("{id}/reply-1/confirmation"),
                        on(PromptKind::Confirmation, answer),
                        "True",
                    );
                }
                self.add(
                    format!("{id}/baseline"),
                    on(PromptKind::Baseline, u),
                    format!(
                        "Sure, I'll make that with a new sequence:\n```json\n{}\n```",
                        gold.to_wire_json()
                    ),
                );
            }
            Verdict::Infeasible => {
                self.add(format!("{id}/ambiguity"), on(PromptKind::Ambiguity, u), "False");
                self.add(format!("{id}/known_task"), on(PromptKind::KnownTask, u), "False");
                if let Some(reason) = &hints.reason {
                    self.add(format!("{id}/safety"), on(PromptKind::Safety, u), format!("False: {reason}"));
                }
                let explanation = hints
                    .explanation
                    .clone()
                    .or_else(|| hints.reason.as_deref().map(replies::static_explanation))
                    .unwrap_or_else(|| "I'm sorry, but I can't do that.".to_string());
                self.add(format!("{id}/explanation"), on(PromptKind::Explanation, u), explanation.clone());
                self.add(format!("{id}/baseline"), on(PromptKind::Baseline, u), explanation);
            }
        }
    }
}

/// Rules answering every prompt the tree system and the baseline send while
/// replaying `cases`, ending in a catch-all that answers [`UNSCRIPTED`].
pub fn canonical_rules(cases: &[CaseRecord], library: &TaskLibrary) -> Vec<ScriptRule> {
    let mut table = Table {
        rules: Vec::new(),
        library,
    };
    for case in cases {
        table.case(case);
    }
    table.add(
        "generic/followup".into(),
        RuleMatcher {
            prompt: Some(PromptKind::FollowUp.name().into()),
            ..Default::default()
        },
        replies::static_followup(library),
    );
    table.rules.push(ScriptRule {
        id: Some("catch-all".into()),
        when: RuleMatcher::default(),
        respond: UNSCRIPTED.into(),
    });
    table.rules
}

pub fn canonical_backend(cases: &[CaseRecord], library: &TaskLibrary) -> Result<ScriptedBackend, ScriptError> {
    ScriptedBackend::new(canonical_rules(cases, library))
}

//! Automated error taxonomy over a replayed transcript.
//!
//! Hallucination detection is lexical: a fixed list of food words is
//! cross-checked against the inventory, the library and what the user said.

use serde::{Deserialize, Serialize};

use crate::config::Kitchen;
use crate::domain::{lookup_task, normalize_name, ActionCall, ConversationHistory, Verdict};
use crate::guards::check_new_seq;
use crate::orchestrator::{ExecutedTask, ReplyKind, SystemKind, TurnRecord};
use crate::seqgen::{contains_phrase, words};

use super::cases::CaseRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomyKind {
    LieHallucination,
    FaultyJson,
    FalseExecution,
    UnnecessaryJson,
    PresumptiveExecution,
    Misclassification,
}

impl TaxonomyKind {
    pub const ALL: [TaxonomyKind; 6] = [
        TaxonomyKind::LieHallucination,
        TaxonomyKind::FaultyJson,
        TaxonomyKind::FalseExecution,
        TaxonomyKind::UnnecessaryJson,
        TaxonomyKind::PresumptiveExecution,
        TaxonomyKind::Misclassification,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaxonomyKind::LieHallucination => "lie_hallucination",
            TaxonomyKind::FaultyJson => "faulty_json",
            TaxonomyKind::FalseExecution => "false_execution",
            TaxonomyKind::UnnecessaryJson => "unnecessary_json",
            TaxonomyKind::PresumptiveExecution => "presumptive_execution",
            TaxonomyKind::Misclassification => "misclassification",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyError {
    pub kind: TaxonomyKind,
    pub evidence: String,
}

impl TaxonomyError {
    fn new(kind: TaxonomyKind, evidence: impl Into<String>) -> Self {
        Self {
            kind,
            evidence: evidence.into(),
        }
    }
}

/// Everything one replayed case produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transcript {
    pub system: SystemKind,
    pub turns: Vec<TurnRecord>,
    pub executed: Vec<ExecutedTask>,
    #[serde(default)]
    pub history: ConversationHistory,
    /// Set when the replay itself broke (for example a panic).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Transcript {
    pub fn first_verdict(&self) -> Option<Verdict> {
        self.turns.first().and_then(|t| t.verdict)
    }
}

/// Food words that a reply could offer.
pub const FOOD_LEXICON: &[&str] = &[
    "apple", "avocado", "bagel", "beans", "beef", "blueberries", "burger", "burrito", "cereal", "cheddar",
    "chicken", "chocolate", "cinnamon", "coffee", "cream cheese", "croissant", "fish", "french toast", "fries",
    "goat cheese", "granola", "hash browns", "ice cream", "jam", "lettuce", "milk", "mozzarella", "muffin",
    "mushroom", "mushrooms", "noodles", "nutella", "oatmeal", "omelet", "omelette", "onion", "orange juice",
    "pasta", "pizza", "potato", "potatoes", "raspberries", "rice", "salad", "salmon", "sausage", "smoothie",
    "soup", "spaghetti", "spinach", "steak", "strawberries", "sushi", "taco", "tea", "tofu", "tuna", "turkey",
    "waffle", "waffles", "whipped cream", "yogurt",
];

/// Lexicon terms in `text` that are neither available nor known nor
/// something the user mentioned.
pub fn unsupported_food_terms(text: &str, kitchen: &Kitchen, user_words: &[Vec<String>]) -> Vec<&'static str> {
    let reply = words(text);
    let grounded: Vec<Vec<String>> = kitchen
        .inventory
        .ingredients()
        .map(words)
        .chain(kitchen.library.names().map(words))
        .collect();
    FOOD_LEXICON
        .iter()
        .copied()
        .filter(|term| {
            let t = words(term);
            contains_phrase(&reply, &t)
                && !grounded.iter().any(|g| contains_phrase(g, &t))
                && !user_words.iter().any(|u| contains_phrase(u, &t))
        })
        .collect()
}

/// The sequence a case should end up executing, if any, and a label for it.
fn expected_steps<'a>(case: &'a CaseRecord, kitchen: &'a Kitchen) -> Option<(String, &'a [ActionCall])> {
    match case.category {
        Verdict::Infeasible => None,
        Verdict::Modification => case
            .gold_sequence
            .as_ref()
            .map(|s| (s.task_name.clone(), s.steps.as_slice())),
        Verdict::Clear | Verdict::Ambiguous => {
            let name = case.gold_task.as_deref()?;
            lookup_task(name, &kitchen.library).map(|t| (t.task_name.clone(), t.steps.as_slice()))
        }
    }
}

fn execution_matches(case: &CaseRecord, done: &ExecutedTask, expected: &(String, &[ActionCall])) -> bool {
    let steps_match = done.sequence.steps.as_slice() == expected.1;
    match case.category {
        Verdict::Modification => steps_match,
        _ => steps_match && normalize_name(&done.sequence.task_name) == normalize_name(&expected.0),
    }
}

/// Runs the six detectors over one transcript.
pub fn detect_taxonomy_errors(transcript: &Transcript, case: &CaseRecord, kitchen: &Kitchen) -> Vec<TaxonomyError> {
    let mut errors = Vec::new();
    let user_words: Vec<Vec<String>> = transcript.turns.iter().map(|t| words(&t.user_text)).collect();

    for turn in &transcript.turns {
        if turn.reply.kind != ReplyKind::InfeasibilityExplanation {
            for term in unsupported_food_terms(&turn.reply.text, kitchen, &user_words) {
                errors.push(TaxonomyError::new(
                    TaxonomyKind::LieHallucination,
                    format!("turn {}: reply offers '{term}', which is not available", turn.index),
                ));
            }
        }
        if let Some(json) = &turn.emitted_json {
            let (report, _) = check_new_seq(json, &kitchen.catalog, &kitchen.inventory);
            if !report.valid {
                let details: Vec<String> = report.diagnostics.iter().map(ToString::to_string).collect();
                errors.push(TaxonomyError::new(
                    TaxonomyKind::FaultyJson,
                    format!("turn {}: {}", turn.index, details.join("; ")),
                ));
            }
            if case.category != Verdict::Modification {
                errors.push(TaxonomyError::new(
                    TaxonomyKind::UnnecessaryJson,
                    format!("turn {}: JSON emitted for a {} request", turn.index, case.category),
                ));
            }
        }
    }

    let expected = expected_steps(case, kitchen);
    let mut matched = false;
    for done in &transcript.executed {
        let ok = match &expected {
            Some(exp) if !matched && execution_matches(case, done, exp) => {
                matched = true;
                true
            }
            _ => false,
        };
        if !ok {
            errors.push(TaxonomyError::new(
                TaxonomyKind::FalseExecution,
                format!("turn {}: executed '{}'", done.turn, done.sequence.task_name),
            ));
        }
    }

    if case.category == Verdict::Ambiguous {
        let first_question = transcript
            .turns
            .iter()
            .position(|t| t.reply.kind == ReplyKind::ClarificationQuestion);
        if let Some(done) = transcript
            .executed
            .iter()
            .find(|d| first_question.is_none_or(|q| d.turn < q))
        {
            errors.push(TaxonomyError::new(
                TaxonomyKind::PresumptiveExecution,
                format!(
                    "turn {}: executed '{}' without asking for clarification",
                    done.turn, done.sequence.task_name
                ),
            ));
        }
    }

    if transcript.system == SystemKind::BtAction {
        let observed = transcript.first_verdict();
        if observed != Some(case.category) {
            errors.push(TaxonomyError::new(
                TaxonomyKind::Misclassification,
                format!(
                    "classified as {} instead of {}",
                    observed.map_or("nothing".to_string(), |v| v.to_string()),
                    case.category
                ),
            ));
        }
    }
    errors
}

/// Whether the executions in `transcript` are exactly what the case expects.
pub fn execution_as_expected(transcript: &Transcript, case: &CaseRecord, kitchen: &Kitchen) -> Result<(), String> {
    let expected = expected_steps(case, kitchen);
    match (&expected, transcript.executed.as_slice()) {
        (None, []) => Ok(()),
        (None, done) => Err(format!("expected no execution, got {}", done.len())),
        (Some((name, _)), []) => Err(format!("expected '{name}' to be executed, nothing was")),
        (Some(exp), [done]) if execution_matches(case, done, exp) => Ok(()),
        (Some((name, _)), done) => Err(format!(
            "expected exactly '{name}', executed [{}]",
            done.iter().map(|d| d.sequence.task_name.as_str()).collect::<Vec<_>>().join(", ")
        )),
    }
}

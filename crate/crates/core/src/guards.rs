//! Error-handling guards between the LLM and execution: candidate-set
//! disambiguation, intent re-check, structural sequence validation and the
//! feasibility check.

use serde::{Deserialize, Serialize};

use crate::domain::{
    normalize_name, validate_action_call, ActionCatalog, ArgValue, ConversationHistory, Diagnostic, DiagnosticKind,
    Inventory, ParamKind, TaskLibrary, TaskSequence,
};
use crate::llm::{
    encode_catalog, encode_history, encode_inventory, parse_bool_answer, render_user_embedding, Llm, LlmError,
    PromptKind,
};
use crate::wire::parse_sequence;

/// Known tasks that may fulfil a request, in library order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    tasks: Vec<String>,
}

impl CandidateSet {
    /// Builds a set from library indices; out-of-range and repeated indices
    /// are dropped. Tasks keep library order whatever order the indices come in.
    pub fn from_indices(library: &TaskLibrary, indices: impl IntoIterator<Item = usize>) -> Self {
        let picked: std::collections::BTreeSet<usize> =
            indices.into_iter().filter(|&i| i < library.len()).collect();
        Self {
            tasks: picked.into_iter().map(|i| library.tasks()[i].task_name.clone()).collect(),
        }
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn single(&self) -> Option<&str> {
        match self.tasks.as_slice() {
            [only] => Some(only),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    fn from_diagnostics(diagnostics: Vec<Diagnostic>) -> Self {
        Self {
            valid: diagnostics.is_empty(),
            diagnostics,
        }
    }

    pub fn has(&self, kind: DiagnosticKind) -> bool {
        self.diagnostics.iter().any(|d| d.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub feasible: bool,
    pub reason: String,
}

impl SafetyVerdict {
    pub fn feasible() -> Self {
        Self {
            feasible: true,
            reason: String::new(),
        }
    }

    pub fn infeasible(reason: impl Into<String>) -> Self {
        let reason = reason.into();
        let reason = if reason.trim().is_empty() {
            "the request is outside what I can do".to_string()
        } else {
            reason
        };
        Self {
            feasible: false,
            reason,
        }
    }
}

/// Spreadsheet-style option labels: A..Z, AA, AB, ...
pub fn option_label(mut index: usize) -> String {
    let mut label = Vec::new();
    loop {
        label.push(b'A' + (index % 26) as u8);
        if index < 26 {
            break;
        }
        index = index / 26 - 1;
    }
    label.reverse();
    String::from_utf8(label).expect("ascii")
}

fn label_index(label: &str) -> Option<usize> {
    if label.is_empty() || !label.bytes().all(|b| b.is_ascii_uppercase()) {
        return None;
    }
    let mut n = 0usize;
    for b in label.bytes() {
        n = n.checked_mul(26)?.checked_add(usize::from(b - b'A') + 1)?;
    }
    Some(n - 1)
}

/// The multiple-choice menu shown to the model.
pub fn knowno_options(library: &TaskLibrary) -> String {
    library
        .names()
        .enumerate()
        .map(|(i, n)| format!("{}) {}", option_label(i), n))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses an option-letter answer. `None` means the answer was unparseable.
pub fn parse_knowno_answer(raw: &str, library: &TaskLibrary) -> Option<CandidateSet> {
    let t = raw.trim().trim_end_matches('.');
    if t.eq_ignore_ascii_case("none") {
        return Some(CandidateSet::default());
    }
    let mut indices = Vec::new();
    for token in t.split(|c: char| c == ',' || c == ';' || c.is_whitespace()) {
        let token = token.trim_matches(|c: char| c == '(' || c == ')' || c == '.' || c == '"' || c == '\'');
        if token.is_empty() || token.eq_ignore_ascii_case("and") {
            continue;
        }
        let idx = label_index(&token.to_ascii_uppercase())?;
        if idx >= library.len() {
            return None;
        }
        indices.push(idx);
    }
    if indices.is_empty() {
        return None;
    }
    Some(CandidateSet::from_indices(library, indices))
}

/// Asks the model which known tasks could fulfil the request.
///
/// The result is always a subset of the library. Backend failures and
/// unparseable answers give an empty set, which the caller demotes to a
/// clarification.
pub fn knowno(instruction: &str, history: &ConversationHistory, library: &TaskLibrary, llm: Llm<'_>) -> CandidateSet {
    if library.is_empty() {
        return CandidateSet::default();
    }
    let Ok(embedded) = render_user_embedding(instruction) else {
        return CandidateSet::default();
    };
    let answer = llm.ask(
        PromptKind::Knowno,
        &[("options", knowno_options(library))],
        &[embedded, encode_history(history)],
    );
    match answer {
        Ok(raw) => parse_knowno_answer(&raw, library).unwrap_or_default(),
        Err(_) => CandidateSet::default(),
    }
}

/// Re-checks that the single candidate matches what the user asked for.
/// Anything but a clean "True" is a rejection.
pub fn check_mapping(
    instruction: &str,
    history: &ConversationHistory,
    task: &TaskSequence,
    llm: Llm<'_>,
) -> Result<bool, LlmError> {
    let embedded = render_user_embedding(instruction).map_err(|e| LlmError::Prompt(e.to_string()))?;
    let task_text = format!(
        "{}\n{}",
        task.task_name,
        task.steps
            .iter()
            .map(|s| format!("  {}", serde_json::to_string(s).expect("action call serializes")))
            .collect::<Vec<_>>()
            .join("\n")
    );
    let raw = llm.ask(
        PromptKind::CheckMapping,
        &[("task", task_text)],
        &[embedded, encode_history(history)],
    )?;
    Ok(parse_bool_answer(&raw) == Some(true))
}

/// Rewrites action and ingredient names in a validated sequence to their
/// normalized catalog form, so "Fry" is executed as "fry".
fn canonical_names(mut seq: TaskSequence, catalog: &ActionCatalog) -> TaskSequence {
    for step in &mut seq.steps {
        step.action = normalize_name(&step.action);
        if let Some(spec) = catalog.get(&step.action) {
            for p in spec.params.iter().filter(|p| p.kind == ParamKind::Ingredient) {
                if let Some(ArgValue::Text(name)) = step.args.get_mut(&p.name) {
                    *name = normalize_name(name);
                }
            }
        }
    }
    seq
}

/// Parses and structurally validates a generated sequence. An accepted
/// sequence comes back with normalized names.
pub fn check_new_seq(
    raw: &str,
    catalog: &ActionCatalog,
    inventory: &Inventory,
) -> (ValidationReport, Option<TaskSequence>) {
    let seq = match parse_sequence(raw) {
        Ok(seq) => seq,
        Err(diag) => return (ValidationReport::from_diagnostics(vec![diag]), None),
    };
    let mut diags = Vec::new();
    if seq.steps.is_empty() {
        diags.push(Diagnostic::new(DiagnosticKind::Empty, "sequence has no steps"));
    }
    for (i, step) in seq.steps.iter().enumerate() {
        if let Err(step_diags) = validate_action_call(step, catalog, inventory) {
            diags.extend(step_diags.into_iter().map(|d| Diagnostic {
                detail: format!("step {i}: {}", d.detail),
                ..d
            }));
        }
    }
    let report = ValidationReport::from_diagnostics(diags);
    let accepted = report.valid.then(|| canonical_names(seq, catalog));
    (report, accepted)
}

const NON_QUANTITY_UNITS: &[&str] = &[
    "minute", "minutes", "min", "mins", "second", "seconds", "sec", "secs", "hour", "hours", "hr", "hrs", "degree",
    "degrees", "am", "pm", "o'clock", "percent", "%", "°", "°c", "°f",
];

/// Largest explicitly requested count in the instruction that exceeds the
/// limit, if any. Numbers followed by time or temperature units are ignored.
pub fn requested_quantity_over_limit(instruction: &str, limit: u32) -> Option<i64> {
    let words: Vec<&str> = instruction.split_whitespace().collect();
    let mut worst: Option<i64> = None;
    for (i, word) in words.iter().enumerate() {
        let digits: String = word.chars().filter(|c| !matches!(c, ',' | '_')).collect();
        let digits = digits.trim_matches(|c: char| !c.is_ascii_alphanumeric() && c != '%' && c != '°');
        let numeric: String = digits.chars().take_while(char::is_ascii_digit).collect();
        if numeric.is_empty() {
            continue;
        }
        let suffix = digits[numeric.len()..].to_lowercase();
        let next = words
            .get(i + 1)
            .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase());
        let unit_attached = !suffix.is_empty() && NON_QUANTITY_UNITS.contains(&suffix.as_str());
        let unit_next = next.as_deref().is_some_and(|n| NON_QUANTITY_UNITS.contains(&n));
        if unit_attached || unit_next {
            continue;
        }
        let value: i64 = numeric.parse().unwrap_or(i64::MAX);
        if value > i64::from(limit) && worst.is_none_or(|w| value > w) {
            worst = Some(value);
        }
    }
    worst
}

fn parse_safety_answer(raw: &str) -> SafetyVerdict {
    let t = raw.trim();
    if parse_bool_answer(t) == Some(true) {
        return SafetyVerdict::feasible();
    }
    let lower = t.to_ascii_lowercase();
    if let Some(rest) = lower.strip_prefix("false").map(|_| &t[5..]) {
        let reason = rest.trim_start_matches([':', '.', '-', ' ', ',']).trim();
        return SafetyVerdict::infeasible(reason);
    }
    SafetyVerdict::infeasible("I could not confirm that the request is feasible")
}

/// Feasibility of a request with respect to actions, ingredients and quantity limits.
///
/// A requested quantity over the inventory limit is infeasible without
/// consulting the model. Backend failures and unclear answers are infeasible.
pub fn run_safety_check(
    instruction: &str,
    history: &ConversationHistory,
    catalog: &ActionCatalog,
    inventory: &Inventory,
    llm: Llm<'_>,
) -> (SafetyVerdict, Option<LlmError>) {
    let limit = inventory.quantity_limit();
    if let Some(q) = requested_quantity_over_limit(instruction, limit) {
        return (
            SafetyVerdict::infeasible(format!(
                "the requested quantity of {q} exceeds the limit of {limit} units"
            )),
            None,
        );
    }
    let embedded = match render_user_embedding(instruction) {
        Ok(e) => e,
        Err(e) => return (SafetyVerdict::infeasible("no instruction was given"), Some(LlmError::Prompt(e.to_string()))),
    };
    let answer = llm.ask(
        PromptKind::Safety,
        &[
            ("actions", encode_catalog(catalog)),
            ("ingredients", encode_inventory(inventory)),
            ("quantity_limit", limit.to_string()),
        ],
        &[embedded, encode_history(history)],
    );
    match answer {
        Ok(raw) => (parse_safety_answer(&raw), None),
        Err(e) => (
            SafetyVerdict::infeasible("I could not check whether the request is feasible right now"),
            Some(e),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ActionCall, ArgValue};

    fn lib(names: &[&str]) -> TaskLibrary {
        TaskLibrary::new(
            names
                .iter()
                .map(|n| TaskSequence {
                    task_name: n.to_string(),
                    steps: vec![ActionCall::new("serve")],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn option_labels_roundtrip() {
        for i in [0, 1, 25, 26, 27, 51, 52, 701, 702] {
            assert_eq!(label_index(&option_label(i)), Some(i), "{i}");
        }
        assert_eq!(option_label(0), "A");
        assert_eq!(option_label(26), "AA");
    }

    #[test]
    fn knowno_answer_parsing() {
        let l = lib(&["bacon and egg sandwich", "pancakes", "pbj sandwich"]);
        assert_eq!(parse_knowno_answer("A", &l).unwrap().tasks(), ["bacon and egg sandwich"]);
        assert_eq!(
            parse_knowno_answer("A, C", &l).unwrap().tasks(),
            ["bacon and egg sandwich", "pbj sandwich"]
        );
        assert_eq!(parse_knowno_answer("c and a.", &l).unwrap().len(), 2);
        assert_eq!(parse_knowno_answer("A, A", &l).unwrap().len(), 1);
        assert!(parse_knowno_answer("NONE", &l).unwrap().is_empty());
        assert!(parse_knowno_answer("D", &l).is_none());
        assert!(parse_knowno_answer("the first one", &l).is_none());
        assert!(parse_knowno_answer("", &l).is_none());
    }

    #[test]
    fn quantity_screen() {
        assert_eq!(requested_quantity_over_limit("add 500 eggs to a sandwich", 10), Some(500));
        assert_eq!(requested_quantity_over_limit("make 1,000,000 pancakes", 10), Some(1_000_000));
        assert_eq!(requested_quantity_over_limit("two eggs and 10 strips of bacon", 10), None);
        assert_eq!(requested_quantity_over_limit("ready in 15 minutes with 3 eggs", 10), None);
        assert_eq!(requested_quantity_over_limit("bake at 180°C", 10), None);
        assert_eq!(requested_quantity_over_limit("12 eggs, then 40 pancakes", 10), Some(40));
        assert_eq!(requested_quantity_over_limit("99999999999999999999999 eggs", 10), Some(i64::MAX));
    }

    #[test]
    fn safety_answer_parsing() {
        assert!(parse_safety_answer("True").feasible);
        let v = parse_safety_answer("False: I have no paint or brushes.");
        assert!(!v.feasible);
        assert_eq!(v.reason, "I have no paint or brushes.");
        let v = parse_safety_answer("False");
        assert!(!v.feasible && !v.reason.is_empty());
        assert!(!parse_safety_answer("Probably fine").feasible);
        assert!(!parse_safety_answer("True, but only 3 eggs").feasible);
    }

    #[test]
    fn candidate_set_invariants() {
        let l = lib(&["a", "b"]);
        let set = CandidateSet::from_indices(&l, [1, 1, 7, 0]);
        assert_eq!(set.tasks(), ["a", "b"]);
        assert_eq!(CandidateSet::from_indices(&l, [0]).single(), Some("a"));
    }

    fn fry_catalog() -> ActionCatalog {
        ActionCatalog::new(vec![crate::domain::ActionSpec {
            name: "fry".into(),
            params: vec![
                crate::domain::ParamSpec {
                    name: "ingredient".into(),
                    kind: ParamKind::Ingredient,
                },
                crate::domain::ParamSpec {
                    name: "quantity".into(),
                    kind: ParamKind::Quantity,
                },
            ],
            description: String::new(),
        }])
        .unwrap()
    }

    #[test]
    fn accepted_sequences_use_catalog_names() {
        let inventory = Inventory::new(["egg"], 10).unwrap();
        let raw = r#"{"task_name":"t","steps":[{"action":" Fry","args":{"ingredient":"EGG ","quantity":1}}]}"#;
        let (report, seq) = check_new_seq(raw, &fry_catalog(), &inventory);
        assert!(report.valid);
        let step = &seq.unwrap().steps[0];
        assert_eq!(step.action, "fry");
        assert_eq!(step.args["ingredient"], ArgValue::Text("egg".into()));
    }

    #[test]
    fn check_new_seq_reports_per_step() {
        let catalog = ActionCatalog::new(vec![crate::domain::ActionSpec {
            name: "fry".into(),
            params: vec![
                crate::domain::ParamSpec {
                    name: "ingredient".into(),
                    kind: crate::domain::ParamKind::Ingredient,
                },
                crate::domain::ParamSpec {
                    name: "quantity".into(),
                    kind: crate::domain::ParamKind::Quantity,
                },
            ],
            description: String::new(),
        }])
        .unwrap();
        let inv = Inventory::new(["bacon"], 10).unwrap();
        let good = TaskSequence {
            task_name: "t".into(),
            steps: vec![ActionCall::new("fry")
                .arg("ingredient", ArgValue::Text("bacon".into()))
                .arg("quantity", ArgValue::Int(2))],
        };
        let (report, seq) = check_new_seq(&good.to_wire_json(), &catalog, &inv);
        assert!(report.valid);
        assert_eq!(seq.unwrap(), good);

        let (report, seq) = check_new_seq(r#"{"task_name":"t","steps":[]}"#, &catalog, &inv);
        assert!(!report.valid && report.has(DiagnosticKind::Empty));
        assert!(seq.is_none());

        let (report, _) = check_new_seq("Here you go: pancakes!", &catalog, &inv);
        assert!(report.has(DiagnosticKind::Parse));
    }
}

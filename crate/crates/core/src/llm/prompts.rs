use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::domain::{ActionCatalog, ConversationHistory, Inventory, Role, TaskLibrary};

pub const INSTRUCTION_BEGIN: &str = "[BEGIN USER INSTRUCTION]";
pub const INSTRUCTION_END: &str = "[END USER INSTRUCTION]";
const HISTORY_HEADER: &str = "HISTORY:";
const HISTORY_EMPTY: &str = "HISTORY (empty)";
const TASKS_HEADER: &str = "KNOWN TASKS:";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no user instruction given")]
    EmptyInstruction,
    #[error("template '{template}' lacks required placeholder '{placeholder}'")]
    MissingPlaceholder { template: String, placeholder: String },
    #[error("template '{template}' has no binding for '{placeholder}'")]
    MissingBinding { template: String, placeholder: String },
    #[error("template '{template}' has an unterminated placeholder")]
    Unterminated { template: String },
    #[error("unknown template '{0}'")]
    UnknownTemplate(String),
    #[error("failed to read template '{name}' from {path}: {reason}")]
    Io { name: String, path: String, reason: String },
}

/// Every template the system renders, keyed by file stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptKind {
    Ambiguity,
    KnownTask,
    Knowno,
    CheckMapping,
    Safety,
    Generate,
    FollowUp,
    Summary,
    Confirmation,
    Explanation,
    Baseline,
}

impl PromptKind {
    pub const ALL: [PromptKind; 11] = [
        PromptKind::Ambiguity,
        PromptKind::KnownTask,
        PromptKind::Knowno,
        PromptKind::CheckMapping,
        PromptKind::Safety,
        PromptKind::Generate,
        PromptKind::FollowUp,
        PromptKind::Summary,
        PromptKind::Confirmation,
        PromptKind::Explanation,
        PromptKind::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Ambiguity => "ambiguity",
            PromptKind::KnownTask => "known_task",
            PromptKind::Knowno => "knowno",
            PromptKind::CheckMapping => "check_mapping",
            PromptKind::Safety => "safety",
            PromptKind::Generate => "generate",
            PromptKind::FollowUp => "followup",
            PromptKind::Summary => "summary",
            PromptKind::Confirmation => "confirmation",
            PromptKind::Explanation => "explanation",
            PromptKind::Baseline => "baseline",
        }
    }

    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            PromptKind::Ambiguity | PromptKind::KnownTask => &["known_tasks"],
            PromptKind::Knowno => &["options"],
            PromptKind::CheckMapping => &["task"],
            PromptKind::Safety => &["actions", "ingredients", "quantity_limit"],
            PromptKind::Generate => &["actions", "ingredients", "quantity_limit"],
            PromptKind::FollowUp | PromptKind::Summary | PromptKind::Confirmation => &[],
            PromptKind::Explanation => &["actions", "ingredients", "reason"],
            PromptKind::Baseline => &["system_context"],
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            PromptKind::Ambiguity => include_str!("../../../../config/prompts/ambiguity.txt"),
            PromptKind::KnownTask => include_str!("../../../../config/prompts/known_task.txt"),
            PromptKind::Knowno => include_str!("../../../../config/prompts/knowno.txt"),
            PromptKind::CheckMapping => include_str!("../../../../config/prompts/check_mapping.txt"),
            PromptKind::Safety => include_str!("../../../../config/prompts/safety.txt"),
            PromptKind::Generate => include_str!("../../../../config/prompts/generate.txt"),
            PromptKind::FollowUp => include_str!("../../../../config/prompts/followup.txt"),
            PromptKind::Summary => include_str!("../../../../config/prompts/summary.txt"),
            PromptKind::Confirmation => include_str!("../../../../config/prompts/confirmation.txt"),
            PromptKind::Explanation => include_str!("../../../../config/prompts/explanation.txt"),
            PromptKind::Baseline => include_str!("../../../../config/prompts/baseline.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    required: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new<I, S>(name: impl Into<String>, body: impl Into<String>, required: I) -> Result<Self, PromptError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let name = name.into();
        let body = body.into();
        let required: BTreeSet<String> = required.into_iter().map(Into::into).collect();
        let present = placeholders(&name, &body)?;
        if let Some(missing) = required.iter().find(|r| !present.contains(*r)) {
            return Err(PromptError::MissingPlaceholder {
                template: name,
                placeholder: missing.clone(),
            });
        }
        Ok(Self { name, body, required })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// Substitutes every `{{placeholder}}`; a placeholder without a binding is an error.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or_else(|| PromptError::Unterminated {
                template: self.name.clone(),
            })?;
            let key = after[..end].trim();
            let value = bindings.get(key).ok_or_else(|| PromptError::MissingBinding {
                template: self.name.clone(),
                placeholder: key.to_string(),
            })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out.trim_end().to_string())
    }
}

fn placeholders(name: &str, body: &str) -> Result<BTreeSet<String>, PromptError> {
    let mut found = BTreeSet::new();
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| PromptError::Unterminated {
            template: name.to_string(),
        })?;
        found.insert(after[..end].trim().to_string());
        rest = &after[end + 2..];
    }
    Ok(found)
}

/// The full set of templates, one per [`PromptKind`].
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<PromptKind, PromptTemplate>,
}

impl PromptSet {
    /// Templates compiled into the binary (copies of `config/prompts`).
    pub fn builtin() -> Self {
        let templates = PromptKind::ALL
            .iter()
            .map(|&k| {
                let t = PromptTemplate::new(k.name(), k.builtin_body(), k.required_placeholders().iter().copied())
                    .expect("builtin templates are well-formed");
                (k, t)
            })
            .collect();
        Self { templates }
    }

    /// Loads `<name>.txt` for every kind from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for k in PromptKind::ALL {
            let path = dir.join(format!("{}.txt", k.name()));
            let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                name: k.name().to_string(),
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            templates.insert(k, PromptTemplate::new(k.name(), body, k.required_placeholders().iter().copied())?);
        }
        Ok(Self { templates })
    }

    pub fn get(&self, kind: PromptKind) -> &PromptTemplate {
        &self.templates[&kind]
    }

    pub fn render(&self, kind: PromptKind, bindings: &[(&'static str, String)]) -> Result<String, PromptError> {
        let map: BTreeMap<&str, String> = bindings.iter().cloned().collect();
        self.get(kind).render(&map)
    }
}

/// f(u): wraps the instruction verbatim in a labeled block.
pub fn render_user_embedding(instruction: &str) -> Result<String, PromptError> {
    if instruction.trim().is_empty() {
        return Err(PromptError::EmptyInstruction);
    }
    Ok(format!("{INSTRUCTION_BEGIN}\n{instruction}\n{INSTRUCTION_END}"))
}

/// Inverse of [`render_user_embedding`] over a larger prompt text.
pub fn extract_user_instruction(text: &str) -> Option<String> {
    let open = format!("{INSTRUCTION_BEGIN}\n");
    let close = format!("\n{INSTRUCTION_END}");
    let start = text.find(&open)? + open.len();
    let end = text.rfind(&close)?;
    (end >= start).then(|| text[start..end].to_string())
}

fn escape_line(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_line(text: &str) -> Option<String> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next()? {
            '\\' => out.push('\\'),
            'n' => out.push('\n'),
            'r' => out.push('\r'),
            _ => return None,
        }
    }
    Some(out)
}

fn history_line(index: u32, role: Role, text: &str) -> String {
    format!("{index}. {}: {}", role.label(), escape_line(text))
}

/// g(H): one `turn_index. ROLE: text` line per utterance.
pub fn encode_history(history: &ConversationHistory) -> String {
    if history.is_empty() {
        return HISTORY_EMPTY.to_string();
    }
    let mut out = String::from(HISTORY_HEADER);
    for u in history.utterances() {
        out.push('\n');
        out.push_str(&history_line(u.turn_index, u.role, &u.text));
    }
    out
}

fn parse_history_line(line: &str) -> Option<(u32, Role, String)> {
    let (index, rest) = line.split_once(". ")?;
    let index: u32 = index.parse().ok()?;
    let (role, text) = if let Some(t) = rest.strip_prefix("USER: ") {
        (Role::User, t)
    } else if let Some(t) = rest.strip_prefix("ROBOT: ") {
        (Role::Robot, t)
    } else {
        return None;
    };
    Some((index, role, unescape_line(text)?))
}

/// Parses an [`encode_history`] block back into (index, role, text) triples.
pub fn parse_history(encoded: &str) -> Option<Vec<(u32, Role, String)>> {
    let mut lines = encoded.lines();
    match lines.next()? {
        HISTORY_EMPTY => Some(Vec::new()),
        HISTORY_HEADER => lines.map(parse_history_line).collect(),
        _ => None,
    }
}

/// Locates the g(H) block inside a larger prompt.
pub fn extract_history_block(text: &str) -> Option<String> {
    let mut lines = text.lines().skip_while(|l| *l != HISTORY_HEADER && *l != HISTORY_EMPTY);
    let header = lines.next()?;
    let mut out = String::from(header);
    if header == HISTORY_HEADER {
        for l in lines.take_while(|l| parse_history_line(l).is_some()) {
            out.push('\n');
            out.push_str(l);
        }
    }
    Some(out)
}

/// w(T): every known task with its full step list in wire JSON.
pub fn encode_task_library(library: &TaskLibrary) -> String {
    let mut out = String::from(TASKS_HEADER);
    for task in library.tasks() {
        out.push_str("\n- ");
        out.push_str(&task.task_name);
        for step in &task.steps {
            out.push_str("\n  ");
            out.push_str(&serde_json::to_string(step).expect("action call serializes"));
        }
    }
    out
}

/// Task names only, one bullet per line.
pub fn encode_task_names(library: &TaskLibrary) -> String {
    if library.is_empty() {
        return "(no known tasks)".to_string();
    }
    library.names().map(|n| format!("- {n}")).collect::<Vec<_>>().join("\n")
}

pub fn encode_catalog(catalog: &ActionCatalog) -> String {
    catalog
        .specs()
        .map(|s| {
            if s.description.is_empty() {
                format!("- {}", s.signature())
            } else {
                format!("- {}: {}", s.signature(), s.description)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn encode_inventory(inventory: &Inventory) -> String {
    inventory.ingredients().collect::<Vec<_>>().join(", ")
}

//! The task-sequence wire format and JSON extraction from free-form completions.
//!
//! Wire shape: `{"task_name": string, "steps": [{"action": string, "args": {string: string|integer}}]}`.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::domain::{ActionCall, ArgValue, Diagnostic, DiagnosticKind, TaskSequence};

/// Finds the first JSON object in `text`: a fenced block if there is one,
/// otherwise the first balanced `{...}` span.
pub fn extract_json_block(text: &str) -> Option<&str> {
    if let Some(fenced) = first_fenced_object(text) {
        return Some(fenced);
    }
    let start = text.find('{')?;
    balanced_end(&text[start..]).map(|end| &text[start..start + end])
}

fn first_fenced_object(text: &str) -> Option<&str> {
    let mut rest = text;
    let mut offset = 0;
    while let Some(open) = rest.find("```") {
        let after_ticks = open + 3;
        let line_end = rest[after_ticks..].find('\n')? + after_ticks + 1;
        let close = rest[line_end..].find("```")? + line_end;
        let body = rest[line_end..close].trim();
        if body.starts_with('{') {
            let start = offset + line_end + (rest[line_end..close].len() - rest[line_end..close].trim_start().len());
            return Some(&text[start..start + body.len()]);
        }
        offset += close + 3;
        rest = &text[offset..];
    }
    None
}

/// Byte length of the balanced object starting at `s[0] == '{'`.
fn balanced_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_err(detail: impl Into<String>) -> Diagnostic {
    Diagnostic::new(DiagnosticKind::Parse, detail)
}

/// Parses a completion (optionally fenced or wrapped in prose) into a sequence.
///
/// Only the shape is checked here; catalog and inventory rules are applied
/// separately.
pub fn parse_sequence(raw: &str) -> Result<TaskSequence, Diagnostic> {
    let block = extract_json_block(raw).ok_or_else(|| parse_err("completion contains no JSON object"))?;
    let value: Value = serde_json::from_str(block).map_err(|e| parse_err(format!("invalid JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| parse_err("top-level value is not an object"))?;
    let task_name = obj
        .get("task_name")
        .and_then(Value::as_str)
        .ok_or_else(|| parse_err("missing string field 'task_name'"))?
        .to_string();
    let steps = obj
        .get("steps")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("missing array field 'steps'"))?;

    let mut out = Vec::with_capacity(steps.len());
    for (i, step) in steps.iter().enumerate() {
        let step = step
            .as_object()
            .ok_or_else(|| parse_err(format!("step {i} is not an object")))?;
        let action = step
            .get("action")
            .and_then(Value::as_str)
            .ok_or_else(|| parse_err(format!("step {i} lacks string field 'action'")))?;
        let mut args = BTreeMap::new();
        match step.get("args") {
            None | Some(Value::Null) => {}
            Some(Value::Object(map)) => {
                for (k, v) in map {
                    let value = match v {
                        Value::String(s) => ArgValue::Text(s.clone()),
                        Value::Number(n) => ArgValue::Int(n.as_i64().ok_or_else(|| {
                            parse_err(format!("step {i} arg '{k}' is not an integer: {n}"))
                        })?),
                        other => {
                            return Err(parse_err(format!(
                                "step {i} arg '{k}' must be a string or integer, got {other}"
                            )))
                        }
                    };
                    args.insert(k.clone(), value);
                }
            }
            Some(_) => return Err(parse_err(format!("step {i} field 'args' is not an object"))),
        }
        out.push(ActionCall {
            action: action.to_string(),
            args,
        });
    }
    Ok(TaskSequence { task_name, steps: out })
}

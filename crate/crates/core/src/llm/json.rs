//! Pulling a JSON object out of free-form model output.

use serde_json::Value;

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JsonKind {
    String,
    /// Non-empty array of strings.
    StringList,
    Any,
}

#[derive(Debug, Clone, Copy)]
pub struct JsonSchema {
    pub required: &'static [(&'static str, JsonKind)],
}

pub const INSTRUCTION_SCHEMA: JsonSchema =
    JsonSchema { required: &[("task_instruction", JsonKind::String), ("search_queries", JsonKind::StringList)] };

/// Returns the first well-formed JSON object in `text`, ignoring surrounding
/// prose and code fences. If none parses strictly, a second pass drops
/// trailing commas before `]`/`}` (a common model slip) and tries again.
pub fn extract_json_payload(text: &str, schema: Option<&JsonSchema>) -> Result<Value, LlmError> {
    let value = first_object(text).or_else(|| first_object(&strip_trailing_commas(text))).ok_or(LlmError::NoJson)?;
    if let Some(schema) = schema {
        validate(&value, schema)?;
    }
    Ok(value)
}

fn first_object(text: &str) -> Option<Value> {
    text.char_indices().filter(|&(_, c)| c == '{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v @ Value::Object(_))) => Some(v),
            _ => None,
        }
    })
}

fn strip_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        if c == '"' {
            in_string = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some(']') | Some('}')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn validate(value: &Value, schema: &JsonSchema) -> Result<(), LlmError> {
    for &(key, kind) in schema.required {
        let field = value.get(key).ok_or_else(|| LlmError::MissingKey(key.to_owned()))?;
        let ok = match kind {
            JsonKind::Any => true,
            JsonKind::String => field.is_string(),
            JsonKind::StringList => field.as_array().is_some_and(|a| !a.is_empty() && a.iter().all(Value::is_string)),
        };
        if !ok {
            return Err(LlmError::WrongType { key: key.to_owned(), expected: format!("{kind:?}") });
        }
    }
    Ok(())
}

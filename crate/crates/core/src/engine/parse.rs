//! Extraction of structured payloads from free-form model output.
//!
//! Responses are expected as a THOUGHT section followed by JSON. The
//! extractor walks every outermost well-formed `{...}` / `[...]` span in
//! order and returns the first one that validates against the expected
//! schema. Unknown extra fields are ignored; wrong types, missing fields and
//! out-of-range scores are typed errors. Nothing here panics on any input.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{DimensionDraft, IdeaDraft, Score, SCORE_MAX, SCORE_MIN};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExpectedSchema {
    /// At least `count` dimension pairs; extras are dropped.
    DimensionPairs { count: usize },
    /// Exactly `count` idea drafts (extras dropped).
    IdeaDrafts { count: usize },
    SingleIdea,
    /// One row per title, each with `dimensions` integer scores.
    Evaluations { titles: Vec<String>, dimensions: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvaluationRow {
    pub title: String,
    /// One (score, reasoning) per dimension, in prompt order.
    pub scores: Vec<(Score, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    DimensionPairs(Vec<DimensionDraft>),
    IdeaDrafts(Vec<IdeaDraft>),
    SingleIdea(IdeaDraft),
    /// Rows aligned with the expected titles.
    Evaluations(Vec<EvaluationRow>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    NoPayload,
    Schema,
    OutOfRange,
    TitleMismatch,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind:?}: {detail}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub detail: String,
    /// The model output that failed to parse.
    pub raw: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
            raw: String::new(),
        }
    }

    fn schema(detail: impl Into<String>) -> Self {
        Self::new(ParseErrorKind::Schema, detail)
    }
}

pub fn parse_response(raw: &str, schema: &ExpectedSchema) -> Result<Payload, ParseError> {
    let mut first_err: Option<ParseError> = None;
    for value in json_spans(raw) {
        match validate(&value, schema) {
            Ok(p) => return Ok(p),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    let mut err = first_err.unwrap_or_else(|| ParseError::new(ParseErrorKind::NoPayload, "no JSON payload found"));
    err.raw = raw.to_string();
    Err(err)
}

/// Well-formed outermost JSON objects/arrays, in order of appearance.
pub fn json_spans(text: &str) -> Vec<Value> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' || bytes[i] == b'[' {
            if let Some(end) = matching_close(bytes, i) {
                // Brackets are ASCII, so both ends are char boundaries.
                if let Ok(v) = serde_json::from_str::<Value>(&text[i..=end]) {
                    out.push(v);
                    i = end + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

/// Index of the bracket closing the one at `start`, honoring JSON strings.
fn matching_close(bytes: &[u8], start: usize) -> Option<usize> {
    let mut stack: Vec<u8> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(start + offset);
                }
            }
            _ => {}
        }
    }
    None
}

/// Complete objects inside the first array of objects, even when the array
/// itself is cut off. Used to recover drafts from truncated or streaming
/// output.
pub fn salvage_array_objects(text: &str) -> Vec<Value> {
    let bytes = text.as_bytes();
    let mut i = 0;
    // Find '[' followed (after whitespace) by '{'.
    let start = loop {
        if i >= bytes.len() {
            return Vec::new();
        }
        if bytes[i] == b'[' {
            let next = bytes[i + 1..].iter().position(|b| !b.is_ascii_whitespace());
            if let Some(n) = next {
                if bytes[i + 1 + n] == b'{' {
                    break i + 1 + n;
                }
            }
        }
        i += 1;
    };
    let mut out = Vec::new();
    let mut pos = start;
    loop {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b',') {
            pos += 1;
        }
        if pos >= bytes.len() || bytes[pos] != b'{' {
            break;
        }
        let Some(end) = matching_close(bytes, pos) else { break };
        match serde_json::from_str::<Value>(&text[pos..=end]) {
            Ok(v) => out.push(v),
            Err(_) => break,
        }
        pos = end + 1;
    }
    out
}

fn normalize_key(k: &str) -> String {
    k.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Case- and separator-insensitive field lookup ("dimension_a" ~ "dimensionA").
fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Option<&'a Value> {
    if let Some(v) = obj.get(name) {
        return Some(v);
    }
    let want = normalize_key(name);
    obj.iter().find(|(k, _)| normalize_key(k) == want).map(|(_, v)| v)
}

fn string_field(obj: &Map<String, Value>, name: &str, path: &str) -> Result<String, ParseError> {
    match field(obj, name) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(Value::String(_)) => Err(ParseError::schema(format!("{path}.{name} is empty"))),
        Some(other) => Err(ParseError::schema(format!(
            "{path}.{name} should be a string, got {}",
            type_name(other)
        ))),
        None => Err(ParseError::schema(format!("{path}.{name} is missing"))),
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// The list of items in a payload: a bare array, or the first array-valued
/// field of an object (preferring `key`).
fn items<'a>(value: &'a Value, key: &str) -> Option<&'a Vec<Value>> {
    match value {
        Value::Array(a) => Some(a),
        Value::Object(o) => match field(o, key) {
            Some(Value::Array(a)) => Some(a),
            _ => o.values().find_map(|v| v.as_array()),
        },
        _ => None,
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, ParseError> {
    v.as_object()
        .ok_or_else(|| ParseError::schema(format!("{path} should be an object, got {}", type_name(v))))
}

pub fn idea_from_value(v: &Value, path: &str) -> Result<IdeaDraft, ParseError> {
    let obj = as_object(v, path)?;
    Ok(IdeaDraft {
        name: string_field(obj, "Name", path)?,
        title: string_field(obj, "Title", path)?,
        problem: string_field(obj, "Problem", path)?,
    })
}

fn dimension_from_value(v: &Value, path: &str) -> Result<DimensionDraft, ParseError> {
    let obj = as_object(v, path)?;
    let d = DimensionDraft {
        pole_a_name: string_field(obj, "dimensionA", path)?,
        pole_b_name: string_field(obj, "dimensionB", path)?,
        pole_a_description: string_field(obj, "descriptionA", path)?,
        pole_b_description: string_field(obj, "descriptionB", path)?,
        explanation: string_field(obj, "explanation", path)?,
    };
    if d.pole_a_name == d.pole_b_name {
        return Err(ParseError::schema(format!("{path}: both poles are named {:?}", d.pole_a_name)));
    }
    Ok(d)
}

fn integer_score(v: &Value, path: &str) -> Result<Score, ParseError> {
    let n = match v {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i
            } else if let Some(f) = n.as_f64().filter(|f| f.is_finite() && f.fract() == 0.0) {
                // Integral but possibly far outside i64; saturating is fine
                // since anything that large fails the range check below.
                f as i64
            } else {
                return Err(ParseError::schema(format!("{path} must be an integer, got {n}")));
            }
        }
        other => {
            return Err(ParseError::schema(format!(
                "{path} must be an integer, got {}",
                type_name(other)
            )))
        }
    };
    Score::new(n).map_err(|_| {
        ParseError::new(
            ParseErrorKind::OutOfRange,
            format!("{path} = {v} is outside [{SCORE_MIN}, {SCORE_MAX}]"),
        )
    })
}

fn evaluation_from_value(v: &Value, dimensions: usize, path: &str) -> Result<EvaluationRow, ParseError> {
    let obj = as_object(v, path)?;
    let title = string_field(obj, "Title", path)?;
    let mut scores = Vec::with_capacity(dimensions);
    for i in 1..=dimensions {
        let key = format!("Dimension{i}Score");
        let raw = field(obj, &key).ok_or_else(|| ParseError::schema(format!("{path}.{key} is missing")))?;
        let score = integer_score(raw, &format!("{path}.{key}"))?;
        let reasoning = field(obj, &format!("Dimension{i}Reasoning"))
            .and_then(Value::as_str)
            .unwrap_or_default()
            .trim()
            .to_string();
        scores.push((score, reasoning));
    }
    Ok(EvaluationRow { title, scores })
}

fn validate(value: &Value, schema: &ExpectedSchema) -> Result<Payload, ParseError> {
    match schema {
        ExpectedSchema::DimensionPairs { count } => {
            let list = items(value, "dimension_pairs")
                .ok_or_else(|| ParseError::schema("expected a dimension_pairs array"))?;
            if list.len() < *count {
                return Err(ParseError::schema(format!(
                    "expected {count} dimension pairs, got {}",
                    list.len()
                )));
            }
            let pairs = list
                .iter()
                .take(*count)
                .enumerate()
                .map(|(i, v)| dimension_from_value(v, &format!("dimension_pairs[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Payload::DimensionPairs(pairs))
        }
        ExpectedSchema::IdeaDrafts { count } => {
            let list = items(value, "ideas").ok_or_else(|| ParseError::schema("expected an array of ideas"))?;
            if list.len() < *count {
                return Err(ParseError::schema(format!("expected {count} ideas, got {}", list.len())));
            }
            let drafts = list
                .iter()
                .take(*count)
                .enumerate()
                .map(|(i, v)| idea_from_value(v, &format!("[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Payload::IdeaDrafts(drafts))
        }
        ExpectedSchema::SingleIdea => {
            // Accept the idea itself, a wrapper object, or a one-element array.
            let candidate = match value {
                Value::Array(a) if a.len() == 1 => &a[0],
                Value::Object(o) if field(o, "Title").is_none() => {
                    o.values().find(|v| v.is_object()).unwrap_or(value)
                }
                _ => value,
            };
            Ok(Payload::SingleIdea(idea_from_value(candidate, "idea")?))
        }
        ExpectedSchema::Evaluations { titles, dimensions } => {
            let list = items(value, "evaluations")
                .ok_or_else(|| ParseError::schema("expected an array of evaluations"))?;
            let rows = list
                .iter()
                .enumerate()
                .map(|(i, v)| evaluation_from_value(v, *dimensions, &format!("[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let mut used = vec![false; rows.len()];
            let mut aligned = Vec::with_capacity(titles.len());
            for title in titles {
                let idx = rows
                    .iter()
                    .enumerate()
                    .position(|(i, r)| !used[i] && r.title == *title)
                    .ok_or_else(|| {
                        ParseError::new(
                            ParseErrorKind::TitleMismatch,
                            format!("no evaluation with exact title {title:?}"),
                        )
                    })?;
                used[idx] = true;
                aligned.push(rows[idx].clone());
            }
            Ok(Payload::Evaluations(aligned))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = r#"THOUGHT: the first idea [1] differs from the second.

```json
[
  {"Name": "a", "Title": "Alpha", "Problem": "P1"},
  {"Name": "b", "Title": "Beta", "Problem": "P2", "confidence": 0.9},
  {"name": "c", "title": "Gamma", "problem": "P3"}
]
```"#;

    #[test]
    fn three_drafts_after_thought() {
        let p = parse_response(THREE, &ExpectedSchema::IdeaDrafts { count: 3 }).unwrap();
        let Payload::IdeaDrafts(d) = p else { panic!() };
        assert_eq!(d.len(), 3);
        assert_eq!(d[1].title, "Beta");
        assert_eq!(d[2].problem, "P3");
    }

    #[test]
    fn prose_only_is_no_payload() {
        let e = parse_response("I think these are great ideas.", &ExpectedSchema::SingleIdea).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::NoPayload);
        assert_eq!(e.raw, "I think these are great ideas.");
    }

    #[test]
    fn wrong_type_is_schema_error() {
        let e = parse_response(r#"[{"Name": 3, "Title": "t", "Problem": "p"}]"#, &ExpectedSchema::IdeaDrafts {
            count: 1,
        })
        .unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Schema);
        assert!(e.detail.contains("[0].Name"), "{}", e.detail);
    }

    #[test]
    fn brackets_inside_strings_are_ignored() {
        let raw = r#"THOUGHT: ok {"Name": "x", "Title": "Uses ] and } chars", "Problem": "p \" [ q"}"#;
        let Payload::SingleIdea(d) = parse_response(raw, &ExpectedSchema::SingleIdea).unwrap() else { panic!() };
        assert_eq!(d.title, "Uses ] and } chars");
    }

    #[test]
    fn wrapped_single_idea() {
        let raw = r#"MODIFIED IDEA JSON: {"idea": {"Name": "x", "Title": "T", "Problem": "p"}}"#;
        let Payload::SingleIdea(d) = parse_response(raw, &ExpectedSchema::SingleIdea).unwrap() else { panic!() };
        assert_eq!(d.title, "T");
    }

    #[test]
    fn dimension_pairs_object() {
        let raw = r#"THOUGHT: x
{"dimension_pairs": [
 {"dimensionA": "Complex Models", "dimensionB": "Simple Models", "descriptionA": "a", "descriptionB": "b", "explanation": "e"},
 {"dimension_a": "Data Privacy", "dimension_b": "Data Utilization", "description_a": "a", "description_b": "b", "explanation": "e"}
]}"#;
        let Payload::DimensionPairs(d) =
            parse_response(raw, &ExpectedSchema::DimensionPairs { count: 2 }).unwrap()
        else {
            panic!()
        };
        assert_eq!(d[1].pole_b_name, "Data Utilization");
        assert!(parse_response(raw, &ExpectedSchema::DimensionPairs { count: 3 }).is_err());
    }

    #[test]
    fn evaluation_ranges_and_titles() {
        let schema = ExpectedSchema::Evaluations {
            titles: vec!["Alpha".into(), "Beta".into()],
            dimensions: 1,
        };
        let ok = r#"[{"Title": "Beta", "Dimension1Score": 0, "Dimension1Reasoning": "even"},
                     {"Title": "Alpha", "Dimension1Score": -40.0}]"#;
        let Payload::Evaluations(rows) = parse_response(ok, &schema).unwrap() else { panic!() };
        assert_eq!(rows[0].title, "Alpha");
        assert_eq!(rows[0].scores[0].0.get(), -40);
        assert_eq!(rows[1].scores[0].1, "even");

        let out = r#"[{"Title": "Alpha", "Dimension1Score": 70}, {"Title": "Beta", "Dimension1Score": 0}]"#;
        assert_eq!(parse_response(out, &schema).unwrap_err().kind, ParseErrorKind::OutOfRange);

        let frac = r#"[{"Title": "Alpha", "Dimension1Score": 2.5}, {"Title": "Beta", "Dimension1Score": 0}]"#;
        assert_eq!(parse_response(frac, &schema).unwrap_err().kind, ParseErrorKind::Schema);

        let renamed = r#"[{"Title": "Alpha!", "Dimension1Score": 1}, {"Title": "Beta", "Dimension1Score": 0}]"#;
        assert_eq!(parse_response(renamed, &schema).unwrap_err().kind, ParseErrorKind::TitleMismatch);
    }

    #[test]
    fn salvage_truncated_array() {
        let raw = r#"THOUGHT: see [1].
[{"Name": "a", "Title": "Alpha", "Problem": "P1"}, {"Name": "b", "Title": "Be"#;
        let objs = salvage_array_objects(raw);
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0]["Title"], "Alpha");
        assert!(salvage_array_objects("no arrays").is_empty());
        assert!(salvage_array_objects("[").is_empty());
    }
}

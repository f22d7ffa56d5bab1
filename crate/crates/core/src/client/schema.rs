//! Lenient parsing of structured model output against a declared schema.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    Bool,
    String,
    Number,
    Integer,
    StringList,
    Array,
    Object,
}

impl FieldType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            FieldType::Bool => v.is_boolean(),
            FieldType::String => v.is_string(),
            FieldType::Number => v.is_number(),
            FieldType::Integer => v.is_i64() || v.is_u64(),
            FieldType::StringList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
            FieldType::Array => v.is_array(),
            FieldType::Object => v.is_object(),
        }
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FieldType::Bool => "bool",
            FieldType::String => "string",
            FieldType::Number => "number",
            FieldType::Integer => "integer",
            FieldType::StringList => "list of strings",
            FieldType::Array => "array",
            FieldType::Object => "object",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub ty: FieldType,
    pub required: bool,
}

/// Declares the top-level object fields a structured reply must carry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaHint {
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

impl SchemaHint {
    pub fn new(name: impl Into<String>) -> Self {
        SchemaHint { name: name.into(), fields: Vec::new() }
    }

    pub fn required(mut self, name: &str, ty: FieldType) -> Self {
        self.fields.push(FieldSpec { name: name.into(), ty, required: true });
        self
    }

    pub fn optional(mut self, name: &str, ty: FieldType) -> Self {
        self.fields.push(FieldSpec { name: name.into(), ty, required: false });
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("no JSON object found in model output")]
    NoObject,
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("schema {schema}: missing fields [{}]; mistyped fields [{}]", missing.join(", "), mistyped.join(", "))]
    Fields {
        schema: String,
        missing: Vec<String>,
        mistyped: Vec<String>,
    },
}

/// Extracts and validates a JSON object from raw model text.
///
/// Code fences and any prose before the first `{` are skipped. Fields not
/// declared in the schema are ignored.
pub fn parse_structured(schema: &SchemaHint, raw: &str) -> Result<Value, SchemaError> {
    let body = strip_fences(raw);
    let start = body.find('{').ok_or(SchemaError::NoObject)?;
    let mut stream = serde_json::Deserializer::from_str(&body[start..]).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(SchemaError::Malformed(e.to_string())),
        None => return Err(SchemaError::NoObject),
    };
    let obj = value.as_object().ok_or(SchemaError::NoObject)?;

    let mut missing = Vec::new();
    let mut mistyped = Vec::new();
    for f in &schema.fields {
        match obj.get(&f.name) {
            None | Some(Value::Null) if f.required => missing.push(f.name.clone()),
            None | Some(Value::Null) => {}
            Some(v) if !f.ty.accepts(v) => mistyped.push(format!("{} (expected {})", f.name, f.ty)),
            Some(_) => {}
        }
    }
    if missing.is_empty() && mistyped.is_empty() {
        Ok(value)
    } else {
        Err(SchemaError::Fields { schema: schema.name.clone(), missing, mistyped })
    }
}

fn strip_fences(raw: &str) -> &str {
    let Some(open) = raw.find("```") else {
        return raw;
    };
    let after = &raw[open + 3..];
    // skip the info string (e.g. "json") up to the end of the line
    let content_start = after.find('\n').map_or(0, |i| i + 1);
    let content = &after[content_start..];
    match content.find("```") {
        Some(close) => &content[..close],
        None => content,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> SchemaHint {
        SchemaHint::new("extraction")
            .required("advised", FieldType::StringList)
            .required("not_advised", FieldType::StringList)
    }

    #[test]
    fn fenced_object_parses() {
        let raw = "Here you go:\n```json\n{\"advised\": [\"Tal med Finn\"], \"not_advised\": []}\n```\nDone.";
        let v = parse_structured(&schema(), raw).unwrap();
        assert_eq!(v["advised"][0], "Tal med Finn");
    }

    #[test]
    fn leading_prose_is_skipped() {
        let raw = "Sure! {\"advised\": [], \"not_advised\": [\"x\"]} trailing";
        assert!(parse_structured(&schema(), raw).is_ok());
    }

    #[test]
    fn missing_field_is_named() {
        let err = parse_structured(&schema(), "{\"advised\": []}").unwrap_err();
        match &err {
            SchemaError::Fields { missing, .. } => assert_eq!(missing, &vec!["not_advised".to_string()]),
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("not_advised"));
    }

    #[test]
    fn mistyped_field_is_named() {
        let err = parse_structured(&schema(), "{\"advised\": \"x\", \"not_advised\": []}").unwrap_err();
        assert!(matches!(err, SchemaError::Fields { ref mistyped, .. } if mistyped[0].starts_with("advised")));
    }

    #[test]
    fn extra_fields_are_ignored() {
        let v = parse_structured(&schema(), "{\"advised\": [], \"not_advised\": [], \"note\": 3}").unwrap();
        assert_eq!(v["note"], 3);
    }

    #[test]
    fn no_object() {
        assert_eq!(parse_structured(&schema(), "nothing here"), Err(SchemaError::NoObject));
        assert!(matches!(parse_structured(&schema(), "{\"advised\": [}"), Err(SchemaError::Malformed(_))));
    }
}

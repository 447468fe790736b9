use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    TruePositive,
    FalsePositive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::TruePositive => "TRUE_POSITIVE",
            Verdict::FalsePositive => "FALSE_POSITIVE",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

impl Confidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Confidence::High => "HIGH",
            Confidence::Medium => "MEDIUM",
            Confidence::Low => "LOW",
        }
    }
}

/// A response that passed schema validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidResponse {
    pub verdict: Verdict,
    pub confidence: Confidence,
    pub reasoning: String,
    /// The object was recovered from surrounding text.
    pub salvaged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValidationError {
    #[error("response is not a JSON object: {detail}")]
    NotJson { detail: String },
    #[error("missing field `{field}`")]
    MissingField { field: String },
    #[error("field `{field}` has value {value:?} outside its enumeration")]
    BadEnum { field: String, value: String },
    #[error("field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
}

impl ValidationError {
    pub fn kind(&self) -> &'static str {
        match self {
            ValidationError::NotJson { .. } => "NOT_JSON",
            ValidationError::MissingField { .. } => "MISSING_FIELD",
            ValidationError::BadEnum { .. } => "BAD_ENUM",
            ValidationError::InvalidField { .. } => "INVALID_FIELD",
        }
    }
}

fn text_field<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a str, ValidationError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(ValidationError::MissingField { field: field.into() }),
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(ValidationError::InvalidField {
            field: field.into(),
            reason: format!("expected a string, found {other}"),
        }),
    }
}

fn enum_field<T: Copy>(obj: &Map<String, Value>, field: &str, allowed: &[(&str, T)]) -> Result<T, ValidationError> {
    let raw = text_field(obj, field)?;
    let key = raw.trim();
    allowed
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(key))
        .map(|&(_, v)| v)
        .ok_or_else(|| ValidationError::BadEnum { field: field.into(), value: raw.into() })
}

fn strict(raw: &str) -> Result<(Verdict, Confidence, String), ValidationError> {
    let value: Value =
        serde_json::from_str(raw.trim()).map_err(|e| ValidationError::NotJson { detail: e.to_string() })?;
    let Value::Object(obj) = value else {
        return Err(ValidationError::NotJson { detail: "top-level value is not an object".into() });
    };
    let verdict = enum_field(
        &obj,
        "verdict",
        &[("TRUE_POSITIVE", Verdict::TruePositive), ("FALSE_POSITIVE", Verdict::FalsePositive)],
    )?;
    let confidence = enum_field(
        &obj,
        "confidence",
        &[("HIGH", Confidence::High), ("MEDIUM", Confidence::Medium), ("LOW", Confidence::Low)],
    )?;
    let reasoning = text_field(&obj, "reasoning")?.trim();
    if reasoning.is_empty() {
        return Err(ValidationError::InvalidField { field: "reasoning".into(), reason: "must not be empty".into() });
    }
    Ok((verdict, confidence, reasoning.to_string()))
}

/// Validates a model reply against the three-field verdict schema.
///
/// The whole reply is tried first. If that fails, the text from the first `{`
/// to the last `}` is tried once more and a success is flagged as salvaged.
/// When both passes fail the error of the salvage pass is reported, since it
/// looked at the embedded object.
pub fn validate_response(raw: &str) -> Result<ValidResponse, ValidationError> {
    let strict_err = match strict(raw) {
        Ok((verdict, confidence, reasoning)) => {
            return Ok(ValidResponse { verdict, confidence, reasoning, salvaged: false })
        }
        Err(e) => e,
    };
    let (Some(open), Some(close)) = (raw.find('{'), raw.rfind('}')) else {
        return Err(strict_err);
    };
    if close < open || raw[open..=close].len() == raw.trim().len() {
        return Err(strict_err);
    }
    let (verdict, confidence, reasoning) = strict(&raw[open..=close])?;
    Ok(ValidResponse { verdict, confidence, reasoning, salvaged: true })
}

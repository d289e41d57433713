//! Strict JSON replies validated against a declared field contract.
//!
//! A reply is first parsed as-is. If that fails, exactly one recovery pass
//! runs: code fences are stripped, the text is cut to the outermost `{...}`,
//! and bare Python literals (`None`, `True`, `False`) outside strings are
//! rewritten to JSON. Anything still unparseable is an error.

use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum ValueKind {
    String,
    Integer { min: i64, max: i64 },
    IntegerList,
    StringList,
    /// Matched case-insensitively (spaces and underscores are equivalent)
    /// and canonicalized to the declared spelling.
    Enumeration(&'static [&'static str]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub name: &'static str,
    pub kind: ValueKind,
    /// Nullable fields may also be absent.
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JsonContract {
    pub name: &'static str,
    pub fields: Vec<FieldSpec>,
}

impl JsonContract {
    pub fn new(name: &'static str) -> Self {
        JsonContract {
            name,
            fields: Vec::new(),
        }
    }

    pub fn field(mut self, name: &'static str, kind: ValueKind) -> Self {
        self.fields.push(FieldSpec {
            name,
            kind,
            nullable: false,
        });
        self
    }

    pub fn nullable(mut self, name: &'static str, kind: ValueKind) -> Self {
        self.fields.push(FieldSpec {
            name,
            kind,
            nullable: true,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContractError {
    #[error("reply is not valid JSON after recovery: {0}")]
    Unparseable(String),
    #[error("reply is JSON but not an object")]
    NotAnObject,
    #[error("missing required key {0:?}")]
    MissingKey(String),
    #[error("key {key:?} should be {expected}")]
    WrongKind { key: String, expected: String },
    #[error("value {value:?} of {key:?} is outside its domain")]
    OutOfDomain { key: String, value: String },
    #[error("key {key:?} is invalid: {reason}")]
    Invalid { key: String, reason: String },
}

/// A reply that satisfied its contract. Values are canonicalized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Record(pub Map<String, Value>);

impl Record {
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key).filter(|v| !v.is_null())
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(Value::as_str)
    }

    pub fn int(&self, key: &str) -> Option<i64> {
        self.get(key).and_then(Value::as_i64)
    }

    pub fn ids(&self, key: &str) -> Vec<u64> {
        self.get(key)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_u64).collect())
            .unwrap_or_default()
    }

    pub fn strings(&self, key: &str) -> Vec<String> {
        self.get(key)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        Value::Object(self.0.clone()).to_string()
    }
}

fn normalize_label(s: &str) -> String {
    s.trim().replace(' ', "_").to_lowercase()
}

/// Canonical spelling of `value` in `domain`, if it is a member.
pub fn match_domain(domain: &'static [&'static str], value: &str) -> Option<&'static str> {
    let n = normalize_label(value);
    domain.iter().copied().find(|d| normalize_label(d) == n)
}

fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```JSON")).or_else(|| t.strip_prefix("```")).unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

fn outer_object(raw: &str) -> &str {
    match (raw.find('{'), raw.rfind('}')) {
        (Some(a), Some(b)) if a < b => &raw[a..=b],
        _ => raw,
    }
}

/// Rewrites bare `None`/`True`/`False` tokens that sit outside strings.
fn python_literals(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let chars: Vec<char> = raw.chars().collect();
    let mut in_str = false;
    let mut escaped = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_str {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            i += 1;
            continue;
        }
        if c == '"' {
            in_str = true;
            out.push(c);
            i += 1;
            continue;
        }
        let boundary_before = i == 0 || !chars[i - 1].is_alphanumeric();
        let mut replaced = false;
        for (lit, json) in [("None", "null"), ("True", "true"), ("False", "false")] {
            let n = lit.len();
            if boundary_before
                && chars[i..].iter().take(n).collect::<String>() == lit
                && chars.get(i + n).is_none_or(|c| !c.is_alphanumeric())
            {
                out.push_str(json);
                i += n;
                replaced = true;
                break;
            }
        }
        if !replaced {
            out.push(c);
            i += 1;
        }
    }
    out
}

fn parse_value(raw: &str) -> Result<Value, ContractError> {
    match serde_json::from_str::<Value>(raw.trim()) {
        Ok(v) => Ok(v),
        Err(_) => {
            let recovered = python_literals(outer_object(strip_fences(raw)));
            serde_json::from_str(&recovered).map_err(|e| ContractError::Unparseable(e.to_string()))
        }
    }
}

fn as_id(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn check_field(spec: &FieldSpec, value: &Value) -> Result<Value, ContractError> {
    let wrong = |expected: &str| ContractError::WrongKind {
        key: spec.name.to_string(),
        expected: expected.to_string(),
    };
    match &spec.kind {
        ValueKind::String => value.as_str().map(|s| Value::String(s.to_string())).ok_or_else(|| wrong("a string")),
        ValueKind::Integer { min, max } => {
            let n = value
                .as_i64()
                .or_else(|| value.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
                .ok_or_else(|| wrong("an integer"))?;
            if n < *min || n > *max {
                return Err(ContractError::OutOfDomain {
                    key: spec.name.to_string(),
                    value: n.to_string(),
                });
            }
            Ok(Value::from(n))
        }
        ValueKind::IntegerList => {
            let arr = value.as_array().ok_or_else(|| wrong("a list of integers"))?;
            arr.iter()
                .map(|v| as_id(v).map(Value::from).ok_or_else(|| wrong("a list of integers")))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        ValueKind::StringList => {
            let arr = value.as_array().ok_or_else(|| wrong("a list of strings"))?;
            arr.iter()
                .map(|v| v.as_str().map(|s| Value::String(s.to_string())).ok_or_else(|| wrong("a list of strings")))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        ValueKind::Enumeration(domain) => {
            let s = value.as_str().ok_or_else(|| wrong("an enumeration string"))?;
            match_domain(domain, s)
                .map(|c| Value::String(c.to_string()))
                .ok_or_else(|| ContractError::OutOfDomain {
                    key: spec.name.to_string(),
                    value: s.to_string(),
                })
        }
    }
}

fn validate(value: Value, contract: &JsonContract) -> Result<Record, ContractError> {
    let obj = match value {
        Value::Object(o) => o,
        _ => return Err(ContractError::NotAnObject),
    };
    let mut out = Map::new();
    for spec in &contract.fields {
        match obj.get(spec.name) {
            None | Some(Value::Null) if spec.nullable => {
                out.insert(spec.name.to_string(), Value::Null);
            }
            None => return Err(ContractError::MissingKey(spec.name.to_string())),
            Some(Value::Null) => {
                return Err(ContractError::WrongKind {
                    key: spec.name.to_string(),
                    expected: "a non-null value".to_string(),
                })
            }
            Some(v) => {
                out.insert(spec.name.to_string(), check_field(spec, v)?);
            }
        }
    }
    Ok(Record(out))
}

/// Parses and validates a reply that must be a JSON object.
pub fn parse_strict_json(raw: &str, contract: &JsonContract) -> Result<Record, ContractError> {
    validate(parse_value(raw)?, contract)
}

/// Like [`parse_strict_json`], but a bare `None`/`null` reply (the prompts'
/// "cannot infer" answer) yields `Ok(None)`.
pub fn parse_answer(raw: &str, contract: &JsonContract) -> Result<Option<Record>, ContractError> {
    let t = strip_fences(raw).trim().trim_end_matches('.');
    if t.eq_ignore_ascii_case("none") || t == "null" {
        return Ok(None);
    }
    parse_strict_json(raw, contract).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MARITAL: &[&str] = &["married", "divorced", "single", "widowed", "unknown"];

    fn age() -> JsonContract {
        JsonContract::new("age")
            .nullable("age", ValueKind::Integer { min: 0, max: 150 })
            .field("explanation", ValueKind::String)
    }

    fn marital() -> JsonContract {
        JsonContract::new("marital")
            .field("marital_status", ValueKind::Enumeration(MARITAL))
            .field("explanation", ValueKind::String)
    }

    #[test]
    fn age_reply() {
        let r = parse_strict_json(r#"{"age": 28, "explanation": "21 + (2020 - 2013)"}"#, &age()).unwrap();
        assert_eq!(r.int("age"), Some(28));
    }

    #[test]
    fn fenced_reply_recovers() {
        let raw = "Sure! ```json\n{\"age\": 30, \"explanation\": \"x\"}\n``` hope that helps";
        assert_eq!(parse_strict_json(raw, &age()).unwrap().int("age"), Some(30));
    }

    #[test]
    fn python_none_recovers() {
        let raw = r#"{"age": None, "explanation": "None of the tweets say"}"#;
        let r = parse_strict_json(raw, &age()).unwrap();
        assert_eq!(r.int("age"), None);
        assert_eq!(r.str("explanation"), Some("None of the tweets say"));
    }

    #[test]
    fn out_of_domain_enum() {
        let err = parse_strict_json(r#"{"marital_status": "engaged", "explanation": ""}"#, &marital()).unwrap_err();
        assert_eq!(
            err,
            ContractError::OutOfDomain {
                key: "marital_status".into(),
                value: "engaged".into()
            }
        );
    }

    #[test]
    fn enum_is_canonicalized() {
        let r = parse_strict_json(r#"{"marital_status": "Single", "explanation": ""}"#, &marital()).unwrap();
        assert_eq!(r.str("marital_status"), Some("single"));
    }

    #[test]
    fn distinguishes_causes() {
        assert!(matches!(parse_strict_json("not json at all", &age()), Err(ContractError::Unparseable(_))));
        assert_eq!(
            parse_strict_json(r#"{"age": 3}"#, &age()),
            Err(ContractError::MissingKey("explanation".into()))
        );
        assert!(matches!(
            parse_strict_json(r#"{"age": "old", "explanation": ""}"#, &age()),
            Err(ContractError::WrongKind { .. })
        ));
    }

    #[test]
    fn bare_none_answer() {
        assert_eq!(parse_answer("None", &age()), Ok(None));
        assert_eq!(parse_answer(" none. ", &age()), Ok(None));
    }

    proptest! {
        #[test]
        fn serialized_records_round_trip(a in proptest::option::of(0i64..150), e in ".{0,40}", m in 0usize..5) {
            let c = age();
            let mut map = Map::new();
            map.insert("age".into(), a.map(Value::from).unwrap_or(Value::Null));
            map.insert("explanation".into(), Value::String(e.clone()));
            let r = Record(map);
            prop_assert_eq!(parse_strict_json(&r.to_json(), &c).unwrap(), r);

            let c = marital();
            let mut map = Map::new();
            map.insert("marital_status".into(), Value::String(MARITAL[m].into()));
            map.insert("explanation".into(), Value::String(e));
            let r = Record(map);
            prop_assert_eq!(parse_strict_json(&r.to_json(), &c).unwrap(), r);
        }
    }
}

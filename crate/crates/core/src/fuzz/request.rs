use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde_json::{Map, Value};

use super::{BindingSource, FuzzCase, TestSequence};
use crate::api_model::{OperationDef, ParamLocation};

/// RFC 3986 unreserved characters stay as they are.
const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{param}` needs `{producer_field}` from case {producer_case}, which did not provide it")]
pub struct DependencyUnsatisfied {
    pub param: String,
    pub producer_case: usize,
    pub producer_field: String,
}

/// Fills the dependency-fed bindings of case `index` from the recorded
/// responses of earlier cases.
pub fn resolve_bindings(seq: &mut TestSequence, index: usize) -> Result<(), DependencyUnsatisfied> {
    let (before, rest) = seq.cases.split_at_mut(index);
    let case = &mut rest[0];
    for (name, binding) in case.bindings.iter_mut() {
        let BindingSource::DependencyFed {
            producer_case,
            producer_field,
        } = &binding.source
        else {
            continue;
        };
        let unsatisfied = || DependencyUnsatisfied {
            param: name.clone(),
            producer_case: *producer_case,
            producer_field: producer_field.clone(),
        };
        let producer = before.get(*producer_case).ok_or_else(unsatisfied)?;
        let ok_status = producer
            .response_status
            .is_some_and(|s| (200..300).contains(&s));
        if !ok_status {
            return Err(unsatisfied());
        }
        let body: Value = producer
            .captured_response()
            .and_then(|b| serde_json::from_slice(b.as_bytes()).ok())
            .ok_or_else(unsatisfied)?;
        let value = lookup_field(&body, producer_field)
            .filter(|v| !v.is_null())
            .ok_or_else(unsatisfied)?;
        binding.value = value.clone();
    }
    Ok(())
}

/// Looks up a dotted field path; arrays along the way yield their first element.
pub fn lookup_field<'v>(body: &'v Value, path: &str) -> Option<&'v Value> {
    let mut cur = first_of(body)?;
    for seg in path.split('.') {
        cur = first_of(cur.get(seg)?)?;
    }
    Some(cur)
}

fn first_of(v: &Value) -> Option<&Value> {
    match v {
        Value::Array(items) => items.first().and_then(first_of),
        other => Some(other),
    }
}

/// Text form of a binding for paths, queries and headers.
pub fn value_to_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "null".to_string(),
        other => other.to_string(),
    }
}

/// Transport-independent description of the HTTP request for a case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedRequest {
    pub method: &'static str,
    /// Path plus query string, relative to the target's base.
    pub path_and_query: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<Vec<u8>>,
}

pub fn build_request(op: &OperationDef, case: &FuzzCase) -> PreparedRequest {
    let mut path = String::new();
    for (i, seg) in op.path_template.split('/').enumerate() {
        if i > 0 {
            path.push('/');
        }
        path.push_str(&expand_segment(seg, case));
    }
    if path.is_empty() {
        path.push('/');
    }

    let mut query = Vec::new();
    let mut headers = Vec::new();
    let mut body_fields = Map::new();
    let mut whole_body = None;
    for p in &op.params {
        let Some(binding) = case.bindings.get(&p.name) else {
            continue;
        };
        match p.location {
            ParamLocation::Path => {}
            ParamLocation::Query => query.push(format!(
                "{}={}",
                utf8_percent_encode(&p.name, COMPONENT),
                utf8_percent_encode(&value_to_text(&binding.value), COMPONENT)
            )),
            ParamLocation::Header => headers.push((p.name.clone(), value_to_text(&binding.value))),
            ParamLocation::BodyField if p.name == "body" && op.params.len() == 1 => {
                whole_body = Some(binding.value.clone())
            }
            ParamLocation::BodyField => {
                body_fields.insert(p.name.clone(), binding.value.clone());
            }
        }
    }
    if !query.is_empty() {
        path.push('?');
        path.push_str(&query.join("&"));
    }

    let body = if let Some(raw) = &case.raw_body {
        Some(raw.as_bytes().to_vec())
    } else if let Some(v) = whole_body {
        Some(serde_json::to_vec(&v).expect("json values serialize"))
    } else if op.has_body() {
        Some(serde_json::to_vec(&Value::Object(body_fields)).expect("json values serialize"))
    } else {
        None
    };
    if body.is_some() {
        headers.push(("content-type".to_string(), "application/json".to_string()));
    }

    PreparedRequest {
        method: op.method.as_str(),
        path_and_query: path,
        headers,
        body,
    }
}

fn expand_segment(seg: &str, case: &FuzzCase) -> String {
    let mut out = String::new();
    let mut rest = seg;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        out.push_str(&rest[..open]);
        let name = &rest[open + 1..open + close];
        // a dropped path parameter leaves an empty segment
        if let Some(b) = case.bindings.get(name) {
            out.extend(utf8_percent_encode(&value_to_text(&b.value), COMPONENT));
        }
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    out
}

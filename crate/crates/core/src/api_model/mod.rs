//! Internal operation model of an OpenAPI 3.x document.
//!
//! The model is immutable once built. [`parse_spec`] produces it,
//! [`infer_dependencies`] derives producer/consumer edges from it and
//! [`coverage`] measures how much of it a run exercised.

mod deps;
mod parse;

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use deps::{infer_dependencies, DependencyEdge};
pub use parse::{parse_spec, SpecFormat};

#[derive(Debug, thiserror::Error)]
pub enum ApiModelError {
    #[error("malformed spec: {0}")]
    MalformedSpec(String),
    #[error("unsupported spec version `{0}` (only OpenAPI 3.x is accepted)")]
    UnsupportedVersion(String),
    #[error("inconsistent spec: {0}")]
    InconsistentSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown operation `{0}`")]
pub struct UnknownOperation(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Post,
    Put,
    Patch,
    Delete,
}

impl HttpMethod {
    pub const ALL: [HttpMethod; 5] = [
        HttpMethod::Get,
        HttpMethod::Post,
        HttpMethod::Put,
        HttpMethod::Patch,
        HttpMethod::Delete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Post => "POST",
            HttpMethod::Put => "PUT",
            HttpMethod::Patch => "PATCH",
            HttpMethod::Delete => "DELETE",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(key))
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamLocation {
    Path,
    Query,
    Header,
    BodyField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl PrimitiveKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, PrimitiveKind::Integer | PrimitiveKind::Number)
    }
}

/// Primitive kind of a parameter plus the constraints the fuzzer cares about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub kind: PrimitiveKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default, rename = "enum", skip_serializing_if = "Vec::is_empty")]
    pub enum_values: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maximum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_length: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_length: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<Value>,
}

impl ParamSchema {
    pub fn of_kind(kind: PrimitiveKind) -> Self {
        Self {
            kind,
            format: None,
            enum_values: Vec::new(),
            minimum: None,
            maximum: None,
            min_length: None,
            max_length: None,
            example: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDef {
    pub name: String,
    pub location: ParamLocation,
    pub schema: ParamSchema,
}

/// A field found in a response body, flattened to a dotted path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseField {
    /// `2xx`, `4xx`, ... or `default`.
    pub status_class: String,
    pub path: String,
    pub kind: PrimitiveKind,
}

impl ResponseField {
    /// Last segment of the dotted path.
    pub fn name(&self) -> &str {
        self.path.rsplit('.').next().unwrap_or(&self.path)
    }

    pub fn is_success(&self) -> bool {
        self.status_class == "2xx"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationDef {
    pub id: String,
    pub method: HttpMethod,
    pub path_template: String,
    pub params: Vec<ParamDef>,
    pub required: BTreeSet<String>,
    pub response_fields: Vec<ResponseField>,
}

impl OperationDef {
    pub fn param(&self, name: &str) -> Option<&ParamDef> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn is_required(&self, name: &str) -> bool {
        self.required.contains(name)
    }

    pub fn has_body(&self) -> bool {
        self.params
            .iter()
            .any(|p| p.location == ParamLocation::BodyField)
    }

    /// Names of `{placeholder}` segments in the path template, in order.
    pub fn placeholders(&self) -> Vec<&str> {
        path_placeholders(&self.path_template)
    }

    /// Last path segment that is not a placeholder, if any.
    pub fn last_static_segment(&self) -> Option<&str> {
        self.path_template
            .split('/')
            .rfind(|s| !s.is_empty() && !s.starts_with('{'))
    }
}

pub(crate) fn path_placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        out.push(&rest[open + 1..open + close]);
        rest = &rest[open + close + 1..];
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiModel {
    pub title: String,
    pub base_url: String,
    pub operations: Vec<OperationDef>,
}

impl ApiModel {
    pub fn empty() -> Self {
        Self {
            title: String::new(),
            base_url: "/".to_string(),
            operations: Vec::new(),
        }
    }

    pub fn operation(&self, id: &str) -> Option<&OperationDef> {
        self.operations.iter().find(|op| op.id == id)
    }

    pub fn operation_ids(&self) -> impl Iterator<Item = &str> {
        self.operations.iter().map(|op| op.id.as_str())
    }

    /// Checks the structural invariants a parsed model always satisfies.
    pub fn validate(&self) -> Result<(), ApiModelError> {
        let mut seen = HashSet::new();
        for op in &self.operations {
            if !seen.insert(op.id.as_str()) {
                return Err(ApiModelError::InconsistentSpec(format!(
                    "duplicate operation id `{}`",
                    op.id
                )));
            }
            let mut names = HashSet::new();
            for p in &op.params {
                if !names.insert(p.name.as_str()) {
                    return Err(ApiModelError::InconsistentSpec(format!(
                        "operation `{}` declares parameter `{}` more than once",
                        op.id, p.name
                    )));
                }
            }
            for ph in op.placeholders() {
                let declared = op
                    .params
                    .iter()
                    .any(|p| p.name == ph && p.location == ParamLocation::Path);
                if !declared {
                    return Err(ApiModelError::InconsistentSpec(format!(
                        "operation `{}`: placeholder `{{{ph}}}` in `{}` has no path parameter",
                        op.id, op.path_template
                    )));
                }
            }
            if let Some(missing) = op.required.iter().find(|r| !names.contains(r.as_str())) {
                return Err(ApiModelError::InconsistentSpec(format!(
                    "operation `{}` requires undeclared parameter `{missing}`",
                    op.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub total_operations: usize,
    pub executed_operations: usize,
    pub coverage: f64,
}

impl CoverageStats {
    pub fn zero() -> Self {
        Self {
            total_operations: 0,
            executed_operations: 0,
            coverage: 0.0,
        }
    }
}

/// Distinct executed operations divided by operations in the model.
pub fn coverage<'a, I>(model: &ApiModel, executed: I) -> Result<CoverageStats, UnknownOperation>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut distinct = BTreeSet::new();
    for id in executed {
        if model.operation(id).is_none() {
            return Err(UnknownOperation(id.to_string()));
        }
        distinct.insert(id);
    }
    let total = model.operations.len();
    let executed_operations = distinct.len();
    let coverage = if total == 0 {
        0.0
    } else {
        executed_operations as f64 / total as f64
    };
    Ok(CoverageStats {
        total_operations: total,
        executed_operations,
        coverage,
    })
}

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    ApiModel, ApiModelError, HttpMethod, OperationDef, ParamDef, ParamLocation, ParamSchema,
    PrimitiveKind, ResponseField,
};

/// Response schemas are flattened to at most this many path segments.
const MAX_FIELD_DEPTH: usize = 3;
const MAX_REF_HOPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecFormat {
    Json,
    Yaml,
}

impl SpecFormat {
    /// Guesses the format from a file name, defaulting to YAML.
    pub fn from_path(path: &str) -> Self {
        if path.to_ascii_lowercase().ends_with(".json") {
            SpecFormat::Json
        } else {
            SpecFormat::Yaml
        }
    }
}

/// Parses an OpenAPI 3.x document into an [`ApiModel`].
pub fn parse_spec(document: &[u8], format: SpecFormat) -> Result<ApiModel, ApiModelError> {
    let root: Value = match format {
        SpecFormat::Json => serde_json::from_slice(document)
            .map_err(|e| ApiModelError::MalformedSpec(e.to_string()))?,
        SpecFormat::Yaml => serde_yaml::from_slice(document)
            .map_err(|e| ApiModelError::MalformedSpec(e.to_string()))?,
    };
    let Some(obj) = root.as_object() else {
        return Err(ApiModelError::MalformedSpec(
            "document root is not an object".into(),
        ));
    };
    check_version(obj)?;

    let doc = Document { root: &root };
    let title = obj
        .get("info")
        .and_then(|i| i.get("title"))
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let base_url = obj
        .get("servers")
        .and_then(Value::as_array)
        .and_then(|s| s.first())
        .and_then(|s| s.get("url"))
        .and_then(Value::as_str)
        .unwrap_or("/")
        .to_string();

    let mut operations = Vec::new();
    if let Some(paths) = obj.get("paths") {
        let paths = paths
            .as_object()
            .ok_or_else(|| ApiModelError::MalformedSpec("`paths` is not an object".into()))?;
        for (path, item) in paths {
            let item = doc.resolve(item)?;
            let item = item.as_object().ok_or_else(|| {
                ApiModelError::MalformedSpec(format!("path item `{path}` is not an object"))
            })?;
            let shared = item.get("parameters");
            for (key, op) in item {
                let Some(method) = HttpMethod::from_key(key) else {
                    continue;
                };
                operations.push(doc.operation(path, method, op, shared)?);
            }
        }
    }

    let model = ApiModel {
        title,
        base_url,
        operations,
    };
    model.validate()?;
    Ok(model)
}

fn check_version(obj: &Map<String, Value>) -> Result<(), ApiModelError> {
    if let Some(v) = obj.get("openapi") {
        let v = version_text(v);
        if v.starts_with("3.") {
            return Ok(());
        }
        return Err(ApiModelError::UnsupportedVersion(v));
    }
    if let Some(v) = obj.get("swagger") {
        return Err(ApiModelError::UnsupportedVersion(version_text(v)));
    }
    Err(ApiModelError::MalformedSpec(
        "missing `openapi` version field".into(),
    ))
}

fn version_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

struct Document<'a> {
    root: &'a Value,
}

impl<'a> Document<'a> {
    /// Follows local `#/...` references until a non-reference value is reached.
    fn resolve(&self, mut value: &'a Value) -> Result<&'a Value, ApiModelError> {
        for _ in 0..MAX_REF_HOPS {
            let Some(reference) = value.get("$ref").and_then(Value::as_str) else {
                return Ok(value);
            };
            let Some(pointer) = reference.strip_prefix('#') else {
                return Err(ApiModelError::MalformedSpec(format!(
                    "external reference `{reference}` is not supported"
                )));
            };
            value = self.root.pointer(pointer).ok_or_else(|| {
                ApiModelError::MalformedSpec(format!("dangling reference `{reference}`"))
            })?;
        }
        Err(ApiModelError::MalformedSpec(
            "reference chain too long or cyclic".into(),
        ))
    }

    fn operation(
        &self,
        path: &str,
        method: HttpMethod,
        op: &'a Value,
        shared: Option<&'a Value>,
    ) -> Result<OperationDef, ApiModelError> {
        let op = self.resolve(op)?;
        let id = op
            .get("operationId")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| synthesize_id(method, path));

        let mut params: Vec<ParamDef> = Vec::new();
        let mut required = BTreeSet::new();

        // operation-level parameters override path-level ones with the same name+location
        let mut declared = Vec::new();
        for list in [op.get("parameters"), shared].into_iter().flatten() {
            let list = list.as_array().ok_or_else(|| {
                ApiModelError::MalformedSpec(format!("`parameters` of `{id}` is not an array"))
            })?;
            for p in list {
                declared.push(self.resolve(p)?);
            }
        }
        for p in declared {
            let name = p.get("name").and_then(Value::as_str).ok_or_else(|| {
                ApiModelError::MalformedSpec(format!("parameter without name in `{id}`"))
            })?;
            let location = match p.get("in").and_then(Value::as_str) {
                Some("path") => ParamLocation::Path,
                Some("query") => ParamLocation::Query,
                Some("header") => ParamLocation::Header,
                Some("cookie") => continue,
                other => {
                    return Err(ApiModelError::MalformedSpec(format!(
                        "parameter `{name}` of `{id}` has invalid location {other:?}"
                    )))
                }
            };
            if params
                .iter()
                .any(|q| q.name == name && q.location == location)
            {
                continue;
            }
            let schema = match p.get("schema") {
                Some(s) => self.param_schema(s)?,
                None => ParamSchema::of_kind(PrimitiveKind::String),
            };
            let is_required = location == ParamLocation::Path
                || p.get("required").and_then(Value::as_bool).unwrap_or(false);
            if is_required {
                required.insert(name.to_string());
            }
            params.push(ParamDef {
                name: name.to_string(),
                location,
                schema,
            });
        }

        if let Some(body) = op.get("requestBody") {
            self.body_params(&id, body, &mut params, &mut required)?;
        }

        let mut response_fields = Vec::new();
        if let Some(responses) = op.get("responses").and_then(Value::as_object) {
            for (status, response) in responses {
                let class = status_class(status);
                let response = self.resolve(response)?;
                if let Some(schema) = json_schema(response) {
                    self.flatten(schema, "", 0, &class, &mut response_fields)?;
                }
            }
        }

        Ok(OperationDef {
            id,
            method,
            path_template: path.to_string(),
            params,
            required,
            response_fields,
        })
    }

    fn body_params(
        &self,
        id: &str,
        body: &'a Value,
        params: &mut Vec<ParamDef>,
        required: &mut BTreeSet<String>,
    ) -> Result<(), ApiModelError> {
        let body = self.resolve(body)?;
        let body_required = body
            .get("required")
            .and_then(Value::as_bool)
            .unwrap_or(false);
        let Some(schema) = json_schema(body) else {
            return Ok(());
        };
        let schema = self.resolve(schema)?;
        let props = self.properties(schema)?;
        if props.is_empty() && schema_kind(schema) != PrimitiveKind::Object {
            if body_required {
                required.insert("body".to_string());
            }
            params.push(ParamDef {
                name: "body".to_string(),
                location: ParamLocation::BodyField,
                schema: self.param_schema(schema)?,
            });
            return Ok(());
        }
        let required_fields = self.required_fields(schema)?;
        for (name, prop) in props {
            if params.iter().any(|p| p.name == name) {
                return Err(ApiModelError::InconsistentSpec(format!(
                    "operation `{id}`: body field `{name}` shadows another parameter"
                )));
            }
            if required_fields.contains(name) {
                required.insert(name.to_string());
            }
            params.push(ParamDef {
                name: name.to_string(),
                location: ParamLocation::BodyField,
                schema: self.param_schema(prop)?,
            });
        }
        Ok(())
    }

    /// Properties of an object schema, merging `allOf` members in order.
    fn properties(&self, schema: &'a Value) -> Result<Vec<(&'a str, &'a Value)>, ApiModelError> {
        let schema = self.resolve(schema)?;
        let mut out: Vec<(&str, &Value)> = Vec::new();
        if let Some(all) = schema.get("allOf").and_then(Value::as_array) {
            for part in all {
                for (k, v) in self.properties(part)? {
                    if !out.iter().any(|(n, _)| *n == k) {
                        out.push((k, v));
                    }
                }
            }
        }
        if let Some(props) = schema.get("properties").and_then(Value::as_object) {
            for (k, v) in props {
                if !out.iter().any(|(n, _)| n == k) {
                    out.push((k.as_str(), v));
                }
            }
        }
        Ok(out)
    }

    fn required_fields(&self, schema: &'a Value) -> Result<BTreeSet<&'a str>, ApiModelError> {
        let schema = self.resolve(schema)?;
        let mut out = BTreeSet::new();
        if let Some(list) = schema.get("required").and_then(Value::as_array) {
            out.extend(list.iter().filter_map(Value::as_str));
        }
        if let Some(all) = schema.get("allOf").and_then(Value::as_array) {
            for part in all {
                out.extend(self.required_fields(part)?);
            }
        }
        Ok(out)
    }

    fn param_schema(&self, schema: &'a Value) -> Result<ParamSchema, ApiModelError> {
        let schema = self.resolve(schema)?;
        let mut out = ParamSchema::of_kind(schema_kind(schema));
        out.format = schema
            .get("format")
            .and_then(Value::as_str)
            .map(str::to_string);
        out.enum_values = schema
            .get("enum")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        out.minimum = schema.get("minimum").and_then(Value::as_f64);
        out.maximum = schema.get("maximum").and_then(Value::as_f64);
        out.min_length = schema.get("minLength").and_then(Value::as_u64);
        out.max_length = schema.get("maxLength").and_then(Value::as_u64);
        out.example = schema
            .get("example")
            .or_else(|| schema.get("default"))
            .cloned();
        Ok(out)
    }

    fn flatten(
        &self,
        schema: &'a Value,
        prefix: &str,
        depth: usize,
        class: &str,
        out: &mut Vec<ResponseField>,
    ) -> Result<(), ApiModelError> {
        let schema = self.resolve(schema)?;
        match schema_kind(schema) {
            PrimitiveKind::Array => {
                // arrays are transparent: `items` contributes fields under the array's own path
                if let Some(items) = schema.get("items") {
                    let items = self.resolve(items)?;
                    match schema_kind(items) {
                        PrimitiveKind::Object | PrimitiveKind::Array => {
                            self.flatten(items, prefix, depth, class, out)?
                        }
                        _ if !prefix.is_empty() => push_field(out, class, prefix, PrimitiveKind::Array),
                        _ => {}
                    }
                } else if !prefix.is_empty() {
                    push_field(out, class, prefix, PrimitiveKind::Array);
                }
            }
            PrimitiveKind::Object => {
                if depth >= MAX_FIELD_DEPTH {
                    return Ok(());
                }
                for (name, prop) in self.properties(schema)? {
                    let path = if prefix.is_empty() {
                        name.to_string()
                    } else {
                        format!("{prefix}.{name}")
                    };
                    let prop = self.resolve(prop)?;
                    match schema_kind(prop) {
                        PrimitiveKind::Object | PrimitiveKind::Array => {
                            self.flatten(prop, &path, depth + 1, class, out)?
                        }
                        kind => push_field(out, class, &path, kind),
                    }
                }
            }
            kind if !prefix.is_empty() => push_field(out, class, prefix, kind),
            _ => {}
        }
        Ok(())
    }
}

fn push_field(out: &mut Vec<ResponseField>, class: &str, path: &str, kind: PrimitiveKind) {
    let exists = out
        .iter()
        .any(|f| f.status_class == class && f.path == path);
    if !exists {
        out.push(ResponseField {
            status_class: class.to_string(),
            path: path.to_string(),
            kind,
        });
    }
}

fn json_schema(holder: &Value) -> Option<&Value> {
    let content = holder.get("content")?.as_object()?;
    content
        .get("application/json")
        .or_else(|| {
            content
                .iter()
                .find(|(k, _)| k.contains("json"))
                .map(|(_, v)| v)
        })
        .or_else(|| content.values().next())
        .and_then(|media| media.get("schema"))
}

fn schema_kind(schema: &Value) -> PrimitiveKind {
    let ty = match schema.get("type") {
        Some(Value::String(s)) => Some(s.as_str()),
        // 3.1 style `type: [string, "null"]`
        Some(Value::Array(list)) => list
            .iter()
            .filter_map(Value::as_str)
            .find(|t| *t != "null"),
        _ => None,
    };
    match ty {
        Some("integer") => PrimitiveKind::Integer,
        Some("number") => PrimitiveKind::Number,
        Some("boolean") => PrimitiveKind::Boolean,
        Some("array") => PrimitiveKind::Array,
        Some("object") => PrimitiveKind::Object,
        Some(_) => PrimitiveKind::String,
        None if schema.get("properties").is_some() || schema.get("allOf").is_some() => {
            PrimitiveKind::Object
        }
        None if schema.get("items").is_some() => PrimitiveKind::Array,
        None => PrimitiveKind::String,
    }
}

fn status_class(status: &str) -> String {
    match status.chars().next() {
        Some(c @ '1'..='5') => format!("{c}xx"),
        _ => "default".to_string(),
    }
}

fn synthesize_id(method: HttpMethod, path: &str) -> String {
    let mut id = method.as_str().to_ascii_lowercase();
    for seg in path.split('/').filter(|s| !s.is_empty()) {
        id.push('_');
        id.extend(
            seg.chars()
                .filter(|c| *c != '{' && *c != '}')
                .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }),
        );
    }
    id
}

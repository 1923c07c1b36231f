use rand::Rng;
use serde_json::{json, Value};

use super::{Binding, BindingSource, FuzzCase, MutationDescriptor, MutationDictionary, MutationKind};
use crate::api_model::{OperationDef, ParamDef, PrimitiveKind};
use crate::capture::CapturedBody;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MutateError {
    #[error("operation `{operation}` has no parameter `{param}`")]
    UnknownParam { operation: String, param: String },
    #[error("{kind:?} cannot target `{param}`: {reason}")]
    InvalidTarget {
        kind: MutationKind,
        param: String,
        reason: &'static str,
    },
    #[error("case is for `{case}` but the operation is `{operation}`")]
    OperationMismatch { case: String, operation: String },
}

/// Every mutation that [`mutate_case`] accepts for `op`.
pub fn applicable_mutations(op: &OperationDef) -> Vec<MutationDescriptor> {
    let mut out = Vec::new();
    for p in &op.params {
        for kind in MutationKind::ALL {
            if kind != MutationKind::GarbageBytes && check_target(kind, op, p).is_ok() {
                out.push(MutationDescriptor::on(kind, &p.name));
            }
        }
    }
    if op.has_body() {
        out.push(MutationDescriptor::garbage_body());
    }
    out
}

fn check_target(kind: MutationKind, op: &OperationDef, p: &ParamDef) -> Result<(), &'static str> {
    match kind {
        MutationKind::DropRequiredField if !op.is_required(&p.name) => Err("parameter is optional"),
        MutationKind::InvalidEnum if p.schema.enum_values.is_empty() => Err("parameter has no enum"),
        MutationKind::BoundaryValue if p.schema.kind == PrimitiveKind::Boolean => {
            Err("booleans have no boundary")
        }
        MutationKind::GarbageBytes => Err("garbage-bytes targets the whole body"),
        _ => Ok(()),
    }
}

/// Derives a malformed case from `template` by changing exactly the
/// targeted parameter (or only the body for garbage-bytes).
pub fn mutate_case<R: Rng>(
    template: &FuzzCase,
    op: &OperationDef,
    descriptor: &MutationDescriptor,
    dictionary: &MutationDictionary,
    rng: &mut R,
) -> Result<FuzzCase, MutateError> {
    if template.operation != op.id {
        return Err(MutateError::OperationMismatch {
            case: template.operation.clone(),
            operation: op.id.clone(),
        });
    }
    let mut out = template.clone();
    out.mutation = Some(descriptor.clone());

    if descriptor.kind == MutationKind::GarbageBytes {
        out.raw_body = Some(garbage(rng, template.raw_body.as_ref()));
        return Ok(out);
    }

    let name = descriptor.target_param.as_deref().ok_or(MutateError::InvalidTarget {
        kind: descriptor.kind,
        param: String::new(),
        reason: "no target parameter",
    })?;
    let param = op.param(name).ok_or_else(|| MutateError::UnknownParam {
        operation: op.id.clone(),
        param: name.to_string(),
    })?;
    check_target(descriptor.kind, op, param).map_err(|reason| MutateError::InvalidTarget {
        kind: descriptor.kind,
        param: name.to_string(),
        reason,
    })?;

    let current = template.bindings.get(name).map(|b| &b.value);
    if descriptor.kind == MutationKind::DropRequiredField {
        out.bindings.remove(name);
        return Ok(out);
    }

    let candidates = candidates(descriptor.kind, param, dictionary);
    let fresh: Vec<&Value> = candidates.iter().filter(|v| Some(*v) != current).collect();
    let value = if fresh.is_empty() {
        // every candidate equals the current value; fall back to a marker
        json!("__bfftrace_mutated__")
    } else {
        fresh[rng.random_range(0..fresh.len())].clone()
    };
    out.bindings.insert(
        name.to_string(),
        Binding {
            value,
            source: BindingSource::Mutated,
        },
    );
    Ok(out)
}

fn candidates(kind: MutationKind, param: &ParamDef, dict: &MutationDictionary) -> Vec<Value> {
    let schema = &param.schema;
    match kind {
        MutationKind::TypeConfusion => match schema.kind {
            PrimitiveKind::String => dict.integers.iter().map(|i| json!(i)).collect(),
            _ => dict
                .strings
                .iter()
                .filter(|s| s.len() <= 64 && s.parse::<f64>().is_err() && !dict.booleans.contains(s))
                .map(|s| json!(s))
                .collect(),
        },
        MutationKind::BoundaryValue => match schema.kind {
            PrimitiveKind::Integer | PrimitiveKind::Number => {
                let mut out: Vec<Value> = dict.integers.iter().map(|i| json!(i)).collect();
                if let Some(min) = schema.minimum {
                    out.push(json!(min as i64 - 1));
                }
                if let Some(max) = schema.maximum {
                    out.push(json!(max as i64 + 1));
                }
                out
            }
            _ => {
                let mut out = vec![json!("")];
                if let Some(max) = schema.max_length {
                    out.push(json!("A".repeat(max as usize + 1)));
                }
                if let Some(min) = schema.min_length.filter(|m| *m > 1) {
                    out.push(json!("A".repeat(min as usize - 1)));
                }
                out
            }
        },
        MutationKind::OversizeString => vec![json!(dict.oversize_string())],
        MutationKind::InvalidEnum => {
            let mut out: Vec<Value> = dict
                .strings
                .iter()
                .filter(|s| s.len() <= 64)
                .map(|s| json!(s))
                .filter(|v| !schema.enum_values.contains(v))
                .collect();
            if out.is_empty() {
                out.push(json!("__invalid_enum__"));
            }
            out
        }
        MutationKind::DropRequiredField | MutationKind::GarbageBytes => Vec::new(),
    }
}

fn garbage<R: Rng>(rng: &mut R, previous: Option<&CapturedBody>) -> CapturedBody {
    loop {
        let len = rng.random_range(16..=256);
        let mut bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        // make sure it is never valid JSON / UTF-8
        bytes[0] = 0xff;
        let body = CapturedBody(bytes);
        if previous != Some(&body) {
            return body;
        }
    }
}

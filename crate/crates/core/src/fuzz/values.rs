use rand::Rng;
use serde_json::{json, Value};

use crate::api_model::{ParamSchema, PrimitiveKind};

const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

/// A well-formed value for `schema`.
///
/// With `canonical` set the choice is the simplest valid value (first enum
/// member, example, lower bound); otherwise it is drawn from `rng`.
pub(crate) fn valid_value<R: Rng>(schema: &ParamSchema, name: &str, rng: &mut R, canonical: bool) -> Value {
    if !schema.enum_values.is_empty() {
        let i = if canonical { 0 } else { rng.random_range(0..schema.enum_values.len()) };
        return schema.enum_values[i].clone();
    }
    if canonical {
        if let Some(example) = &schema.example {
            return example.clone();
        }
    }
    match schema.kind {
        PrimitiveKind::Integer => {
            let lo = schema.minimum.map(|m| m.ceil() as i64).unwrap_or(1);
            let hi = schema
                .maximum
                .map(|m| m.floor() as i64)
                .unwrap_or(lo.saturating_add(100))
                .max(lo);
            let v = if canonical { lo } else { rng.random_range(lo..=hi.min(lo.saturating_add(100))) };
            json!(v)
        }
        PrimitiveKind::Number => {
            let lo = schema.minimum.unwrap_or(0.0);
            let hi = schema.maximum.unwrap_or(lo + 100.0).max(lo);
            let v = if canonical { lo } else { lo + (hi - lo) * rng.random::<f64>() };
            json!((v * 100.0).round() / 100.0)
        }
        PrimitiveKind::Boolean => json!(canonical || rng.random_bool(0.5)),
        PrimitiveKind::Array => json!([]),
        PrimitiveKind::Object => json!({}),
        PrimitiveKind::String => Value::String(valid_string(schema, name, rng, canonical)),
    }
}

fn valid_string<R: Rng>(schema: &ParamSchema, name: &str, rng: &mut R, canonical: bool) -> String {
    let min = schema.min_length.unwrap_or(1).max(1) as usize;
    let max = schema.max_length.map(|m| m as usize).unwrap_or(12).max(min);
    let len = if canonical { min.max(max.min(8)) } else { rng.random_range(min..=max.min(min + 12)) };
    let token: String = (0..len)
        .map(|_| ALNUM[rng.random_range(0..ALNUM.len())] as char)
        .collect();
    match schema.format.as_deref() {
        Some("email") => format!("{token}@example.com"),
        Some("uuid") => {
            let hex: String = (0..32)
                .map(|_| char::from_digit(rng.random_range(0..16), 16).unwrap())
                .collect();
            format!("{}-{}-{}-{}-{}", &hex[..8], &hex[8..12], &hex[12..16], &hex[16..20], &hex[20..])
        }
        Some("date") => "2024-01-01".to_string(),
        Some("date-time") => "2024-01-01T00:00:00Z".to_string(),
        _ if name.to_ascii_lowercase().ends_with("id") => format!("{name}-{token}"),
        _ => token,
    }
}

use serde::{Deserialize, Serialize};

use super::{ApiModel, ResponseField};

/// `producer` returns `producer_field`, which can feed `consumer_param` of `consumer`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub producer: String,
    pub producer_field: String,
    pub consumer: String,
    pub consumer_param: String,
}

impl DependencyEdge {
    fn sort_key(&self) -> (&str, &str, &str, &str) {
        (
            &self.producer,
            &self.consumer,
            &self.consumer_param,
            &self.producer_field,
        )
    }
}

/// Infers producer/consumer edges by matching successful response fields
/// against parameter names.
///
/// A field matches a parameter when their names are equal ignoring ASCII
/// case. A field named `id` additionally matches `<noun>Id` when `<noun>` is
/// the producer path's last static segment with one trailing `s` removed
/// (`POST /orders` yields `id` -> `orderId`). Self-edges are never emitted.
/// The output is sorted by (producer, consumer, param).
pub fn infer_dependencies(model: &ApiModel) -> Vec<DependencyEdge> {
    let mut edges = Vec::new();
    for producer in &model.operations {
        let noun = producer.last_static_segment().map(singularize);
        for field in producer.response_fields.iter().filter(|f| f.is_success()) {
            for consumer in &model.operations {
                if consumer.id == producer.id {
                    continue;
                }
                for param in &consumer.params {
                    if field_feeds_param(field, noun.as_deref(), &param.name) {
                        edges.push(DependencyEdge {
                            producer: producer.id.clone(),
                            producer_field: field.path.clone(),
                            consumer: consumer.id.clone(),
                            consumer_param: param.name.clone(),
                        });
                    }
                }
            }
        }
    }
    edges.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    edges.dedup();
    edges
}

fn singularize(segment: &str) -> String {
    segment.strip_suffix('s').unwrap_or(segment).to_string()
}

fn field_feeds_param(field: &ResponseField, producer_noun: Option<&str>, param: &str) -> bool {
    let name = field.name();
    if name.eq_ignore_ascii_case(param) {
        return true;
    }
    if !name.eq_ignore_ascii_case("id") {
        return false;
    }
    let Some(noun) = producer_noun else {
        return false;
    };
    param.len() == noun.len() + 2
        && param.is_char_boundary(noun.len())
        && param[..noun.len()].eq_ignore_ascii_case(noun)
        && param[noun.len()..].eq_ignore_ascii_case("id")
}

use std::collections::{BTreeMap, BTreeSet};

use bfftrace_core::api_model::{
    infer_dependencies, parse_spec, ApiModel, HttpMethod, OperationDef, ParamDef, ParamLocation, ParamSchema,
    PrimitiveKind, ResponseField, SpecFormat,
};
use bfftrace_core::fixtures;
use proptest::prelude::*;

type Edge = (String, String, String, String);

/// Brute force over every (producer, field, consumer, param) quadruple,
/// comparing lowercased strings.
fn oracle(model: &ApiModel) -> BTreeSet<Edge> {
    let mut out = BTreeSet::new();
    for p in &model.operations {
        let segments: Vec<&str> = p
            .path_template
            .split('/')
            .filter(|s| !s.is_empty() && !s.starts_with('{'))
            .collect();
        let noun = segments.last().map(|s| {
            let lower = s.to_lowercase();
            match lower.strip_suffix('s') {
                Some(stem) => stem.to_string(),
                None => lower,
            }
        });
        for f in p.response_fields.iter().filter(|f| f.status_class == "2xx") {
            let last = f.path.rsplit('.').next().unwrap().to_lowercase();
            for c in &model.operations {
                if c.id == p.id {
                    continue;
                }
                for param in &c.params {
                    let name = param.name.to_lowercase();
                    let by_name = last == name;
                    let by_noun = last == "id" && noun.as_ref().is_some_and(|n| name == format!("{n}id"));
                    if by_name || by_noun {
                        out.insert((p.id.clone(), f.path.clone(), c.id.clone(), param.name.clone()));
                    }
                }
            }
        }
    }
    out
}

fn as_set(model: &ApiModel) -> BTreeSet<Edge> {
    infer_dependencies(model)
        .into_iter()
        .map(|e| (e.producer, e.producer_field, e.consumer, e.consumer_param))
        .collect()
}

#[test]
fn harness_spec_matches_oracle() {
    let model = parse_spec(fixtures::HARNESS_OPENAPI.as_bytes(), SpecFormat::Json).unwrap();
    assert_eq!(as_set(&model), oracle(&model));
}

/// Frozen from the oracle above for the shipped harness spec.
#[test]
fn harness_spec_frozen_edges() {
    let model = parse_spec(fixtures::HARNESS_OPENAPI.as_bytes(), SpecFormat::Json).unwrap();
    let got: Vec<String> = infer_dependencies(&model)
        .iter()
        .map(|e| format!("{}.{} -> {}.{}", e.producer, e.producer_field, e.consumer, e.consumer_param))
        .collect();
    let want = [
        "createOrder.orderId -> getOrder.orderId",
        "createUser.userId -> createOrder.userId",
        "createUser.userId -> getUser.userId",
        "getOrder.productId -> createOrder.productId",
        "getOrder.quantity -> createOrder.quantity",
        "getOrder.userId -> createOrder.userId",
        "getOrder.productId -> getProduct.productId",
        "getOrder.userId -> getUser.userId",
        "getProduct.productId -> createOrder.productId",
        "getProduct.name -> createUser.name",
        "getUser.userId -> createOrder.userId",
        "getUser.email -> createUser.email",
        "getUser.name -> createUser.name",
        "listProducts.items.productId -> createOrder.productId",
        "listProducts.items.name -> createUser.name",
        "listProducts.items.productId -> getProduct.productId",
    ];
    assert_eq!(got, want);
}

fn op(id: String, path: String, params: Vec<String>, fields: Vec<(String, bool)>) -> OperationDef {
    OperationDef {
        id,
        method: HttpMethod::Get,
        path_template: path,
        required: BTreeSet::new(),
        params: params
            .into_iter()
            .map(|name| ParamDef {
                name,
                location: ParamLocation::Query,
                schema: ParamSchema::of_kind(PrimitiveKind::String),
            })
            .collect(),
        response_fields: fields
            .into_iter()
            .map(|(path, ok)| ResponseField {
                status_class: if ok { "2xx" } else { "4xx" }.into(),
                path,
                kind: PrimitiveKind::String,
            })
            .collect(),
    }
}

fn arb_model() -> impl Strategy<Value = ApiModel> {
    let word = prop::sample::select(vec!["id", "Id", "orderId", "userid", "name", "item", "items", "ORDERID", "sku"]);
    let path = prop::sample::select(vec!["/orders", "/order", "/users/{id}", "/items", "/", "/x/{a}/skus"]);
    let field = (prop::collection::vec(word.clone(), 1..3), any::<bool>())
        .prop_map(|(segs, ok)| (segs.join("."), ok));
    let op_parts = (
        path,
        prop::collection::btree_set(word, 0..4),
        prop::collection::vec(field, 0..5),
    );
    prop::collection::vec(op_parts, 0..5).prop_map(|ops| {
        let operations = ops
            .into_iter()
            .enumerate()
            .map(|(i, (path, params, fields))| {
                let mut dedup = BTreeMap::new();
                for (f, ok) in fields {
                    dedup.entry(f).or_insert(ok);
                }
                op(format!("op{i}"), path.to_string(), params.into_iter().map(String::from).collect(), dedup.into_iter().collect())
            })
            .collect();
        ApiModel {
            title: "t".into(),
            base_url: "/".into(),
            operations,
        }
    })
}

proptest! {
    #[test]
    fn inference_equals_oracle(model in arb_model()) {
        prop_assert_eq!(as_set(&model), oracle(&model));
    }

    #[test]
    fn edges_sorted_unique_and_never_self(model in arb_model()) {
        let edges = infer_dependencies(&model);
        for e in &edges {
            prop_assert_ne!(&e.producer, &e.consumer);
        }
        let keys: Vec<_> = edges.iter().map(|e| (&e.producer, &e.consumer, &e.consumer_param, &e.producer_field)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(keys, sorted);
    }
}

#[test]
fn single_operation_has_no_edges() {
    let model = ApiModel {
        title: "t".into(),
        base_url: "/".into(),
        operations: vec![op("a".into(), "/a".into(), vec!["id".into()], vec![("id".into(), true)])],
    };
    assert!(infer_dependencies(&model).is_empty());
}

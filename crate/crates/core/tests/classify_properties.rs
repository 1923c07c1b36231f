use std::collections::BTreeSet;

use bfftrace_core::api_model::ApiModel;
use bfftrace_core::capture::{CaptureLog, CapturedBody, TrafficEvent};
use bfftrace_core::classify::{classify_trace, summarize, Category, EvidenceLocation, PatternSet};
use bfftrace_core::correlate::{build_trace_map, TraceEntry};
use bfftrace_core::Endpoint;
use proptest::prelude::*;

const BODIES: [&str; 6] = [
    "{}",
    r#"{"error":"internal error"}"#,
    "java.lang.IllegalStateException: x\n\tat com.a.B.c(B.java:1)",
    "Traceback (most recent call last):",
    "ERROR 1: SQLSTATE 42000 CUSTOMLEAK",
    "plain CUSTOMLEAK text",
];

fn arb_event(to: Endpoint) -> impl Strategy<Value = TrafficEvent> {
    (
        prop::sample::select(vec![0u16, 200, 201, 400, 404, 500, 502, 503]),
        prop::option::weighted(0.8, prop::sample::select(BODIES.to_vec())),
    )
        .prop_map(move |(status, body)| {
            let mut e = TrafficEvent::new(0, &Endpoint::new("10.0.0.1", 1), &to, "GET", "/", status);
            e.resp_body = body.map(|b| CapturedBody(b.as_bytes().to_vec()));
            e
        })
}

fn arb_entry() -> impl Strategy<Value = TraceEntry> {
    (
        arb_event(Endpoint::new("bff", 8000)),
        prop::collection::vec(arb_event(Endpoint::new("b", 8081)), 0..5),
    )
        .prop_map(|(main, subs)| TraceEntry {
            id: "t0001".into(),
            main,
            subs,
            sequence_ref: None,
            annotations: Vec::new(),
        })
}

proptest! {
    #[test]
    fn category_rules_hold(entry in arb_entry()) {
        let findings = classify_trace(&entry, &PatternSet::builtin());
        let leaks: Vec<_> = findings.iter().filter(|f| f.category.is_leak()).collect();
        prop_assert!(leaks.len() <= 1);
        let fives = findings.iter().filter(|f| f.category == Category::ServerError5xx).count();
        let any_5xx = entry.events().any(|e| (500..=599).contains(&e.status));
        prop_assert_eq!(fives == 1, any_5xx);
        for f in &findings {
            let main = f.evidence.iter().any(|e| e.location == EvidenceLocation::MainResponse);
            let sub = f.evidence.iter().any(|e| e.location != EvidenceLocation::MainResponse);
            match f.category {
                Category::LeakBoth => prop_assert!(main && sub),
                Category::LeakMainOnly => prop_assert!(main && !sub),
                Category::LeakSubOnly => prop_assert!(!main && sub),
                Category::ServerError5xx => {
                    prop_assert!(f.evidence.is_empty());
                    prop_assert!(f.statuses.iter().all(|s| (500..=599).contains(s)));
                }
            }
            for ev in &f.evidence {
                let body = match ev.location {
                    EvidenceLocation::MainResponse => &entry.main,
                    EvidenceLocation::SubResponse(i) => &entry.subs[i],
                }
                .resp_body
                .as_ref()
                .unwrap()
                .text_lossy()
                .into_owned();
                prop_assert!(body.contains(&ev.matched_excerpt));
                prop_assert!(ev.matched_excerpt.chars().count() <= 200);
            }
        }
    }

    #[test]
    fn adding_a_pattern_never_removes_findings(entry in arb_entry()) {
        let base = PatternSet::builtin();
        let mut extended = PatternSet::builtin();
        extended.push("custom", "CUSTOMLEAK", "test marker").unwrap();
        let key = |fs: Vec<bfftrace_core::classify::Finding>| -> BTreeSet<(bool, EvidenceLocation)> {
            fs.into_iter().flat_map(|f| f.evidence).map(|e| (true, e.location)).collect()
        };
        let before_leak = classify_trace(&entry, &base).iter().any(|f| f.category.is_leak());
        let after = classify_trace(&entry, &extended);
        prop_assert!(!before_leak || after.iter().any(|f| f.category.is_leak()));
        let before_locs = key(classify_trace(&entry, &base));
        let after_locs = key(after.clone());
        prop_assert!(before_locs.is_subset(&after_locs));
        let had_5xx = classify_trace(&entry, &base).iter().any(|f| f.category == Category::ServerError5xx);
        prop_assert_eq!(had_5xx, after.iter().any(|f| f.category == Category::ServerError5xx));
    }

    #[test]
    fn summary_conservation(events in prop::collection::vec(
        (0i64..100, prop::sample::select(vec![8000u16, 8081, 8082]), prop::sample::select(vec![0u16, 200, 404, 500])),
        0..40,
    )) {
        let events: Vec<TrafficEvent> = events
            .into_iter()
            .map(|(ts, port, status)| TrafficEvent::new(ts, &Endpoint::new("c", 1), &Endpoint::new("h", port), "GET", "/", status))
            .collect();
        let log = CaptureLog::new("r", events);
        let map = build_trace_map(&log, &Endpoint::new("h", 8000));
        let s = summarize(&map, &ApiModel::empty(), []).unwrap();
        prop_assert_eq!(s.total_responses, s.histogram_total());
        prop_assert_eq!(s.total_responses as usize, log.events().iter().filter(|e| e.status >= 100).count());
        let errors = log.events().iter().filter(|e| (400..=599).contains(&e.status)).count() as u64;
        prop_assert_eq!(s.errors_from_bff + s.errors_per_backend.values().sum::<u64>(), errors);
        prop_assert!((0.0..=1.0).contains(&s.coverage.coverage));
    }
}

use serde::{Deserialize, Serialize};

use crate::capture::TrafficEvent;
use crate::classify::{EvidenceLocation, Finding, LeakEvidence};
use crate::correlate::TraceEntry;

pub const CLIENT_NODE: &str = "client";
pub const BFF_NODE: &str = "bff";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Client,
    Bff,
    Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    Request,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayloadPart {
    Request,
    Response,
}

/// Where the UI finds the headers and body behind an edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadRef {
    pub trace_id: String,
    /// `main`, or `sub-<index>`.
    pub event: String,
    pub part: PayloadPart,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeData {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeData {
    pub id: String,
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
    pub label: String,
    pub method: String,
    pub uri: String,
    /// Set on response edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    pub error_highlight: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_ref: Option<PayloadRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<LeakEvidence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub data: NodeData,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub data: EdgeData,
}

/// Element-list graph of one trace: client, BFF and the backends it called.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphModel {
    pub trace_id: String,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl GraphModel {
    pub fn highlighted(&self) -> impl Iterator<Item = &EdgeData> {
        self.edges.iter().map(|e| &e.data).filter(|e| e.error_highlight)
    }

    pub fn node(&self, id: &str) -> Option<&NodeData> {
        self.nodes.iter().map(|n| &n.data).find(|n| n.id == id)
    }
}

pub fn backend_node_id(ev: &TrafficEvent) -> String {
    format!("backend:{}", ev.resp())
}

/// Builds the graph for `entry`. Response edges are highlighted when their
/// event carries leak evidence in `findings` or a 5xx status.
pub fn build_graph(entry: &TraceEntry, findings: &[Finding]) -> GraphModel {
    let evidence_at = |loc: EvidenceLocation| {
        findings
            .iter()
            .filter(|f| f.trace_id == entry.id)
            .flat_map(|f| &f.evidence)
            .find(|e| e.location == loc)
            .cloned()
    };

    let mut nodes = vec![
        GraphNode {
            data: NodeData {
                id: CLIENT_NODE.into(),
                kind: NodeKind::Client,
                label: entry.main.orig().to_string(),
            },
        },
        GraphNode {
            data: NodeData {
                id: BFF_NODE.into(),
                kind: NodeKind::Bff,
                label: entry.main.resp().to_string(),
            },
        },
    ];
    let mut edges = Vec::with_capacity(2 * (1 + entry.subs.len()));
    exchange_edges(
        &mut edges,
        &entry.id,
        0,
        "main".into(),
        &entry.main,
        CLIENT_NODE,
        BFF_NODE,
        evidence_at(EvidenceLocation::MainResponse),
    );
    for (i, sub) in entry.subs.iter().enumerate() {
        let id = backend_node_id(sub);
        if !nodes.iter().any(|n| n.data.id == id) {
            nodes.push(GraphNode {
                data: NodeData {
                    id: id.clone(),
                    kind: NodeKind::Backend,
                    label: sub.resp().to_string(),
                },
            });
        }
        exchange_edges(
            &mut edges,
            &entry.id,
            i + 1,
            format!("sub-{i}"),
            sub,
            BFF_NODE,
            &id,
            evidence_at(EvidenceLocation::SubResponse(i)),
        );
    }
    GraphModel {
        trace_id: entry.id.clone(),
        nodes,
        edges,
    }
}

#[allow(clippy::too_many_arguments)]
fn exchange_edges(
    edges: &mut Vec<GraphEdge>,
    trace_id: &str,
    n: usize,
    event: String,
    ev: &TrafficEvent,
    caller: &str,
    callee: &str,
    evidence: Option<LeakEvidence>,
) {
    let payload = |part, present: bool| {
        present.then(|| PayloadRef {
            trace_id: trace_id.to_string(),
            event: event.clone(),
            part,
        })
    };
    edges.push(GraphEdge {
        data: EdgeData {
            id: format!("e{n}-req"),
            from: caller.to_string(),
            to: callee.to_string(),
            kind: EdgeKind::Request,
            label: ev.orig().to_string(),
            method: ev.method.clone(),
            uri: ev.uri.clone(),
            status: None,
            error_highlight: false,
            payload_ref: payload(PayloadPart::Request, ev.req_headers.is_some() || ev.req_body.is_some()),
            evidence: None,
        },
    });
    edges.push(GraphEdge {
        data: EdgeData {
            id: format!("e{n}-resp"),
            from: callee.to_string(),
            to: caller.to_string(),
            kind: EdgeKind::Response,
            label: ev.resp().to_string(),
            method: ev.method.clone(),
            uri: ev.uri.clone(),
            status: Some(ev.status),
            error_highlight: evidence.is_some() || ev.is_server_error(),
            payload_ref: payload(PayloadPart::Response, ev.resp_headers.is_some() || ev.resp_body.is_some()),
            evidence,
        },
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::CapturedBody;
    use crate::classify::{classify_trace, PatternSet};
    use crate::Endpoint;

    fn event(to: &str, status: u16) -> TrafficEvent {
        TrafficEvent::new(0, &"10.0.0.1:5000".parse().unwrap(), &to.parse::<Endpoint>().unwrap(), "GET", "/x", status)
    }

    fn entry(subs: Vec<TrafficEvent>) -> TraceEntry {
        TraceEntry {
            id: "t0001".into(),
            main: event("10.0.0.2:8000", 200),
            subs,
            sequence_ref: None,
            annotations: Vec::new(),
        }
    }

    #[test]
    fn two_distinct_backends() {
        let e = entry(vec![event("10.0.0.3:8081", 200), event("10.0.0.4:8082", 200)]);
        let g = build_graph(&e, &[]);
        assert_eq!(g.nodes.len(), 4);
        assert_eq!(g.edges.len(), 6);
        assert_eq!(g.highlighted().count(), 0);
        assert_eq!(g.node("bff").unwrap().label, "10.0.0.2:8000");
        assert_eq!(g.node("backend:10.0.0.4:8082").unwrap().kind, NodeKind::Backend);
    }

    #[test]
    fn sub_500_highlights_its_response_only() {
        let e = entry(vec![event("10.0.0.3:8081", 200), event("10.0.0.4:8082", 500)]);
        let g = build_graph(&e, &classify_trace(&e, &PatternSet::builtin()));
        let red: Vec<&str> = g.highlighted().map(|e| e.id.as_str()).collect();
        assert_eq!(red, ["e2-resp"]);
    }

    #[test]
    fn no_subs() {
        let g = build_graph(&entry(vec![]), &[]);
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges.len(), 2);
    }

    #[test]
    fn repeated_backend_shares_a_node_and_leak_is_attached() {
        let mut leaky = event("10.0.0.3:8081", 200);
        leaky.resp_body = Some(CapturedBody(b"Traceback (most recent call last):".to_vec()));
        let e = entry(vec![event("10.0.0.3:8081", 200), leaky]);
        let g = build_graph(&e, &classify_trace(&e, &PatternSet::builtin()));
        assert_eq!(g.nodes.len(), 3);
        let red: Vec<&EdgeData> = g.highlighted().collect();
        assert_eq!(red.len(), 1);
        assert_eq!(red[0].evidence.as_ref().unwrap().pattern_id, "python-traceback");
        assert_eq!(
            red[0].payload_ref,
            Some(PayloadRef {
                trace_id: "t0001".into(),
                event: "sub-1".into(),
                part: PayloadPart::Response
            })
        );
    }
}

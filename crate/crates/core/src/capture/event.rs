use std::collections::BTreeMap;
use std::fmt;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::endpoint::Endpoint;

/// Bodies larger than this are truncated in the capture (not on the wire).
pub const CAPTURE_LIMIT: usize = 64 * 1024;

pub type HeaderMap = BTreeMap<String, String>;

/// Captured request or response payload.
///
/// Serialized as a plain string when the bytes are valid UTF-8 and as
/// `{"base64": "..."}` otherwise.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct CapturedBody(pub Vec<u8>);

impl CapturedBody {
    /// Captures at most [`CAPTURE_LIMIT`] bytes; the flag reports truncation.
    pub fn capture(bytes: &[u8]) -> (Self, bool) {
        if bytes.len() > CAPTURE_LIMIT {
            (Self(bytes[..CAPTURE_LIMIT].to_vec()), true)
        } else {
            (Self(bytes.to_vec()), false)
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn text_lossy(&self) -> std::borrow::Cow<'_, str> {
        String::from_utf8_lossy(&self.0)
    }
}

impl fmt::Debug for CapturedBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match std::str::from_utf8(&self.0) {
            Ok(s) if s.len() <= 64 => write!(f, "{s:?}"),
            Ok(s) => {
                let head: String = s.chars().take(64).collect();
                write!(f, "{head:?}..({} bytes)", s.len())
            }
            Err(_) => write!(f, "<{} bytes>", self.0.len()),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BodyRepr {
    Text(String),
    Binary { base64: String },
}

impl Serialize for CapturedBody {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(&self.0) {
            Ok(s) => serializer.serialize_str(s),
            Err(_) => BodyRepr::Binary {
                base64: base64::engine::general_purpose::STANDARD.encode(&self.0),
            }
            .serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for CapturedBody {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match BodyRepr::deserialize(deserializer)? {
            BodyRepr::Text(s) => Ok(Self(s.into_bytes())),
            BodyRepr::Binary { base64 } => base64::engine::general_purpose::STANDARD
                .decode(base64)
                .map(Self)
                .map_err(serde::de::Error::custom),
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One observed HTTP exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficEvent {
    /// Microseconds since the Unix epoch at which the request was observed.
    pub ts: i64,
    pub orig_host: String,
    pub orig_port: u16,
    pub resp_host: String,
    pub resp_port: u16,
    pub method: String,
    pub uri: String,
    /// 0 when no response was observed.
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub req_headers: Option<HeaderMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resp_headers: Option<HeaderMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub req_body: Option<CapturedBody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resp_body: Option<CapturedBody>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub req_body_truncated: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub resp_body_truncated: bool,
    /// The status was synthesized by a capture proxy (upstream unreachable).
    #[serde(default, skip_serializing_if = "is_false")]
    pub proxy_generated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EventError {
    #[error("responder port must be in 1..=65535")]
    PortOutOfRange,
    #[error("status {0} is neither 0 nor in 100..=599")]
    StatusOutOfRange(u16),
    #[error("captured body exceeds the {CAPTURE_LIMIT}-byte capture limit")]
    BodyTooLarge,
    #[error("method is empty")]
    EmptyMethod,
}

impl TrafficEvent {
    /// A bare event with no headers or bodies.
    pub fn new(
        ts: i64,
        orig: &Endpoint,
        resp: &Endpoint,
        method: impl Into<String>,
        uri: impl Into<String>,
        status: u16,
    ) -> Self {
        Self {
            ts,
            orig_host: orig.host.clone(),
            orig_port: orig.port,
            resp_host: resp.host.clone(),
            resp_port: resp.port,
            method: method.into(),
            uri: uri.into(),
            status,
            req_headers: None,
            resp_headers: None,
            req_body: None,
            resp_body: None,
            req_body_truncated: false,
            resp_body_truncated: false,
            proxy_generated: false,
        }
    }

    pub fn orig(&self) -> Endpoint {
        Endpoint::new(self.orig_host.clone(), self.orig_port)
    }

    pub fn resp(&self) -> Endpoint {
        Endpoint::new(self.resp_host.clone(), self.resp_port)
    }

    pub fn is_destined_to(&self, ep: &Endpoint) -> bool {
        self.resp_port == ep.port && self.resp_host == ep.host
    }

    pub fn is_from(&self, ep: &Endpoint) -> bool {
        self.orig_port == ep.port && self.orig_host == ep.host
    }

    /// Whether a response status was observed (status >= 100).
    pub fn has_response(&self) -> bool {
        self.status >= 100
    }

    pub fn is_error_status(&self) -> bool {
        (400..=599).contains(&self.status)
    }

    pub fn is_server_error(&self) -> bool {
        (500..=599).contains(&self.status)
    }

    pub fn validate(&self) -> Result<(), EventError> {
        if self.resp_port == 0 {
            return Err(EventError::PortOutOfRange);
        }
        if self.status != 0 && !(100..=599).contains(&self.status) {
            return Err(EventError::StatusOutOfRange(self.status));
        }
        let too_big = |b: &Option<CapturedBody>| b.as_ref().is_some_and(|b| b.len() > CAPTURE_LIMIT);
        if too_big(&self.req_body) || too_big(&self.resp_body) {
            return Err(EventError::BodyTooLarge);
        }
        if self.method.is_empty() {
            return Err(EventError::EmptyMethod);
        }
        Ok(())
    }
}

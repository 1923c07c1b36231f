//! Stateful fuzzing: test sequences, mutations and request preparation.
//!
//! Execution itself (the network part) lives with the runtime; everything
//! here is deterministic for a given seed.

mod dictionary;
mod generate;
mod mutate;
mod request;
mod values;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::capture::CapturedBody;

pub use dictionary::{DictionaryError, MutationDictionary, DEFAULT_OVERSIZE_LENGTH};
pub use generate::{generate_sequences, FuzzConfigError, SequenceGenerator};
pub use mutate::{applicable_mutations, mutate_case, MutateError};
pub use request::{
    build_request, lookup_field, resolve_bindings, value_to_text, DependencyUnsatisfied,
    PreparedRequest,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationKind {
    TypeConfusion,
    BoundaryValue,
    DropRequiredField,
    OversizeString,
    InvalidEnum,
    GarbageBytes,
}

impl MutationKind {
    pub const ALL: [MutationKind; 6] = [
        MutationKind::TypeConfusion,
        MutationKind::BoundaryValue,
        MutationKind::DropRequiredField,
        MutationKind::OversizeString,
        MutationKind::InvalidEnum,
        MutationKind::GarbageBytes,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MutationDescriptor {
    pub kind: MutationKind,
    /// `None` only for [`MutationKind::GarbageBytes`], which replaces the whole body.
    pub target_param: Option<String>,
}

impl MutationDescriptor {
    pub fn on(kind: MutationKind, param: impl Into<String>) -> Self {
        Self {
            kind,
            target_param: Some(param.into()),
        }
    }

    pub fn garbage_body() -> Self {
        Self {
            kind: MutationKind::GarbageBytes,
            target_param: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BindingSource {
    Generated,
    /// Filled at execution time from an earlier case's response.
    DependencyFed {
        producer_case: usize,
        producer_field: String,
    },
    Mutated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub value: Value,
    pub source: BindingSource,
}

impl Binding {
    pub fn generated(value: Value) -> Self {
        Self {
            value,
            source: BindingSource::Generated,
        }
    }

    pub fn is_dependency_fed(&self) -> bool {
        matches!(self.source, BindingSource::DependencyFed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodyDigest {
    /// Hex SHA-256 of the full response body.
    pub sha256: String,
    pub len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captured: Option<CapturedBody>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum CaseOutcome {
    #[default]
    Pending,
    Completed,
    /// No response within the request timeout; recorded as status 0.
    TimedOut,
    DependencyUnsatisfied {
        param: String,
        producer_case: usize,
        producer_field: String,
    },
    /// Not sent because the sequence was aborted earlier.
    NotSent,
}

/// One request in a sequence, with its execution record once run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzCase {
    pub operation: String,
    pub bindings: BTreeMap<String, Binding>,
    #[serde(default)]
    pub mutation: Option<MutationDescriptor>,
    /// Replacement request body for garbage-bytes mutations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_body: Option<CapturedBody>,
    /// Microseconds since the epoch.
    #[serde(default)]
    pub sent_at: Option<i64>,
    #[serde(default)]
    pub received_at: Option<i64>,
    #[serde(default)]
    pub response_status: Option<u16>,
    #[serde(default)]
    pub response_body_digest: Option<BodyDigest>,
    #[serde(default)]
    pub outcome: CaseOutcome,
}

impl FuzzCase {
    pub fn new(operation: impl Into<String>) -> Self {
        Self {
            operation: operation.into(),
            bindings: BTreeMap::new(),
            mutation: None,
            raw_body: None,
            sent_at: None,
            received_at: None,
            response_status: None,
            response_body_digest: None,
            outcome: CaseOutcome::Pending,
        }
    }

    pub fn with_binding(mut self, name: impl Into<String>, value: Value) -> Self {
        self.bindings.insert(name.into(), Binding::generated(value));
        self
    }

    pub fn was_sent(&self) -> bool {
        self.sent_at.is_some()
    }

    /// The `[sent_at, received_at]` window, when the case was executed.
    pub fn window(&self) -> Option<(i64, i64)> {
        Some((self.sent_at?, self.received_at?))
    }

    pub fn captured_response(&self) -> Option<&CapturedBody> {
        self.response_body_digest.as_ref()?.captured.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSequence {
    pub id: String,
    pub cases: Vec<FuzzCase>,
}

impl TestSequence {
    /// Every dependency-fed binding points at an earlier case.
    pub fn respects_dependency_order(&self) -> bool {
        self.cases.iter().enumerate().all(|(i, case)| {
            case.bindings.values().all(|b| match &b.source {
                BindingSource::DependencyFed { producer_case, .. } => *producer_case < i,
                _ => true,
            })
        })
    }
}

/// A sequence after execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub sequence: TestSequence,
    /// Set when execution stopped early (target unreachable).
    #[serde(default)]
    pub aborted: Option<String>,
}

impl SequenceResult {
    pub fn id(&self) -> &str {
        &self.sequence.id
    }

    pub fn cases(&self) -> &[FuzzCase] {
        &self.sequence.cases
    }
}

fn default_max_len() -> usize {
    3
}

fn default_budget() -> Option<u64> {
    Some(50)
}

fn default_quiescence() -> u64 {
    250
}

fn default_seed() -> u64 {
    42
}

fn default_oversize() -> usize {
    DEFAULT_OVERSIZE_LENGTH
}

fn default_mutation_ratio() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    #[serde(default = "default_max_len")]
    pub max_sequence_length: usize,
    /// `null` leaves only the time budget.
    #[serde(default = "default_budget")]
    pub budget_sequences: Option<u64>,
    #[serde(default)]
    pub budget_seconds: Option<u64>,
    #[serde(default = "default_quiescence")]
    pub quiescence_ms: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub dictionary_path: Option<PathBuf>,
    #[serde(default = "default_oversize")]
    pub oversize_length: usize,
    /// Share of post-coverage sequences that carry one mutation.
    #[serde(default = "default_mutation_ratio")]
    pub mutation_ratio: f64,
    /// Static headers added to every request (e.g. an API key).
    #[serde(default)]
    pub static_headers: BTreeMap<String, String>,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            max_sequence_length: default_max_len(),
            budget_sequences: default_budget(),
            budget_seconds: None,
            quiescence_ms: default_quiescence(),
            seed: default_seed(),
            dictionary_path: None,
            oversize_length: DEFAULT_OVERSIZE_LENGTH,
            mutation_ratio: default_mutation_ratio(),
            static_headers: BTreeMap::new(),
        }
    }
}

impl FuzzConfig {
    pub fn validate(&self) -> Result<(), FuzzConfigError> {
        if self.max_sequence_length == 0 {
            return Err(FuzzConfigError::ZeroSequenceLength);
        }
        match (self.budget_sequences, self.budget_seconds) {
            (None, None) => Err(FuzzConfigError::NoBudget),
            (Some(0), _) | (_, Some(0)) => Err(FuzzConfigError::NoBudget),
            _ if !(0.0..=1.0).contains(&self.mutation_ratio) => {
                Err(FuzzConfigError::BadMutationRatio(self.mutation_ratio))
            }
            _ => Ok(()),
        }
    }
}

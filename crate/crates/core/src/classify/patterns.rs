use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

/// A named signature of exception text.
#[derive(Debug, Clone)]
pub struct LeakPattern {
    pub id: String,
    pub regex: Regex,
    pub description: String,
}

/// Ordered pattern list; the first pattern that matches a body wins.
#[derive(Debug, Clone)]
pub struct PatternSet {
    patterns: Vec<LeakPattern>,
}

#[derive(Debug, thiserror::Error)]
pub enum PatternError {
    #[error("patterns file line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("pattern `{id}`: {source}")]
    Regex {
        id: String,
        #[source]
        source: regex::Error,
    },
    #[error("pattern id `{0}` is already defined")]
    DuplicateId(String),
}

// Newlines may appear raw or JSON-escaped inside a response body.
const NL: &str = r"(?:\r?\n|(?:\\r)?\\n)";

fn builtin_sources() -> Vec<(&'static str, String, &'static str)> {
    vec![
        (
            "java-stacktrace",
            r"\b(?:[a-z_$][\w$]*\.)+[A-Z][\w$]*(?:Exception|Error)\b|\bat (?:[a-z_$][\w$]*\.)+[A-Z][\w$]*\.[\w$<>]+\(".to_string(),
            "JVM exception class or stack frame",
        ),
        (
            "python-traceback",
            r"Traceback \(most recent call last\)".to_string(),
            "Python traceback header",
        ),
        (
            "node-stack",
            format!(r"\b\w*Error: [^\r\n]*?{NL}\s*at [^\s()]+(?: \[as \w+\])? \([^()\s]+:\d+:\d+\)"),
            "Node.js error with stack frame",
        ),
        (
            "go-panic",
            format!(r"panic: [^\r\n]*?(?:{NL})+\s*goroutine \d+"),
            "Go panic with goroutine dump",
        ),
        (
            "dotnet",
            r"(?s)\b(?:[A-Z]\w*\.)+\w*Exception\b.{0,500}? at (?:[A-Z]\w*\.)+\w+".to_string(),
            ".NET exception with stack frame",
        ),
        (
            "generic",
            r"(?i:\bstack ?trace\b)|\bSQLSTATE\b|\bORA-\d{5}\b".to_string(),
            "Generic stack trace or database error marker",
        ),
    ]
}

#[derive(Deserialize)]
struct PatternLine {
    id: String,
    regex: String,
    #[serde(default)]
    description: String,
}

impl PatternSet {
    pub fn builtin() -> Self {
        static BUILTIN: OnceLock<Vec<LeakPattern>> = OnceLock::new();
        let patterns = BUILTIN.get_or_init(|| {
            builtin_sources()
                .into_iter()
                .map(|(id, src, description)| LeakPattern {
                    id: id.to_string(),
                    regex: Regex::new(&src).expect("built-in patterns compile"),
                    description: description.to_string(),
                })
                .collect()
        });
        Self {
            patterns: patterns.clone(),
        }
    }

    pub fn empty() -> Self {
        Self { patterns: Vec::new() }
    }

    /// Built-ins followed by the patterns in a JSON-lines file.
    pub fn with_jsonl(text: &str) -> Result<Self, PatternError> {
        let mut set = Self::builtin();
        set.extend_jsonl(text)?;
        Ok(set)
    }

    /// Appends one pattern per non-blank line of `{id, regex, description}`.
    pub fn extend_jsonl(&mut self, text: &str) -> Result<(), PatternError> {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let p: PatternLine =
                serde_json::from_str(line).map_err(|source| PatternError::Json { line: i + 1, source })?;
            self.push(&p.id, &p.regex, &p.description)?;
        }
        Ok(())
    }

    pub fn push(&mut self, id: &str, regex: &str, description: &str) -> Result<(), PatternError> {
        if self.patterns.iter().any(|p| p.id == id) {
            return Err(PatternError::DuplicateId(id.to_string()));
        }
        let regex = Regex::new(regex).map_err(|source| PatternError::Regex {
            id: id.to_string(),
            source,
        })?;
        self.patterns.push(LeakPattern {
            id: id.to_string(),
            regex,
            description: description.to_string(),
        });
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &LeakPattern> {
        self.patterns.iter()
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

impl Default for PatternSet {
    fn default() -> Self {
        Self::builtin()
    }
}

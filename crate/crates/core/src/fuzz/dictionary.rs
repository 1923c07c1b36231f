use serde::{Deserialize, Serialize};

pub const DEFAULT_OVERSIZE_LENGTH: usize = 65_536;

/// Values the mutator draws malformed inputs from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationDictionary {
    pub strings: Vec<String>,
    pub integers: Vec<i64>,
    pub booleans: Vec<String>,
    #[serde(default = "default_oversize")]
    pub oversize_length: usize,
}

fn default_oversize() -> usize {
    DEFAULT_OVERSIZE_LENGTH
}

#[derive(Debug, thiserror::Error)]
pub enum DictionaryError {
    #[error("invalid dictionary: {0}")]
    Invalid(#[from] serde_json::Error),
    #[error("dictionary `{0}` list is empty")]
    EmptyList(&'static str),
}

impl Default for MutationDictionary {
    fn default() -> Self {
        Self::with_oversize_length(DEFAULT_OVERSIZE_LENGTH)
    }
}

impl MutationDictionary {
    pub fn with_oversize_length(oversize_length: usize) -> Self {
        Self {
            strings: vec![
                String::new(),
                "null".into(),
                "0".into(),
                "-1".into(),
                "' OR 1=1 --".into(),
                "A".repeat(oversize_length),
            ],
            integers: vec![0, -1, i64::from(i32::MAX), i64::MAX],
            booleans: vec!["true".into(), "false".into()],
            oversize_length,
        }
    }

    /// Parses a dictionary override. Missing lists fall back to the defaults.
    pub fn from_json(bytes: &[u8]) -> Result<Self, DictionaryError> {
        #[derive(Deserialize)]
        struct Partial {
            strings: Option<Vec<String>>,
            integers: Option<Vec<i64>>,
            booleans: Option<Vec<String>>,
            oversize_length: Option<usize>,
        }
        let partial: Partial = serde_json::from_slice(bytes)?;
        let mut dict = Self::with_oversize_length(
            partial.oversize_length.unwrap_or(DEFAULT_OVERSIZE_LENGTH),
        );
        if let Some(s) = partial.strings {
            dict.strings = s;
        }
        if let Some(i) = partial.integers {
            dict.integers = i;
        }
        if let Some(b) = partial.booleans {
            dict.booleans = b;
        }
        if dict.strings.is_empty() {
            return Err(DictionaryError::EmptyList("strings"));
        }
        if dict.integers.is_empty() {
            return Err(DictionaryError::EmptyList("integers"));
        }
        Ok(dict)
    }

    pub fn oversize_string(&self) -> String {
        "A".repeat(self.oversize_length)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_builtin_set() {
        let d = MutationDictionary::default();
        assert_eq!(d.strings.len(), 6);
        assert_eq!(d.strings[5].len(), 65_536);
        assert_eq!(d.integers, vec![0, -1, 2_147_483_647, 9_223_372_036_854_775_807]);
        assert_eq!(d.booleans, vec!["true", "false"]);
    }

    #[test]
    fn partial_override_keeps_other_lists() {
        let d = MutationDictionary::from_json(br#"{"strings": ["x"]}"#).unwrap();
        assert_eq!(d.strings, vec!["x"]);
        assert_eq!(d.integers.len(), 4);
        assert!(MutationDictionary::from_json(br#"{"integers": []}"#).is_err());
    }
}

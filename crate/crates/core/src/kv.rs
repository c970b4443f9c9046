//! Flat `key = value` text files.
//!
//! Used for hand geometry, camera intrinsics, articulation templates and the
//! run configuration. One entry per line, `#` starts a comment, keys are
//! dotted identifiers. Duplicate keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("unknown key `{0}`")]
    Unknown(String),
    #[error("line {line}: key `{key}`: cannot parse {value:?} as {expected}")]
    Value {
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed key-value document. Keys iterate in sorted order.
#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, Entry>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(KvError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(KvError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if entries.insert(key.to_string(), entry).is_some() {
                return Err(KvError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, KvError> {
        let text = std::fs::read_to_string(path).map_err(|source| KvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn entry(&self, key: &str) -> Result<&Entry, KvError> {
        self.entries
            .get(key)
            .ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn f64(&self, key: &str) -> Result<f64, KvError> {
        let e = self.entry(key)?;
        e.value.parse::<f64>().map_err(|_| KvError::Value {
            line: e.line,
            key: key.to_string(),
            value: e.value.clone(),
            expected: "number",
        })
    }

    pub fn u64(&self, key: &str) -> Result<u64, KvError> {
        let e = self.entry(key)?;
        e.value.parse::<u64>().map_err(|_| KvError::Value {
            line: e.line,
            key: key.to_string(),
            value: e.value.clone(),
            expected: "unsigned integer",
        })
    }

    /// Whitespace- or comma-separated list of numbers.
    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, KvError> {
        let e = self.entry(key)?;
        e.value
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|_| KvError::Value {
                    line: e.line,
                    key: key.to_string(),
                    value: e.value.clone(),
                    expected: "list of numbers",
                })
            })
            .collect()
    }

    /// Fails on the first key for which `allowed` returns false.
    pub fn reject_unknown(&self, allowed: impl Fn(&str) -> bool) -> Result<(), KvError> {
        match self.keys().find(|k| !allowed(k)) {
            Some(k) => Err(KvError::Unknown(k.to_string())),
            None => Ok(()),
        }
    }
}

/// Ordered writer producing text that `KvDoc::parse` accepts.
#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.out, "# {text}");
        self
    }

    pub fn entry(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.out, "{key} = {value}");
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}

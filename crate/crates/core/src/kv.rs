//! Line-oriented `key=value` text documents.
//!
//! Used for shard headers, training configs and resolved-config echoes.
//! Keys are kept in insertion order so serialization is byte-stable.
//! Blank lines and lines starting with `#` are ignored on parse.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KvError {
    #[error("line {line}: missing '=' in {text:?}")]
    MissingEquals { line: usize, text: String },
    #[error("line {line}: empty key")]
    EmptyKey { line: usize },
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("key {key:?}: value contains a line break")]
    Multiline { key: String },
    #[error("key {0:?} may not contain '=', '#', whitespace or line breaks")]
    BadKey(String),
    #[error("unknown key {0:?}")]
    Unknown(String),
    #[error("missing required key {0:?}")]
    Missing(String),
    #[error("key {key:?}: cannot parse {value:?}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) -> Result<(), KvError> {
        let key = key.into();
        if key.is_empty()
            || key.starts_with('#')
            || key.chars().any(|c| c == '=' || c.is_whitespace())
        {
            return Err(KvError::BadKey(key));
        }
        let value = value.to_string();
        if value.contains('\n') || value.contains('\r') {
            return Err(KvError::Multiline { key });
        }
        if self.get(&key).is_some() {
            return Err(KvError::DuplicateKey(key));
        }
        self.entries.push((key, value));
        Ok(())
    }

    /// Insert or overwrite, keeping the original position of an existing key.
    pub fn set(&mut self, key: &str, value: impl fmt::Display) -> Result<(), KvError> {
        if let Some(slot) = self.entries.iter_mut().find(|(k, _)| k == key) {
            let value = value.to_string();
            if value.contains('\n') || value.contains('\r') {
                return Err(KvError::Multiline { key: key.to_string() });
            }
            slot.1 = value;
            Ok(())
        } else {
            self.push(key, value)
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn parsed<T>(&self, key: &str) -> Result<Option<T>, KvError>
    where
        T: std::str::FromStr,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.trim().parse::<T>().map(Some).map_err(|e| KvError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                reason: e.to_string(),
            }),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut doc = KvDoc::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| KvError::MissingEquals {
                line: i + 1,
                text: line.to_string(),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::EmptyKey { line: i + 1 });
            }
            doc.push(key, value)?;
        }
        Ok(doc)
    }
}

impl fmt::Display for KvDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

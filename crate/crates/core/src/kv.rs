//! Flat `key = value` text format shared by scene and run configuration files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Vector
//! values are comma separated (`tumour_center = 10, -6, 0`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { key: String, line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl KvError {
    pub fn invalid(key: &str, reason: impl Into<String>) -> Self {
        KvError::Invalid { key: key.to_string(), reason: reason.into() }
    }

    /// The configuration field this error refers to, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            KvError::Duplicate { key, .. } | KvError::Invalid { key, .. } => Some(key),
            KvError::UnknownKey(k) => Some(k),
            KvError::Syntax { .. } => None,
        }
    }
}

/// Parsed key-value document. Keys are kept sorted for stable output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: BTreeMap<String, String>,
}

impl From<BTreeMap<String, String>> for KvDoc {
    fn from(entries: BTreeMap<String, String>) -> Self {
        Self { entries }
    }
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(KvError::Syntax { line: idx + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::Syntax { line: idx + 1 });
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(KvError::Duplicate { key: key.to_string(), line: idx + 1 });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails on the first key not present in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), KvError> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(KvError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).map(|v| v.parse::<T>().map_err(|e| KvError::invalid(key, e.to_string()))).transpose()
    }

    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, KvError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.split(',').map(|part| part.trim().parse::<T>().map_err(|e| KvError::invalid(key, e.to_string()))).collect())
            .transpose()
    }

    pub fn parse_fixed<T: FromStr + Copy, const N: usize>(&self, key: &str) -> Result<Option<[T; N]>, KvError>
    where
        T::Err: std::fmt::Display,
    {
        match self.parse_list::<T>(key)? {
            None => Ok(None),
            Some(v) => {
                <[T; N]>::try_from(v).map(Some).map_err(|v| KvError::invalid(key, format!("expected {N} components, got {}", v.len())))
            }
        }
    }

    pub fn parse_vec3(&self, key: &str) -> Result<Option<Vec3>, KvError> {
        Ok(self.parse_fixed::<f64, 3>(key)?.map(Vec3::from_array))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Formats numbers so that parsing them back yields the identical `f64`.
pub fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_vectors() {
        let doc = KvDoc::parse("# scene\nstep_size = 0.5  # mm\n\ntumour_center = 10, -6, 0\n").unwrap();
        assert_eq!(doc.parse_value::<f64>("step_size").unwrap(), Some(0.5));
        assert_eq!(doc.parse_vec3("tumour_center").unwrap(), Some(Vec3::new(10.0, -6.0, 0.0)));
        assert_eq!(doc.parse_value::<f64>("missing").unwrap(), None);
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(KvDoc::parse("a = 1\nnot a pair\n"), Err(KvError::Syntax { line: 2 }));
        assert!(matches!(KvDoc::parse("a = 1\na = 2"), Err(KvError::Duplicate { line: 2, .. })));
        let doc = KvDoc::parse("tumour_center = 1, 2").unwrap();
        assert!(doc.parse_vec3("tumour_center").is_err());
    }

    #[test]
    fn float_text_round_trip() {
        let vals = [0.1, -1.0 / 3.0, 1e-300, 123456.789];
        let mut doc = KvDoc::default();
        doc.set("v", fmt_list(&vals));
        let back = KvDoc::parse(&doc.to_text()).unwrap().parse_list::<f64>("v").unwrap().unwrap();
        assert_eq!(back, vals);
    }
}

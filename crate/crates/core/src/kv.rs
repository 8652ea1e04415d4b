//! Minimal `key = value` text format shared by the training config, probe
//! and synthetic-graph spec files.
//!
//! One pair per line. Blank lines and lines starting with `#` are ignored.
//! Keys keep their file order, and a repeated key is an error.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KeyValues {
    source_name: String,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    used: bool,
}

impl KeyValues {
    pub fn parse(source_name: &str, text: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, line, "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(source_name, line, "empty key"));
            }
            if entries.iter().any(|e| e.key == key) {
                return Err(Error::parse(source_name, line, format!("duplicate key '{key}'")));
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
                used: false,
            });
        }
        Ok(KeyValues {
            source_name: source_name.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    fn find(&mut self, key: &str) -> Option<&mut Entry> {
        self.entries.iter_mut().find(|e| e.key == key)
    }

    /// Raw string value, marking the key as consumed.
    pub fn take_str(&mut self, key: &str) -> Option<(String, usize)> {
        self.find(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    pub fn require_str(&mut self, key: &str) -> Result<String> {
        self.take_str(key)
            .map(|(v, _)| v)
            .ok_or_else(|| Error::Config(format!("{}: missing key '{key}'", self.source_name)))
    }

    pub fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let source_name = self.source_name.clone();
        match self.take_str(key) {
            None => Ok(None),
            Some((value, line)) => value.parse::<T>().map(Some).map_err(|_| {
                Error::parse(source_name, line, format!("cannot parse value '{value}' for '{key}'"))
            }),
        }
    }

    /// Consumes every remaining key starting with `prefix`, in file order.
    pub fn take_prefixed(&mut self, prefix: &str) -> Vec<(String, String, usize)> {
        self.entries
            .iter_mut()
            .filter(|e| !e.used && e.key.starts_with(prefix))
            .map(|e| {
                e.used = true;
                (e.key[prefix.len()..].to_string(), e.value.clone(), e.line)
            })
            .collect()
    }

    /// Fails on any key nobody asked for, which usually means a typo.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().find(|e| !e.used) {
            Some(e) => Err(Error::parse(
                self.source_name,
                e.line,
                format!("unknown key '{}'", e.key),
            )),
            None => Ok(()),
        }
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }
}

//! Plain-text `key = value` configuration files.
//!
//! One key per line, `#` starts a comment, whitespace around the `=` is
//! ignored. The same format serves experiment configs and dataset sidecars,
//! so any generated suite can be re-created from its sidecar alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::parse(format!("line {}: empty key", lineno + 1)));
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.raw(key)
            .ok_or_else(|| Error::parse(format!("missing required key `{key}`")))
    }

    pub fn get_string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::parse(format!("key `{key}`: `{v}` is not a number"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::parse(format!("key `{key}`: `{v}` is not an integer"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::parse(format!("key `{key}`: `{v}` is not an integer"))),
        }
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => parse_list(key, v).map(Some),
        }
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::parse(format!("key `{key}`: `{p}` is not an integer")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    pub fn get_u64_list(&self, key: &str) -> Result<Option<Vec<u64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::parse(format!("key `{key}`: `{p}` is not an integer")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// Serializes with sorted keys. Round-trips through [`KeyValues::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::parse(format!("key `{key}`: `{p}` is not a number")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KeyValues::parse(
            "# experiment\n\
             train.lr = 0.001   # per-step\n\
             \n\
             dataset.angles=0,15,30,45\n",
        )
        .unwrap();
        assert_eq!(kv.get_f64("train.lr", 0.0).unwrap(), 0.001);
        assert_eq!(
            kv.get_f64_list("dataset.angles").unwrap().unwrap(),
            vec![0.0, 15.0, 30.0, 45.0]
        );
        assert_eq!(kv.get_usize("train.steps", 100).unwrap(), 100);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KeyValues::parse("just words\n").is_err());
        assert!(KeyValues::parse("= noval\n").is_err());
    }

    #[test]
    fn round_trips_through_text() {
        let mut kv = KeyValues::new();
        kv.set("b.key", "2");
        kv.set("a.key", "one two");
        let back = KeyValues::parse(&kv.to_text()).unwrap();
        assert_eq!(kv, back);
    }
}

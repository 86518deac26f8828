//! Flat `key = value` metadata files written next to every output.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tabular::{create, open};

/// Ordered key/value pairs. Keys keep insertion order so files are reproducible.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sidecar {
    entries: Vec<(String, String)>,
}

impl Sidecar {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        let key = key.into();
        let value = value.to_string().replace(['\n', '\r'], " ");
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key, value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("metadata key `{key}` is missing")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Records `input.<name>` as the SHA-256 of the file's bytes.
    pub fn hash_input(&mut self, name: &str, path: &Path) -> Result<&mut Self> {
        let digest = file_sha256(path)?;
        Ok(self.set(format!("input.{name}"), digest))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                line: idx + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            out.set(k.trim(), v.trim());
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        BufReader::new(open(path)?)
            .read_to_string(&mut text)
            .map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let mut write = || -> std::io::Result<()> {
            for (k, v) in &self.entries {
                writeln!(w, "{k} = {v}")?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// `out.csv` -> `out.csv.meta`
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut reader = BufReader::new(open(path)?);
    let mut hasher = Sha256::new();
    loop {
        let buf = reader.fill_buf().map_err(|e| Error::io(path, e))?;
        if buf.is_empty() {
            break;
        }
        hasher.update(buf);
        let n = buf.len();
        reader.consume(n);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub(crate) fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{x}` is not a number")))
        })
        .collect()
}

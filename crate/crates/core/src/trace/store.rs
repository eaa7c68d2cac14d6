use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::ids::Digest;
use crate::error::HarnessError;

/// Environment variable that overrides the configured store path.
pub const STORE_ENV: &str = "FMDSE_STORE";

/// Persistent set of trace hashes: one 64-character hex digest per line,
/// append-only. A torn final line (from a crash mid-write) is ignored on open.
#[derive(Debug)]
pub struct TraceStore {
    path: Option<PathBuf>,
    file: Option<File>,
    hashes: HashSet<Digest>,
}

impl TraceStore {
    pub fn in_memory() -> Self {
        TraceStore {
            path: None,
            file: None,
            hashes: HashSet::new(),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref().to_path_buf();
        let err = |source| HarnessError::Store {
            path: path.clone(),
            source,
        };
        let mut hashes = HashSet::new();
        let mut needs_newline = false;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(err)?);
            for line in reader.lines() {
                let line = line.map_err(err)?;
                let line = line.trim();
                match line.parse::<Digest>() {
                    Ok(d) if line.len() == 64 => {
                        hashes.insert(d);
                        needs_newline = false;
                    }
                    _ if line.is_empty() => {}
                    _ => needs_newline = true,
                }
            }
            let raw = std::fs::read(&path).map_err(err)?;
            needs_newline |= raw.last().is_some_and(|b| *b != b'\n');
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(err)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(err)?;
        if needs_newline {
            file.write_all(b"\n").map_err(err)?;
        }
        Ok(TraceStore {
            path: Some(path),
            file: Some(file),
            hashes,
        })
    }

    /// Opens the store at `$FMDSE_STORE` if set, otherwise at `configured`,
    /// otherwise in memory.
    pub fn open_default(configured: Option<&Path>) -> Result<Self, HarnessError> {
        match std::env::var_os(STORE_ENV) {
            Some(p) if !p.is_empty() => TraceStore::open(PathBuf::from(p)),
            _ => match configured {
                Some(p) => TraceStore::open(p),
                None => Ok(TraceStore::in_memory()),
            },
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn contains(&self, h: &Digest) -> bool {
        self.hashes.contains(h)
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    /// Returns true iff `h` was not present before.
    pub fn insert(&mut self, h: Digest) -> Result<bool, HarnessError> {
        if !self.hashes.insert(h) {
            return Ok(false);
        }
        if let Some(f) = &mut self.file {
            let line = format!("{}\n", h.to_hex());
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|source| HarnessError::Store {
                    path: self.path.clone().unwrap_or_default(),
                    source,
                })?;
        }
        Ok(true)
    }
}

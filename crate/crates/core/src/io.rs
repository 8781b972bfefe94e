//! JSON-lines reading and writing for manifests, responses and score files.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{validate_sample, DomainError, Sample};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {source}")]
    Invalid {
        path: PathBuf,
        line: usize,
        #[source]
        source: DomainError,
    },
    #[error("{path}:{line}: duplicate sample id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads every non-blank line of `path` as one JSON value.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_jsonl_from(BufReader::new(file), path)
}

pub fn read_jsonl_from<T: DeserializeOwned, R: BufRead>(
    reader: R,
    path: &Path,
) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Opens `path` for appending, creating it if needed. If a previous writer died
/// mid-line, a newline is appended first so the torn line stays isolated.
pub fn open_append(path: &Path) -> Result<File, IoError> {
    let ends_torn = match std::fs::read(path) {
        Ok(bytes) => !bytes.is_empty() && bytes.last() != Some(&b'\n'),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    if ends_torn {
        f.write_all(b"\n").map_err(io_err(path))?;
    }
    Ok(f)
}

/// Reads and validates a manifest; sample ids must be unique.
pub fn read_manifest(path: &Path) -> Result<Vec<Sample>, IoError> {
    let raw: Vec<Sample> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    raw.into_iter()
        .enumerate()
        .map(|(i, s)| {
            let s = validate_sample(s).map_err(|source| IoError::Invalid {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?;
            if !seen.insert(s.id.clone()) {
                return Err(IoError::DuplicateId {
                    path: path.to_path_buf(),
                    line: i + 1,
                    id: s.id,
                });
            }
            Ok(s)
        })
        .collect()
}

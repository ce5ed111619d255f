//! Seed-stamped JSON and CSV artifacts.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: expected a `{expected}` artifact, found `{found}`")]
    Kind {
        path: String,
        expected: String,
        found: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub kind: String,
    pub seed: u64,
    pub data: T,
}

impl<T> Artifact<T> {
    pub fn new(kind: &str, seed: u64, data: T) -> Self {
        Self {
            kind: kind.to_string(),
            seed,
            data,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ArtifactError {
    ArtifactError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes to a sibling temp file and renames over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn to_json<T: Serialize>(artifact: &Artifact<T>) -> String {
    let mut s = serde_json::to_string_pretty(artifact).expect("artifacts serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, artifact: &Artifact<T>) -> Result<(), ArtifactError> {
    write_atomic(path, to_json(artifact).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(
    path: &Path,
    expected_kind: &str,
) -> Result<Artifact<T>, ArtifactError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let a: Artifact<T> =
        serde_path_to_error::deserialize(de).map_err(|e| ArtifactError::Format {
            path: path.display().to_string(),
            message: format!("{}: {}", e.path(), e.inner()),
        })?;
    if a.kind != expected_kind {
        return Err(ArtifactError::Kind {
            path: path.display().to_string(),
            expected: expected_kind.to_string(),
            found: a.kind,
        });
    }
    Ok(a)
}

/// Comment line placed at the top of CSV artifacts.
pub fn csv_header(kind: &str, seed: u64) -> String {
    format!("# kind={kind} seed={seed}\n")
}

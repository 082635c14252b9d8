//! Versioned, fingerprinted JSON artifacts.
//!
//! Every artifact records the fingerprint of the map it was produced from so
//! a policy or model trained on one map is never paired with another.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::GridSpec;

pub const FORMAT_VERSION: u32 = 1;

pub const QTABLE_FILE: &str = "qtable.json";
pub const MODEL_FILE: &str = "model.json";
pub const PATH_FILE: &str = "path.json";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("artifact not found: {0}")]
    NotFound(PathBuf),
    #[error("artifact {path} was built for map {found}, expected {expected}")]
    Stale {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("artifact {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    version: u32,
    spec_fingerprint: String,
    payload: T,
}

/// Newline-terminated pretty JSON.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

pub fn write<T: Serialize>(path: &Path, kind: &str, spec: &GridSpec, payload: &T) -> Result<(), ArtifactError> {
    let env = Envelope {
        kind: kind.to_string(),
        version: FORMAT_VERSION,
        spec_fingerprint: spec.fingerprint(),
        payload,
    };
    fs::write(path, to_json_string(&env)).map_err(|source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read<T: DeserializeOwned>(path: &Path, kind: &str, spec: &GridSpec) -> Result<T, ArtifactError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ArtifactError::NotFound(path.to_path_buf()))
        }
        Err(source) => {
            return Err(ArtifactError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let corrupt = |reason: String| ArtifactError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let env: Envelope<T> = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if env.kind != kind {
        return Err(corrupt(format!("expected a {kind} artifact, found {}", env.kind)));
    }
    if env.version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported version {}", env.version)));
    }
    let expected = spec.fingerprint();
    if env.spec_fingerprint != expected {
        return Err(ArtifactError::Stale {
            path: path.to_path_buf(),
            expected,
            found: env.spec_fingerprint,
        });
    }
    Ok(env.payload)
}

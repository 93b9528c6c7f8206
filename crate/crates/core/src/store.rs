//! Staged JSON artifact store with configuration-hash provenance.
//!
//! Every artifact is wrapped in an envelope carrying the hash of the config
//! that produced it. Opening a store whose existing artifacts came from a
//! different config fails unless forced, and reads always re-verify the
//! envelope, so a pipeline can never silently mix stages from two
//! configurations.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;

/// Store-root marker recording the owning config.
const MARKER: &str = "config.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O failure at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed artifact {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("missing artifact {path}; run `dpe {stage}` first")]
    MissingArtifact { stage: String, path: PathBuf },
    #[error(
        "artifact {path} was produced by config {found}, current config is {expected}; \
         re-run the earlier stages or pass --force to override"
    )]
    MixedHash {
        path: PathBuf,
        found: String,
        expected: String,
    },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    config_hash: String,
    payload: T,
}

#[derive(Serialize, Deserialize)]
struct Marker {
    config_hash: String,
    config: PipelineConfig,
}

/// A directory of JSON artifacts owned by one configuration.
pub struct ArtifactStore {
    dir: PathBuf,
    config_hash: String,
    force: bool,
}

impl ArtifactStore {
    /// Open (creating if needed) the store at `dir` for `config`.
    ///
    /// A store already claimed by a different config hash is refused unless
    /// `force` is set, in which case the marker is rewritten and stale
    /// artifacts are accepted on read with a warning.
    pub fn open(dir: &Path, config: &PipelineConfig, force: bool) -> Result<Self, StoreError> {
        let config_hash = config.content_hash();
        fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.to_owned(),
            source,
        })?;
        let marker_path = dir.join(MARKER);
        if marker_path.exists() {
            let existing: Marker = read_json(&marker_path)?;
            if existing.config_hash != config_hash {
                if !force {
                    return Err(StoreError::MixedHash {
                        path: marker_path,
                        found: existing.config_hash,
                        expected: config_hash,
                    });
                }
                log::warn!(
                    "store {} re-claimed: config {} replaces {}",
                    dir.display(),
                    config_hash,
                    existing.config_hash
                );
            }
        }
        let store = Self {
            dir: dir.to_owned(),
            config_hash,
            force,
        };
        store.write_raw(
            MARKER,
            &Marker {
                config_hash: store.config_hash.clone(),
                config: config.canonical(),
            },
        )?;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn path_of(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path_of(rel).exists()
    }

    fn write_raw<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), StoreError> {
        let path = self.path_of(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| StoreError::Io {
                path: parent.to_owned(),
                source,
            })?;
        }
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| StoreError::Parse {
            path: path.clone(),
            source,
        })?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|source| StoreError::Io { path, source })
    }

    /// Write an artifact wrapped in the config-hash envelope.
    pub fn write<T: Serialize>(&self, rel: &str, payload: &T) -> Result<(), StoreError> {
        self.write_raw(
            rel,
            &Envelope {
                config_hash: self.config_hash.clone(),
                payload,
            },
        )
    }

    /// Read an artifact, verifying its envelope hash. `stage` names the
    /// command that produces the artifact, for the missing-artifact message.
    pub fn read<T: DeserializeOwned>(&self, rel: &str, stage: &str) -> Result<T, StoreError> {
        let path = self.path_of(rel);
        if !path.exists() {
            return Err(StoreError::MissingArtifact {
                stage: stage.to_owned(),
                path,
            });
        }
        let envelope: Envelope<T> = read_json(&path)?;
        if envelope.config_hash != self.config_hash {
            if !self.force {
                return Err(StoreError::MixedHash {
                    path,
                    found: envelope.config_hash,
                    expected: self.config_hash.clone(),
                });
            }
            log::warn!(
                "accepting foreign artifact {} (config {}) under --force",
                path.display(),
                envelope.config_hash
            );
        }
        Ok(envelope.payload)
    }

    /// Write raw text (CSV tables, summaries) without an envelope.
    pub fn write_text(&self, rel: &str, text: &str) -> Result<(), StoreError> {
        let path = self.path_of(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| StoreError::Io {
                path: parent.to_owned(),
                source,
            })?;
        }
        fs::write(&path, text).map_err(|source| StoreError::Io { path, source })
    }

    /// Sorted stems of the `.json` artifacts directly inside `subdir`.
    pub fn list(&self, subdir: &str) -> Result<Vec<String>, StoreError> {
        let path = self.path_of(subdir);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let entries = fs::read_dir(&path).map_err(|source| StoreError::Io {
            path: path.clone(),
            source,
        })?;
        let mut stems = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
            let p = entry.path();
            if p.extension().and_then(|e| e.to_str()) == Some("json") {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    stems.push(stem.to_owned());
                }
            }
        }
        stems.sort();
        Ok(stems)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let file = fs::File::open(path).map_err(|source| StoreError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| StoreError::Parse {
        path: path.to_owned(),
        source,
    })
}

//! Pipeline configuration: one JSON document drives every stage.
//!
//! The config's content hash (FNV-1a over its canonical JSON with the store
//! location blanked) is embedded in every artifact, letting stages refuse a
//! store whose artifacts came from a different configuration.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{DEFAULT_K, DEFAULT_MAX_ITER, DEFAULT_RESTARTS};
use crate::coupling::KlDirection;
use crate::hsmm::HsmmHyperParams;
use crate::ingest::FleetQuery;
use crate::primitives::DEFAULT_TAIL_FRACTION;
use crate::synth::SyntheticFleetSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Artifact store directory; overridable with `--store`.
    pub store_dir: PathBuf,
    pub fleet_query: FleetQuery,
    pub hsmm: HsmmHyperParams,
    /// Cluster count; clamped to the pooled primitive count with a warning
    /// when the fleet is smaller than k.
    pub k: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_restarts: usize,
    /// Fraction of each vehicle's primitive count pruned from the rank tail.
    pub tail_fraction: f64,
    pub kl_direction: KlDirection,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Fleet used by `dpe simulate`; the built-in demo fleet when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SyntheticFleetSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            store_dir: PathBuf::from("store"),
            fleet_query: FleetQuery::default(),
            hsmm: HsmmHyperParams::default(),
            k: DEFAULT_K,
            kmeans_max_iter: DEFAULT_MAX_ITER,
            kmeans_restarts: DEFAULT_RESTARTS,
            tail_fraction: DEFAULT_TAIL_FRACTION,
            kl_direction: KlDirection::default(),
            seed: 0,
            synth: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut raw = String::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_string(&mut raw))
            .map_err(|source| ConfigError::Io {
                path: path.to_owned(),
                source,
            })?;
        let config: PipelineConfig =
            serde_json::from_str(&raw).map_err(|source| ConfigError::Parse {
                path: path.to_owned(),
                source,
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fleet_query.validate().map_err(ConfigError::Invalid)?;
        self.hsmm.validate().map_err(ConfigError::Invalid)?;
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be ≥ 1".into()));
        }
        if self.kmeans_max_iter == 0 || self.kmeans_restarts == 0 {
            return Err(ConfigError::Invalid(
                "kmeans_max_iter and kmeans_restarts must be ≥ 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.tail_fraction) {
            return Err(ConfigError::Invalid(format!(
                "tail_fraction {} must lie in [0, 1)",
                self.tail_fraction
            )));
        }
        if let Some(synth) = &self.synth {
            synth
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// The location-independent form: `store_dir` blanked. This is what the
    /// content hash covers and what store markers record, so relocating a
    /// store changes neither its identity nor its bytes.
    pub fn canonical(&self) -> PipelineConfig {
        let mut canonical = self.clone();
        canonical.store_dir = PathBuf::new();
        canonical
    }

    /// 16-hex-digit FNV-1a hash of the canonical JSON serialization.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.canonical()).expect("config serializes");
        format!("{:016x}", fnv1a64(&bytes))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_paper_scale() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.k, 200);
        assert_eq!(c.tail_fraction, 0.05);
        assert_eq!(c.hsmm.l, 40);
        assert_eq!(c.fleet_query.min_total_duration_s, 3600.0);
    }

    #[test]
    fn minimal_json_round_trips_with_defaults() {
        let c: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, PipelineConfig::default());
        let full = serde_json::to_string(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&full).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_ignores_store_dir_but_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.store_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.content_hash(), b.content_hash());
        let mut c = a.clone();
        c.seed = 1;
        assert_ne!(a.content_hash(), c.content_hash());
        let mut d = a.clone();
        d.k = 12;
        assert_ne!(a.content_hash(), d.content_hash());
        assert_eq!(a.content_hash().len(), 16);
    }

    #[test]
    fn fnv1a_known_vectors() {
        // Reference values for the 64-bit FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn invalid_fields_are_rejected() {
        let c = PipelineConfig {
            tail_fraction: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            k: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.hsmm.l = 1;
        assert!(c.validate().is_err());
    }
}

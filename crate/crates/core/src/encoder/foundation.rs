//! Adapter for the external foundation audio encoder.
//!
//! Model weights are never vendored. `LUNGSTACK_FOUNDATION_WEIGHTS` points at
//! the model directory; inference runs in the model's own runtime, which
//! exports embeddings for every clip key into `<dir>/embeddings/` as PVEC1
//! shards under backend id `foundation`. This adapter serves those vectors.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{clip_key, hex, Embedding, EmbeddingCache, EncoderBackend};
use crate::dsp::Clip;
use crate::error::{Error, Result};

pub const FOUNDATION_ENV: &str = "LUNGSTACK_FOUNDATION_WEIGHTS";
const BACKEND_ID: &str = "foundation";

pub struct FoundationEncoder {
    root: PathBuf,
    store: EmbeddingCache,
    version: u32,
}

fn unavailable(hint: impl Into<String>) -> Error {
    Error::BackendUnavailable {
        backend: BACKEND_ID.into(),
        hint: hint.into(),
    }
}

impl FoundationEncoder {
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(FOUNDATION_ENV) {
            Some(p) => Self::open(Path::new(&p)),
            None => Err(unavailable(format!(
                "set {FOUNDATION_ENV} to the encoder model directory, or select the mock backend"
            ))),
        }
    }

    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(unavailable(format!(
                "{} is not a directory; download the encoder weights there",
                root.display()
            )));
        }
        let emb_dir = root.join("embeddings");
        if !emb_dir.is_dir() {
            return Err(unavailable(format!(
                "{} has no embeddings/ store; run the model's exporter over the clip index first",
                root.display()
            )));
        }
        let version = std::fs::read_to_string(root.join("VERSION"))
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(1);
        Ok(FoundationEncoder {
            root: root.to_path_buf(),
            store: EmbeddingCache::open(emb_dir)?,
            version,
        })
    }
}

impl EncoderBackend for FoundationEncoder {
    fn backend_id(&self) -> &str {
        BACKEND_ID
    }

    fn version(&self) -> u32 {
        self.version
    }

    // Fine-tuning happens in the model's own runtime, not in-process.
    fn trainable(&self) -> bool {
        false
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn embed(&self, clip: &Clip) -> Result<Embedding> {
        clip.check_contract()?;
        let key = clip_key(clip);
        self.store
            .get(&key, BACKEND_ID, self.version)?
            .ok_or_else(|| unavailable(format!("no exported embedding for clip {key}; re-run the exporter")))
    }

    fn parameter_checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.root.to_string_lossy().as_bytes());
        h.update(self.version.to_le_bytes());
        hex(&h.finalize())
    }
}

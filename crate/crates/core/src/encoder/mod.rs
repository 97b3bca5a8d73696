//! Clip-to-embedding backends and the on-disk embedding cache.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::Clip;
use crate::error::{Error, Result};

mod cache;
mod foundation;
mod mock;

pub use cache::{entry_digest, EmbeddingCache, CACHE_MAGIC};
pub use foundation::{FoundationEncoder, FOUNDATION_ENV};
pub use mock::{mock_encode, FeatureFrontEnd, MockEncoder, Projection, FEATURE_DIM};

pub const EMBEDDING_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub backend_id: String,
    pub clip_key: String,
}

impl Embedding {
    pub fn new(vector: Vec<f32>, backend_id: &str, clip_key: String) -> Result<Self> {
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::Dimension {
                expected: EMBEDDING_DIM,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("embedding has non-finite entries".into()));
        }
        Ok(Embedding {
            vector,
            backend_id: backend_id.to_string(),
            clip_key,
        })
    }
}

/// Cache key of a clip: its provenance when known, otherwise a content hash.
pub fn clip_key(clip: &Clip) -> String {
    match &clip.source {
        Some(src) => src.key(),
        None => {
            let mut h = Sha256::new();
            for s in clip.samples() {
                h.update(s.to_bits().to_le_bytes());
            }
            let d = h.finalize();
            format!("anon:{}", hex(&d[..16]))
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn l2_normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    }
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub trait EncoderBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn version(&self) -> u32;
    /// Whether end-to-end fine-tuning can update this backend.
    fn trainable(&self) -> bool;
    fn deterministic(&self) -> bool;
    fn embed(&self, clip: &Clip) -> Result<Embedding>;
    /// Digest of every parameter the backend owns.
    fn parameter_checksum(&self) -> String;
    /// Linear map that in-process fine-tuning may update, for backends that
    /// expose one.
    fn tunable_projection(&self) -> Option<&Projection> {
        None
    }
    /// Inputs of the tunable projection for `clip`.
    fn tunable_features(&self, _clip: &Clip) -> Option<Result<Vec<f64>>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Foundation,
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "foundation" => Ok(BackendKind::Foundation),
            "mock" => Ok(BackendKind::Mock),
            other => Err(Error::InvalidInput(format!("unknown backend `{other}`"))),
        }
    }
}

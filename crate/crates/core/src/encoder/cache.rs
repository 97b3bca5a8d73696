//! Append-only binary embedding shards.
//!
//! One shard per (backend id, backend version):
//!
//! ```text
//! header : "PVEC1" | u16 id_len | backend_id | u32 version | u32 dim (=512)
//! record : [u8; 32] key digest | 512 x f32 LE | u64 LE checksum
//! ```
//!
//! The checksum is the first 8 bytes (LE) of SHA-256 over digest + payload.
//! A truncated trailing record (interrupted write) is ignored on load.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::{hex, Embedding, EMBEDDING_DIM};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 5] = b"PVEC1";
const RECORD_LEN: usize = 32 + EMBEDDING_DIM * 4 + 8;

struct Shard {
    path: PathBuf,
    index: HashMap<[u8; 32], u64>,
    reader: File,
}

pub struct EmbeddingCache {
    dir: PathBuf,
    shards: RwLock<HashMap<(String, u32), Shard>>,
    write_lock: Mutex<()>,
    warnings: Mutex<Vec<String>>,
}

fn key_digest(clip_key: &str, backend_id: &str, version: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(backend_id.as_bytes());
    h.update([0]);
    h.update(version.to_le_bytes());
    h.update([0]);
    h.update(clip_key.as_bytes());
    h.finalize().into()
}

fn checksum(digest: &[u8], payload: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(digest);
    h.update(payload);
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn header(backend_id: &str, version: u32) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(backend_id.len() as u16).to_le_bytes());
    out.extend_from_slice(backend_id.as_bytes());
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(EMBEDDING_DIM as u32).to_le_bytes());
    out
}

impl EmbeddingCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(EmbeddingCache {
            dir,
            shards: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
            warnings: Mutex::new(Vec::new()),
        })
    }

    pub fn shard_path(&self, backend_id: &str, version: u32) -> PathBuf {
        self.dir.join(format!("{backend_id}-v{version}.pvec"))
    }

    /// Warnings raised by corrupted or truncated entries.
    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().unwrap().clone()
    }

    fn warn(&self, msg: String) {
        log::warn!("{msg}");
        self.warnings.lock().unwrap().push(msg);
    }

    fn load_shard(&self, backend_id: &str, version: u32) -> Result<Option<Shard>> {
        let path = self.shard_path(backend_id, version);
        if !path.exists() {
            return Ok(None);
        }
        let mut bytes = Vec::new();
        File::open(&path)?.read_to_end(&mut bytes)?;
        let expected = header(backend_id, version);
        if bytes.len() < expected.len() || bytes[..expected.len()] != expected[..] {
            return Err(Error::Parse {
                file: path,
                offset: 0,
                message: "bad PVEC1 header".into(),
            });
        }
        let mut index = HashMap::new();
        let body = &bytes[expected.len()..];
        let full = body.len() / RECORD_LEN;
        if body.len() % RECORD_LEN != 0 {
            self.warn(format!(
                "{}: ignoring {} trailing bytes of a truncated record",
                path.display(),
                body.len() % RECORD_LEN
            ));
        }
        for i in 0..full {
            let rec = &body[i * RECORD_LEN..(i + 1) * RECORD_LEN];
            let digest: [u8; 32] = rec[..32].try_into().unwrap();
            index.insert(digest, (expected.len() + i * RECORD_LEN) as u64);
        }
        let reader = File::open(&path)?;
        Ok(Some(Shard {
            path,
            index,
            reader,
        }))
    }

    fn ensure_loaded(&self, backend_id: &str, version: u32) -> Result<bool> {
        let key = (backend_id.to_string(), version);
        if self.shards.read().unwrap().contains_key(&key) {
            return Ok(true);
        }
        match self.load_shard(backend_id, version)? {
            Some(shard) => {
                self.shards.write().unwrap().entry(key).or_insert(shard);
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Reads one entry; a checksum failure is an error here.
    pub fn get_strict(&self, clip_key: &str, backend_id: &str, version: u32) -> Result<Option<Embedding>> {
        if !self.ensure_loaded(backend_id, version)? {
            return Ok(None);
        }
        let digest = key_digest(clip_key, backend_id, version);
        let shards = self.shards.read().unwrap();
        let shard = &shards[&(backend_id.to_string(), version)];
        let Some(&offset) = shard.index.get(&digest) else {
            return Ok(None);
        };
        let mut rec = vec![0u8; RECORD_LEN];
        shard.reader.read_exact_at(&mut rec, offset)?;
        let payload = &rec[32..32 + EMBEDDING_DIM * 4];
        let stored = u64::from_le_bytes(rec[32 + EMBEDDING_DIM * 4..].try_into().unwrap());
        if stored != checksum(&rec[..32], payload) {
            return Err(Error::Checksum(format!(
                "{} ({})",
                clip_key,
                shard.path.display()
            )));
        }
        let vector = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Some(Embedding {
            vector,
            backend_id: backend_id.to_string(),
            clip_key: clip_key.to_string(),
        }))
    }

    /// Cached embedding, or `None`. Corrupted entries are reported as a
    /// warning and treated as absent.
    pub fn get(&self, clip_key: &str, backend_id: &str, version: u32) -> Result<Option<Embedding>> {
        match self.get_strict(clip_key, backend_id, version) {
            Err(Error::Checksum(what)) => {
                self.warn(format!("corrupted cache entry {what}; treating as absent"));
                Ok(None)
            }
            other => other,
        }
    }

    /// Appends an entry. The index is only updated once the full record is
    /// on disk, so a failed write leaves prior entries readable.
    pub fn put(&self, e: &Embedding, version: u32) -> Result<()> {
        if e.vector.len() != EMBEDDING_DIM {
            return Err(Error::Dimension {
                expected: EMBEDDING_DIM,
                actual: e.vector.len(),
            });
        }
        let _guard = self.write_lock.lock().unwrap();
        self.ensure_loaded(&e.backend_id, version)?;
        let path = self.shard_path(&e.backend_id, version);
        let fresh = !path.exists();
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if fresh {
            file.write_all(&header(&e.backend_id, version))?;
        }
        let digest = key_digest(&e.clip_key, &e.backend_id, version);
        let mut rec = Vec::with_capacity(RECORD_LEN);
        rec.extend_from_slice(&digest);
        for v in &e.vector {
            rec.extend_from_slice(&v.to_le_bytes());
        }
        let sum = checksum(&digest, &rec[32..]);
        rec.extend_from_slice(&sum.to_le_bytes());
        let offset = file.metadata()?.len();
        file.write_all(&rec)?;
        file.flush()?;

        let key = (e.backend_id.clone(), version);
        let mut shards = self.shards.write().unwrap();
        match shards.get_mut(&key) {
            Some(shard) => {
                shard.index.insert(digest, offset);
            }
            None => {
                let mut index = HashMap::new();
                index.insert(digest, offset);
                shards.insert(
                    key,
                    Shard {
                        reader: File::open(&path)?,
                        path,
                        index,
                    },
                );
            }
        }
        Ok(())
    }

    pub fn len(&self, backend_id: &str, version: u32) -> Result<usize> {
        if !self.ensure_loaded(backend_id, version)? {
            return Ok(0);
        }
        Ok(self.shards.read().unwrap()[&(backend_id.to_string(), version)].index.len())
    }

    pub fn is_empty(&self, backend_id: &str, version: u32) -> Result<bool> {
        Ok(self.len(backend_id, version)? == 0)
    }
}

impl std::fmt::Debug for EmbeddingCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingCache").field("dir", &self.dir).finish()
    }
}

/// Hex digest used in reports.
pub fn entry_digest(clip_key: &str, backend_id: &str, version: u32) -> String {
    hex(&key_digest(clip_key, backend_id, version))
}

//! Run directory bookkeeping: the append-only manifest, artifact digests
//! and the per-directory lock.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    /// Relative to the run directory, or absolute for external inputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub command: String,
    /// Normalized command arguments that change the outputs.
    pub args: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<ArtifactDigest>,
    pub outputs: Vec<ArtifactDigest>,
    /// Seconds since the Unix epoch; not part of any digest.
    pub completed_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config_hash: &str) -> Self {
        RunManifest {
            config_hash: config_hash.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stages: Vec::new(),
        }
    }

    /// Latest record of `command` run with `args`.
    pub fn last(&self, command: &str, args: &[String]) -> Option<&StageRecord> {
        self.stages.iter().rev().find(|s| s.command == command && s.args == args)
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Every regular file below `root`, sorted.
pub fn list_files(root: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Digest over relative paths and contents of every file below `root`.
pub fn sha256_tree(root: &Path) -> CliResult<String> {
    let mut h = Sha256::new();
    for p in list_files(root)? {
        let rel = p.strip_prefix(root).unwrap_or(&p);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(sha256_file(&p)?.as_bytes());
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Exclusive lock on a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&path).unwrap_or_default();
                Err(CliError::Runtime(format!(
                    "{} is locked by process {}; wait for it to finish or remove {} if it died",
                    dir.display(),
                    holder.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A locked run directory with its manifest.
pub struct RunDir {
    pub root: PathBuf,
    pub manifest: RunManifest,
    _lock: RunLock,
}

/// What a stage reads: a run-directory artifact and the command producing
/// it, or an external path.
pub enum Input<'a> {
    Artifact(&'a str, &'static str),
    External(&'a Path),
}

pub enum Outcome {
    Ran,
    UpToDate,
}

impl RunDir {
    /// Opens (creating if needed) and locks `root`, refusing a directory
    /// whose manifest was written under another config.
    pub fn open(root: &Path, config_hash: &str) -> CliResult<Self> {
        fs::create_dir_all(root)?;
        let lock = RunLock::acquire(root)?;
        let mpath = root.join(MANIFEST_FILE);
        let manifest = if mpath.exists() {
            let m: RunManifest = serde_json::from_slice(&fs::read(&mpath)?)?;
            if m.config_hash != config_hash {
                return Err(CliError::Config(format!(
                    "{} was produced under config hash {}, but the current config hashes to {}; \
                     restore the original config or choose a fresh --run-dir",
                    root.display(),
                    m.config_hash,
                    config_hash
                )));
            }
            m
        } else {
            RunManifest::new(config_hash)
        };
        Ok(RunDir {
            root: root.to_path_buf(),
            manifest,
            _lock: lock,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn digest_inputs(&self, inputs: &[Input]) -> CliResult<Vec<ArtifactDigest>> {
        inputs
            .iter()
            .map(|i| match i {
                Input::Artifact(rel, command) => {
                    let p = self.path(rel);
                    if !p.exists() {
                        return Err(CliError::MissingArtifact { path: p, command });
                    }
                    Ok(ArtifactDigest {
                        path: rel.to_string(),
                        sha256: if p.is_dir() { sha256_tree(&p)? } else { sha256_file(&p)? },
                    })
                }
                Input::External(p) => Ok(ArtifactDigest {
                    path: p.display().to_string(),
                    sha256: if p.is_dir() { sha256_tree(p)? } else { sha256_file(p)? },
                }),
            })
            .collect()
    }

    fn outputs_intact(&self, outputs: &[ArtifactDigest]) -> bool {
        outputs
            .iter()
            .all(|o| sha256_file(&self.path(&o.path)).map(|d| d == o.sha256).unwrap_or(false))
    }

    /// Runs `body` unless the last record of `command` with these arguments
    /// has the same input digests and its outputs are intact. `body`
    /// returns the files and directories it wrote.
    pub fn stage(
        &mut self,
        command: &str,
        args: Vec<String>,
        seed: u64,
        inputs: &[Input],
        force: bool,
        body: impl FnOnce(&RunDir) -> CliResult<Vec<PathBuf>>,
    ) -> CliResult<Outcome> {
        let in_digests = self.digest_inputs(inputs)?;
        if !force {
            if let Some(prev) = self.manifest.last(command, &args) {
                if prev.inputs == in_digests && self.outputs_intact(&prev.outputs) {
                    println!("{command}: up to date");
                    return Ok(Outcome::UpToDate);
                }
            }
        }
        let written = body(self)?;
        let mut outputs = Vec::new();
        for p in written {
            let files = if p.is_dir() { list_files(&p)? } else { vec![p] };
            for f in files {
                let rel = f.strip_prefix(&self.root).map_err(|_| {
                    CliError::Runtime(format!("{} is outside the run directory", f.display()))
                })?;
                outputs.push(ArtifactDigest {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    sha256: sha256_file(&f)?,
                });
            }
        }
        let completed_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.manifest.stages.push(StageRecord {
            command: command.to_string(),
            args,
            seed,
            inputs: in_digests,
            outputs,
            completed_unix,
        });
        self.save()?;
        println!("{command}: done");
        Ok(Outcome::Ran)
    }

    fn save(&self) -> CliResult<()> {
        let tmp = self.path("manifest.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&self.manifest)?)?;
        fs::rename(tmp, self.path(MANIFEST_FILE))?;
        Ok(())
    }
}

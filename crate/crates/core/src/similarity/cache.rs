//! Content-addressed embedding store.
//!
//! Layout: `<root>/<aa>/<sha256>.emb`, where the key is
//! `sha256(model ‖ 0x00 ‖ text)`. Each file is a one-line JSON header
//! `{"dim":N,"model":"..."}` followed by `N` little-endian `f32` values.
//! Writes go through a temp file and an atomic rename, so concurrent readers
//! see either a complete entry or none.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimilarityError;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
    pub models: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    root: PathBuf,
}

fn cache_err(context: &str, path: &Path, e: impl std::fmt::Display) -> SimilarityError {
    SimilarityError::Cache(format!("{context} {}: {e}", path.display()))
}

impl EmbeddingCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, SimilarityError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| cache_err("creating", &root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key(model: &str, text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(model.as_bytes());
        hasher.update([0u8]);
        hasher.update(text.as_bytes());
        hex::encode(hasher.finalize())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.emb"))
    }

    pub fn get(&self, model: &str, text: &str) -> Result<Option<Vec<f32>>, SimilarityError> {
        let path = self.path_for(&Self::key(model, text));
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_err("reading", &path, e)),
        };
        let (header, payload) = decode(&bytes).map_err(|e| cache_err("decoding", &path, e))?;
        if header.model != model {
            return Err(cache_err(
                "model mismatch in",
                &path,
                format!("{} != {model}", header.model),
            ));
        }
        Ok(Some(payload))
    }

    pub fn put(&self, model: &str, text: &str, values: &[f32]) -> Result<(), SimilarityError> {
        let path = self.path_for(&Self::key(model, text));
        let dir = path.parent().expect("cache entries live in a shard directory");
        fs::create_dir_all(dir).map_err(|e| cache_err("creating", dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| cache_err("creating temp in", dir, e))?;
        tmp.write_all(&encode(model, values))
            .map_err(|e| cache_err("writing", tmp.path(), e))?;
        tmp.persist(&path)
            .map_err(|e| cache_err("persisting", &path, e.error))?;
        Ok(())
    }

    fn entry_paths(&self) -> Result<Vec<PathBuf>, SimilarityError> {
        let mut out = Vec::new();
        let shards = fs::read_dir(&self.root).map_err(|e| cache_err("listing", &self.root, e))?;
        for shard in shards.flatten() {
            if !shard.path().is_dir() {
                continue;
            }
            let entries = fs::read_dir(shard.path()).map_err(|e| cache_err("listing", &shard.path(), e))?;
            out.extend(
                entries
                    .flatten()
                    .map(|e| e.path())
                    .filter(|p| p.extension().is_some_and(|x| x == "emb")),
            );
        }
        out.sort();
        Ok(out)
    }

    pub fn stats(&self) -> Result<CacheStats, SimilarityError> {
        let mut stats = CacheStats::default();
        for path in self.entry_paths()? {
            let bytes = fs::read(&path).map_err(|e| cache_err("reading", &path, e))?;
            stats.entries += 1;
            stats.bytes += bytes.len() as u64;
            if let Ok((header, _)) = decode(&bytes) {
                *stats.models.entry(header.model).or_default() += 1;
            }
        }
        Ok(stats)
    }

    /// Removes every entry; returns how many were deleted.
    pub fn clear(&self) -> Result<usize, SimilarityError> {
        let paths = self.entry_paths()?;
        for p in &paths {
            fs::remove_file(p).map_err(|e| cache_err("removing", p, e))?;
        }
        Ok(paths.len())
    }
}

fn encode(model: &str, values: &[f32]) -> Vec<u8> {
    let header = serde_json::to_string(&Header {
        dim: values.len(),
        model: model.to_owned(),
    })
    .expect("header serializes");
    let mut buf = Vec::with_capacity(header.len() + 1 + values.len() * 4);
    buf.extend_from_slice(header.as_bytes());
    buf.push(b'\n');
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<f32>), String> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or("missing header line")?;
    let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| e.to_string())?;
    let payload = &bytes[nl + 1..];
    if payload.len() != header.dim * 4 {
        return Err(format!(
            "payload has {} bytes, header declares dim {}",
            payload.len(),
            header.dim
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, values))
}

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{BackendKind, BackendSpec, Completion, Gateway, GatewayError, GoldSymbols};
use crate::prompting::Transcript;

pub(crate) fn transcript_digest(transcript: &Transcript) -> [u8; 32] {
    let canonical = serde_json::to_vec(&transcript.turns).expect("turns serialize");
    Sha256::digest(&canonical).into()
}

/// Hex SHA-256 over the backend identity and the canonical turns.
///
/// Covers kind, endpoint, model, temperature (and the seed for
/// `mock_uniform`, whose answers depend on it). Concurrency limits and the
/// credential variable are deliberately left out.
pub fn cache_key(backend: &BackendSpec, transcript: &Transcript) -> String {
    let mut identity = json!({
        "kind": backend.kind.as_str(),
        "endpoint_url": backend.endpoint_url,
        "model_name": backend.model_name,
        "temperature": backend.temperature,
        "turns": transcript.turns,
    });
    if backend.kind == BackendKind::MockUniform {
        identity["seed"] = json!(backend.seed);
    }
    let bytes = serde_json::to_vec(&identity).expect("key material serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub completion: Completion,
    pub request: Value,
}

/// Directory of `<digest>.json` files, one per cached completion.
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Returns the stored completion, or `None` on a miss. Unreadable or
    /// corrupt entries count as misses.
    pub fn get(&self, key: &str) -> Option<Completion> {
        let path = self.path_for(key);
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.key == key => Some(entry.completion),
            Ok(_) => {
                log::warn!(
                    "cache entry {} has a mismatched key; ignoring",
                    path.display()
                );
                None
            }
            Err(e) => {
                log::warn!(
                    "corrupt cache entry {}: {e}; treating as a miss",
                    path.display()
                );
                None
            }
        }
    }

    /// Writes atomically (temp file + rename) so concurrent writers of the
    /// same key leave one complete entry.
    pub fn put(&self, key: &str, completion: &Completion, request: Value) -> std::io::Result<()> {
        let entry = CacheEntry {
            key: key.to_string(),
            completion: Completion {
                from_cache: false,
                ..completion.clone()
            },
            request,
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        serde_json::to_writer_pretty(&mut tmp, &entry)?;
        tmp.write_all(b"\n")?;
        tmp.persist(self.path_for(key)).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn clear(&self) -> std::io::Result<()> {
        for entry in std::fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                std::fs::remove_file(path)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serves from `cache` when possible; otherwise asks the gateway and stores
/// the answer before returning it.
pub fn complete_cached(
    gateway: &Gateway,
    transcript: &Transcript,
    hidden_gold: Option<&GoldSymbols>,
    cache: &DiskCache,
) -> Result<Completion, GatewayError> {
    let key = cache_key(gateway.spec(), transcript);
    if let Some(mut hit) = cache.get(&key) {
        hit.from_cache = true;
        return Ok(hit);
    }
    let completion = gateway.complete(transcript, hidden_gold)?;
    cache.put(
        &key,
        &completion,
        gateway.request_body(transcript.messages()),
    )?;
    Ok(completion)
}

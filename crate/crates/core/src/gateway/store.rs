use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CacheKey, FinishState, GatewayError, LlmRequest, LlmResponse, Provenance};

#[derive(Debug, Serialize, Deserialize)]
struct StoredResponse {
    text: String,
    finish_state: FinishState,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    request: LlmRequest,
    response: StoredResponse,
}

/// Directory of request/response pairs laid out as
/// `<root>/<first two hex chars>/<digest>.json`. Shared by the response
/// cache and the replay fixtures.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    root: PathBuf,
}

impl FixtureStore {
    pub fn new(root: impl AsRef<Path>) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let k = key.as_str();
        self.root.join(&k[..2]).join(format!("{k}.json"))
    }

    /// `None` on a miss. An unreadable or corrupt entry is also a miss.
    pub fn get(&self, key: &CacheKey, provenance: Provenance) -> Option<LlmResponse> {
        let bytes = fs::read(self.path_for(key)).ok()?;
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(entry) => Some(LlmResponse::new(
                entry.response.text,
                entry.response.finish_state,
                provenance,
            )),
            Err(e) => {
                log::warn!("ignoring corrupt store entry {key}: {e}");
                None
            }
        }
    }

    /// Write-then-rename so concurrent writers never leave a partial file.
    pub fn put(&self, req: &LlmRequest, resp: &LlmResponse) -> Result<CacheKey, GatewayError> {
        let key = req.key();
        let path = self.path_for(&key);
        let dir = path.parent().expect("entry path has a parent");
        let io = |e: std::io::Error| GatewayError::CacheIo(format!("{}: {e}", path.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let entry = Entry {
            request: req.clone(),
            response: StoredResponse {
                text: resp.text.clone(),
                finish_state: resp.finish_state,
            },
        };
        let body = serde_json::to_vec_pretty(&entry).expect("entry serializes");
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(&body).map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(key)
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        walkdir::WalkDir::new(&self.root)
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "json"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Freezes a response into a fixture store so [`ReplayBackend`] can serve it.
///
/// [`ReplayBackend`]: super::ReplayBackend
pub fn record_fixture(req: &LlmRequest, resp: &LlmResponse, store: &FixtureStore) -> Result<CacheKey, GatewayError> {
    store.put(req, resp)
}

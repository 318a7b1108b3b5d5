//! Content-addressed chunk storage.
//!
//! An object's address is the SHA-256 of its bytes, laid out as
//! `objects/<first-2-hex>/<remaining-62-hex>`. Writes go through a temp
//! file and rename, so a crashed put leaves no partially visible
//! object, and putting existing content is a no-op. Normal reads
//! re-hash the bytes before returning them; a flipped bit on disk
//! surfaces as a corruption error, never as data.
//!
//! The optional [`PinClient`] mirrors objects to an IPFS-style HTTP
//! `add` endpoint. The gateway's returned content id is recorded
//! separately from the local address: a real IPFS CID is not in
//! general the flat SHA-256 of the file.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use thiserror::Error;

use crate::chunk::{hash_chunk, ChunkHash};

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("object {address} not found")]
    NotFound { address: String },
    #[error("object {address} is corrupt on disk (content hashes to {actual})")]
    Corrupt { address: String, actual: String },
    #[error("refusing to store an empty object")]
    Empty,
    #[error("store io at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub struct Store {
    root: PathBuf,
}

impl Store {
    /// Open (creating if needed) an object store rooted at `root`,
    /// conventionally the dataset's `objects/` directory.
    pub fn open(root: &Path) -> Result<Store, StoreError> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Store {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_path(&self, address: &ChunkHash) -> PathBuf {
        let hex = address.to_hex();
        self.root.join(&hex[..2]).join(&hex[2..])
    }

    /// Store bytes under their own hash; idempotent. The object is
    /// fully durable (written, synced, renamed into place) on return.
    pub fn put(&self, bytes: &[u8]) -> Result<ChunkHash, StoreError> {
        if bytes.is_empty() {
            return Err(StoreError::Empty);
        }
        let address = hash_chunk(bytes).expect("non-empty bytes always hash");
        let path = self.object_path(&address);
        if path.exists() {
            return Ok(address);
        }
        let shard = path.parent().expect("object path has a shard directory");
        fs::create_dir_all(shard).map_err(|e| io_err(shard, e))?;

        let tmp = self.root.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let result = (|| {
            let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
            f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
            f.sync_data().map_err(|e| io_err(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result?;
        Ok(address)
    }

    /// Verified read: returns the bytes only if they still hash to the
    /// address.
    pub fn get(&self, address: &ChunkHash) -> Result<Vec<u8>, StoreError> {
        let bytes = self.read_raw(address)?;
        let actual = hash_chunk(&bytes).map_err(|_| StoreError::Corrupt {
            address: address.to_hex(),
            actual: "nothing (object is empty)".to_string(),
        })?;
        if actual != *address {
            return Err(StoreError::Corrupt {
                address: address.to_hex(),
                actual: actual.to_hex(),
            });
        }
        Ok(bytes)
    }

    /// Unverified read for auditors that recompute hashes themselves.
    pub fn read_raw(&self, address: &ChunkHash) -> Result<Vec<u8>, StoreError> {
        let path = self.object_path(address);
        let mut f = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound {
                    address: address.to_hex(),
                })
            }
            Err(e) => return Err(io_err(&path, e)),
        };
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes).map_err(|e| io_err(&path, e))?;
        Ok(bytes)
    }

    pub fn contains(&self, address: &ChunkHash) -> bool {
        self.object_path(address).exists()
    }

    /// All stored addresses, sorted.
    pub fn list(&self) -> Result<Vec<ChunkHash>, StoreError> {
        let mut out = Vec::new();
        let shards = match fs::read_dir(&self.root) {
            Ok(d) => d,
            Err(e) => return Err(io_err(&self.root, e)),
        };
        for shard in shards {
            let shard = shard.map_err(|e| io_err(&self.root, e))?;
            let shard_name = shard.file_name();
            let prefix = shard_name.to_string_lossy();
            if !shard.path().is_dir() || prefix.len() != 2 {
                continue;
            }
            for entry in fs::read_dir(shard.path()).map_err(|e| io_err(&shard.path(), e))? {
                let entry = entry.map_err(|e| io_err(&shard.path(), e))?;
                let rest = entry.file_name();
                let hex = format!("{}{}", prefix, rest.to_string_lossy());
                if let Ok(address) = ChunkHash::from_hex(&hex) {
                    out.push(address);
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Debug, Error)]
pub enum PinError {
    #[error("gateway unreachable: {0}")]
    Unreachable(String),
    #[error("gateway rejected add ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("gateway reply unusable: {0}")]
    BadReply(String),
}

/// Client for an IPFS-style HTTP `add` endpoint
/// (`POST <gateway>/api/v0/add`, multipart field `file`, JSON reply
/// carrying the content id in `Hash`).
pub struct PinClient {
    gateway: String,
    agent: ureq::Agent,
}

impl PinClient {
    pub fn new(gateway: &str) -> PinClient {
        PinClient {
            gateway: gateway.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        }
    }

    /// Upload one object; returns the gateway's content id.
    pub fn add(&self, address: &ChunkHash, bytes: &[u8]) -> Result<String, PinError> {
        let boundary = format!("tpsc-{}", address.to_hex());
        let mut body = Vec::with_capacity(bytes.len() + 256);
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        body.extend_from_slice(
            format!(
                "Content-Disposition: form-data; name=\"file\"; filename=\"{}\"\r\n",
                address.to_hex()
            )
            .as_bytes(),
        );
        body.extend_from_slice(b"Content-Type: application/octet-stream\r\n\r\n");
        body.extend_from_slice(bytes);
        body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());

        let url = format!("{}/api/v0/add", self.gateway);
        let response = self
            .agent
            .post(&url)
            .set(
                "Content-Type",
                &format!("multipart/form-data; boundary={boundary}"),
            )
            .send_bytes(&body);
        let response = match response {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(PinError::Rejected { status, body });
            }
            Err(ureq::Error::Transport(t)) => return Err(PinError::Unreachable(t.to_string())),
        };
        let reply: serde_json::Value = response
            .into_json()
            .map_err(|e| PinError::BadReply(e.to_string()))?;
        reply["Hash"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| PinError::BadReply("no Hash field in add reply".to_string()))
    }
}

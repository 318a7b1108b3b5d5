//! The dataset manifest: ordered chunk index plus sensor and creator
//! metadata. This is the document a verifier audits against the store
//! and the proof records.
//!
//! Finalization hashes the manifest's canonical bytes (sorted-key
//! single-line JSON with the `manifest_hash` field absent) and stamps
//! that hash like any chunk hash. After that, any edit to the manifest
//! is detectable: the recomputed canonical hash no longer matches.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::canonical_line;
use crate::chunk::{hash_chunk, ChunkHash, DatasetId};
use crate::chunker::SealedChunk;
use crate::types::SensorDescriptor;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest io at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error("dataset already finalized")]
    AlreadyFinalized,
}

fn io_err(path: &Path, source: std::io::Error) -> ManifestError {
    ManifestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One chunk as the manifest records it. `remote_id` appears once the
/// object has been pinned to a remote gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestChunk {
    pub sequence: u64,
    /// 64-hex chunk hash; also the object's store address.
    pub hash: String,
    pub first_ts_us: u64,
    pub last_ts_us: u64,
    pub record_count: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub remote_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub manifest_version: u32,
    /// 32 hex characters.
    pub dataset_id: String,
    /// Fingerprint of the creator's API key (never the key itself).
    pub creator_key_id: String,
    /// Free-text location claim; stays unverified by design.
    pub location: String,
    /// Free-text experiment description.
    pub experiment: String,
    pub sensors: Vec<SensorDescriptor>,
    pub chunks: Vec<ManifestChunk>,
    pub finalized: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub manifest_hash: Option<String>,
}

impl DatasetManifest {
    pub fn new(dataset_id: DatasetId, creator_key_id: String, sensors: Vec<SensorDescriptor>) -> Self {
        DatasetManifest {
            manifest_version: MANIFEST_VERSION,
            dataset_id: dataset_id.to_hex(),
            creator_key_id,
            location: String::new(),
            experiment: String::new(),
            sensors,
            chunks: Vec::new(),
            finalized: false,
            manifest_hash: None,
        }
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.manifest_version != MANIFEST_VERSION {
            return Err(ManifestError::Invalid(format!(
                "manifest_version {} unsupported",
                self.manifest_version
            )));
        }
        if DatasetId::from_hex(&self.dataset_id).is_err() {
            return Err(ManifestError::Invalid(format!(
                "dataset_id {:?} is not 32 hex characters",
                self.dataset_id
            )));
        }
        for (i, c) in self.chunks.iter().enumerate() {
            if c.sequence != i as u64 {
                return Err(ManifestError::Invalid(format!(
                    "chunk list not contiguous: position {i} holds sequence {}",
                    c.sequence
                )));
            }
            if ChunkHash::from_hex(&c.hash).is_err() {
                return Err(ManifestError::Invalid(format!(
                    "chunk {i} hash {:?} is not 64 lowercase hex characters",
                    c.hash
                )));
            }
            if c.first_ts_us > c.last_ts_us {
                return Err(ManifestError::Invalid(format!(
                    "chunk {i} first_ts_us exceeds last_ts_us"
                )));
            }
            if c.record_count == 0 {
                return Err(ManifestError::Invalid(format!("chunk {i} has zero records")));
            }
        }
        if self.finalized && self.manifest_hash.is_none() {
            return Err(ManifestError::Invalid(
                "finalized manifest lacks manifest_hash".to_string(),
            ));
        }
        if let Some(h) = &self.manifest_hash {
            if ChunkHash::from_hex(h).is_err() {
                return Err(ManifestError::Invalid(
                    "manifest_hash is not 64 lowercase hex characters".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// Append a freshly sealed chunk. Refused on a finalized dataset.
    pub fn push_chunk(&mut self, sealed: &SealedChunk) -> Result<(), ManifestError> {
        if self.finalized {
            return Err(ManifestError::AlreadyFinalized);
        }
        let h = &sealed.chunk.header;
        if h.sequence != self.chunks.len() as u64 {
            return Err(ManifestError::Invalid(format!(
                "chunk sequence {} does not extend a list of {}",
                h.sequence,
                self.chunks.len()
            )));
        }
        self.chunks.push(ManifestChunk {
            sequence: h.sequence,
            hash: sealed.hash.to_hex(),
            first_ts_us: h.first_ts_us,
            last_ts_us: h.last_ts_us,
            record_count: h.record_count,
            remote_id: None,
        });
        Ok(())
    }

    pub fn set_remote_id(&mut self, sequence: u64, remote_id: String) -> Result<(), ManifestError> {
        if self.finalized {
            return Err(ManifestError::AlreadyFinalized);
        }
        let entry = self
            .chunks
            .get_mut(sequence as usize)
            .ok_or_else(|| ManifestError::Invalid(format!("no chunk at sequence {sequence}")))?;
        entry.remote_id = Some(remote_id);
        Ok(())
    }

    /// Canonical bytes for hashing: sorted keys, single line,
    /// `manifest_hash` absent. Pure function of the manifest content;
    /// validation happens at the load/save/finalize boundaries.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, ManifestError> {
        let mut stripped = self.clone();
        stripped.manifest_hash = None;
        Ok(canonical_line(&stripped)?.into_bytes())
    }

    /// Mark finalized and compute the manifest hash; the caller
    /// submits the returned hash for timestamping.
    pub fn finalize(&mut self) -> Result<ChunkHash, ManifestError> {
        if self.finalized {
            return Err(ManifestError::AlreadyFinalized);
        }
        self.validate()?;
        self.finalized = true;
        let bytes = self.canonical_bytes()?;
        let hash = hash_chunk(&bytes).expect("canonical bytes are never empty");
        self.manifest_hash = Some(hash.to_hex());
        Ok(hash)
    }

    /// Recompute the canonical hash and compare to the recorded one.
    /// `Ok(false)` means the manifest was edited after finalization.
    pub fn check_finalization_hash(&self) -> Result<bool, ManifestError> {
        let recorded = self
            .manifest_hash
            .as_ref()
            .ok_or_else(|| ManifestError::Invalid("manifest_hash absent".to_string()))?;
        let bytes = self.canonical_bytes()?;
        let actual = hash_chunk(&bytes).expect("canonical bytes are never empty");
        Ok(actual.to_hex() == *recorded)
    }

    pub fn load(path: &Path) -> Result<DatasetManifest, ManifestError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    /// Atomic save (temp and rename), pretty-printed for humans; the
    /// canonical form exists only for hashing.
    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        self.validate()?;
        let tmp = path.with_extension("json.tmp");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SensorKind;

    fn descriptor() -> SensorDescriptor {
        SensorDescriptor {
            sensor_id: 1,
            kind: SensorKind::Temperature,
            unit: "degC".to_string(),
            model: "DHT11".to_string(),
            nominal_interval_us: 2_000_000,
        }
    }

    fn manifest_with_chunks(n: u64) -> DatasetManifest {
        let mut m = DatasetManifest::new(
            DatasetId::from_bytes([9; 16]),
            "0011223344556677".to_string(),
            vec![descriptor()],
        );
        for i in 0..n {
            m.chunks.push(ManifestChunk {
                sequence: i,
                hash: hash_chunk(format!("chunk {i}").as_bytes()).unwrap().to_hex(),
                first_ts_us: i * 1000,
                last_ts_us: i * 1000 + 999,
                record_count: 10,
                remote_id: None,
            });
        }
        m
    }

    #[test]
    fn canonical_bytes_are_stable_and_exclude_the_hash_field() {
        let mut m = manifest_with_chunks(2);
        let before = m.canonical_bytes().unwrap();
        assert_eq!(before, m.canonical_bytes().unwrap());
        m.manifest_hash = Some(hash_chunk(b"x").unwrap().to_hex());
        assert_eq!(before, m.canonical_bytes().unwrap());
        assert!(!String::from_utf8(before).unwrap().contains("manifest_hash"));
    }

    #[test]
    fn finalize_sets_a_verifiable_hash() {
        let mut m = manifest_with_chunks(3);
        let h = m.finalize().unwrap();
        assert!(m.finalized);
        assert_eq!(m.manifest_hash.as_deref(), Some(h.to_hex().as_str()));
        assert!(m.check_finalization_hash().unwrap());

        m.location = "edited after the fact".to_string();
        assert!(!m.check_finalization_hash().unwrap());
    }

    #[test]
    fn finalize_twice_is_refused() {
        let mut m = manifest_with_chunks(1);
        m.finalize().unwrap();
        assert!(matches!(m.finalize(), Err(ManifestError::AlreadyFinalized)));
    }

    #[test]
    fn non_contiguous_chunks_invalid() {
        let mut m = manifest_with_chunks(3);
        m.chunks[1].sequence = 5;
        assert!(matches!(m.validate(), Err(ManifestError::Invalid(_))));
        let mut m = manifest_with_chunks(3);
        m.chunks.swap(0, 2);
        assert!(matches!(m.validate(), Err(ManifestError::Invalid(_))));
    }

    #[test]
    fn finalized_without_hash_invalid() {
        let mut m = manifest_with_chunks(1);
        m.finalized = true;
        assert!(matches!(m.validate(), Err(ManifestError::Invalid(_))));
    }

    #[test]
    fn no_chunk_appends_after_finalization() {
        use crate::chunker::{Chunker, FlushPolicy};
        let mut c = Chunker::new(
            DatasetId::from_bytes([9; 16]),
            FlushPolicy { max_payload_bytes: 1 << 20, interval_us: None },
            None,
        );
        c.append(crate::types::Sample { sensor_id: 1, timestamp_us: 5, value: 1.0, flags: 0 }, 5)
            .unwrap();
        let sealed = c.seal_now().unwrap().unwrap();

        let mut m = manifest_with_chunks(0);
        m.finalize().unwrap();
        assert!(matches!(
            m.push_chunk(&sealed),
            Err(ManifestError::AlreadyFinalized)
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = manifest_with_chunks(2);
        m.chunks[0].remote_id = Some("QmStub".to_string());
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back, m);
    }
}

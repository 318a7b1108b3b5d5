//! The independent auditor. Needs nothing from recording time: a
//! manifest, an object store, and the proof records are enough for a
//! third party to recompute every hash, replay every chain link, and
//! localize any modification.
//!
//! Verdict lattice, worst finding wins:
//!   tampered > incomplete > unconfirmed > intact
//! A chunk with bytes present but failing any content check is
//! tampering; missing or unreadable bytes are incompleteness; data all
//! good but proofs not (yet) confirmed is unconfirmed.

use serde::Serialize;

use crate::chunk::{hash_chunk, parse_chunk, ChunkError, ChunkHash};
use crate::dataset::DatasetPaths;
use crate::manifest::{DatasetManifest, ManifestError};
use crate::stamper::{ProofStatus, ProofStore, StamperError};
use crate::store::{Store, StoreError};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Intact,
    Unconfirmed,
    Incomplete,
    Tampered,
}

impl Verdict {
    fn severity(self) -> u8 {
        match self {
            Verdict::Intact => 0,
            Verdict::Unconfirmed => 1,
            Verdict::Incomplete => 2,
            Verdict::Tampered => 3,
        }
    }

    /// Worst finding wins.
    pub fn combine(self, other: Verdict) -> Verdict {
        if other.severity() > self.severity() {
            other
        } else {
            self
        }
    }

    /// Process exit code contract: 0 intact, 1 unconfirmed,
    /// 2 incomplete, 3 tampered.
    pub fn exit_code(self) -> u8 {
        self.severity()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Intact => "intact",
            Verdict::Unconfirmed => "unconfirmed",
            Verdict::Incomplete => "incomplete",
            Verdict::Tampered => "tampered",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Check results for one chunk. A check that could not run because an
/// earlier one failed (no bytes, no parse) reports `false`.
#[derive(Debug, Clone, Serialize)]
pub struct ChunkChecks {
    pub sequence: u64,
    pub bytes_present: bool,
    pub hash_matches: bool,
    pub link_matches: bool,
    pub manifest_matches: bool,
    /// confirmed | submitted | queued | failed | missing
    pub proof_status: String,
}

impl ChunkChecks {
    fn verdict(&self) -> Verdict {
        if !self.bytes_present {
            return Verdict::Incomplete;
        }
        if !self.hash_matches || !self.link_matches || !self.manifest_matches {
            return Verdict::Tampered;
        }
        if self.proof_status != "confirmed" {
            return Verdict::Unconfirmed;
        }
        Verdict::Intact
    }

    fn passed(&self) -> bool {
        self.verdict() == Verdict::Intact
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub dataset_id: String,
    pub per_chunk: Vec<ChunkChecks>,
    /// Finalized datasets only: canonical manifest hash still matches.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_hash_ok: Option<bool>,
    /// Finalized datasets only: proof status of the manifest hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_proof_status: Option<String>,
    pub first_failure: Option<u64>,
    pub verdict: Verdict,
    /// Human-oriented notes (manifest damage, store trouble).
    pub notes: Vec<String>,
}

impl VerificationReport {
    /// Plain-text rendering for operators.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("dataset  {}\n", self.dataset_id));
        for c in &self.per_chunk {
            out.push_str(&format!(
                "chunk {:>5}  bytes {}  hash {}  link {}  manifest {}  proof {}\n",
                c.sequence,
                mark(c.bytes_present),
                mark(c.hash_matches),
                mark(c.link_matches),
                mark(c.manifest_matches),
                c.proof_status,
            ));
        }
        if let Some(ok) = self.manifest_hash_ok {
            out.push_str(&format!("manifest hash  {}\n", mark(ok)));
        }
        if let Some(status) = &self.manifest_proof_status {
            out.push_str(&format!("manifest proof {status}\n"));
        }
        for note in &self.notes {
            out.push_str(&format!("note: {note}\n"));
        }
        if let Some(seq) = self.first_failure {
            out.push_str(&format!("first failure at sequence {seq}\n"));
        }
        out.push_str(&format!("verdict: {}\n", self.verdict));
        out
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn proof_status_str(proofs: &ProofStore, hash_hex: &str) -> String {
    match proofs.get(hash_hex).map(|r| r.status) {
        Some(ProofStatus::Confirmed) => "confirmed",
        Some(ProofStatus::Submitted) => "submitted",
        Some(ProofStatus::Queued) => "queued",
        Some(ProofStatus::Failed) => "failed",
        None => "missing",
    }
    .to_string()
}

/// Audit one dataset. Read-only; store trouble degrades the verdict
/// instead of failing.
pub fn verify_dataset(
    manifest: &DatasetManifest,
    store: &Store,
    proofs: &ProofStore,
) -> VerificationReport {
    let mut report = VerificationReport {
        dataset_id: manifest.dataset_id.clone(),
        per_chunk: Vec::with_capacity(manifest.chunks.len()),
        manifest_hash_ok: None,
        manifest_proof_status: None,
        first_failure: None,
        verdict: Verdict::Intact,
        notes: Vec::new(),
    };

    if let Err(e) = manifest.validate() {
        report.notes.push(format!("manifest invalid: {e}"));
        report.verdict = Verdict::Tampered;
        return report;
    }

    // recomputed hash per sequence, for link checks against the real
    // bytes rather than the manifest's claim wherever possible
    let mut recomputed: Vec<Option<ChunkHash>> = vec![None; manifest.chunks.len()];
    let mut bytes_by_seq: Vec<Option<Vec<u8>>> = vec![None; manifest.chunks.len()];
    for (i, entry) in manifest.chunks.iter().enumerate() {
        let address = ChunkHash::from_hex(&entry.hash).expect("validated above");
        match store.read_raw(&address) {
            Ok(bytes) => {
                recomputed[i] = hash_chunk(&bytes).ok();
                bytes_by_seq[i] = Some(bytes);
            }
            Err(StoreError::NotFound { .. }) => {}
            Err(e) => {
                report.notes.push(format!("store: {e}"));
            }
        }
    }

    for (i, entry) in manifest.chunks.iter().enumerate() {
        let mut checks = ChunkChecks {
            sequence: entry.sequence,
            bytes_present: bytes_by_seq[i].is_some(),
            hash_matches: false,
            link_matches: false,
            manifest_matches: false,
            proof_status: proof_status_str(proofs, &entry.hash),
        };
        if let (Some(bytes), Some(actual)) = (&bytes_by_seq[i], recomputed[i]) {
            checks.hash_matches = actual.to_hex() == entry.hash;
            match parse_chunk(bytes) {
                Ok(chunk) => {
                    let h = &chunk.header;
                    checks.manifest_matches = h.sequence == entry.sequence
                        && h.first_ts_us == entry.first_ts_us
                        && h.last_ts_us == entry.last_ts_us
                        && h.record_count == entry.record_count
                        && h.dataset_id.to_hex() == manifest.dataset_id;
                    checks.link_matches = if i == 0 {
                        h.prev_hash == [0u8; 32]
                    } else {
                        // prefer the real previous bytes; fall back to
                        // the manifest claim when they are missing
                        let expected = match recomputed[i - 1] {
                            Some(prev) => prev.to_hex(),
                            None => manifest.chunks[i - 1].hash.clone(),
                        };
                        hex::encode(h.prev_hash) == expected
                    };
                }
                Err(e) => {
                    report
                        .notes
                        .push(format!("chunk {} does not parse: {e}", entry.sequence));
                }
            }
        }
        report.verdict = report.verdict.combine(checks.verdict());
        if !checks.passed() && report.first_failure.is_none() {
            report.first_failure = Some(entry.sequence);
        }
        report.per_chunk.push(checks);
    }

    if manifest.finalized {
        let hash_ok = manifest.check_finalization_hash().unwrap_or(false);
        report.manifest_hash_ok = Some(hash_ok);
        if !hash_ok {
            report
                .notes
                .push("manifest edited after finalization".to_string());
            report.verdict = report.verdict.combine(Verdict::Tampered);
        }
        if let Some(mh) = &manifest.manifest_hash {
            let status = proof_status_str(proofs, mh);
            if status != "confirmed" {
                report.verdict = report.verdict.combine(Verdict::Unconfirmed);
            }
            report.manifest_proof_status = Some(status);
        }
    }

    report
}

/// Open a dataset directory and audit it. Manifest damage (unparseable
/// or invariant-breaking) is a tampered verdict, not a crash; only a
/// missing manifest is an error, since there is nothing to audit.
pub fn verify_dir(root: &Path) -> Result<VerificationReport, VerifyOpenError> {
    let paths = DatasetPaths::new(root);
    let manifest = match DatasetManifest::load(&paths.manifest()) {
        Ok(m) => m,
        Err(ManifestError::Io { source, .. })
            if source.kind() == std::io::ErrorKind::NotFound =>
        {
            return Err(VerifyOpenError::NoManifest(root.to_path_buf()));
        }
        Err(e) => {
            return Ok(VerificationReport {
                dataset_id: "(unreadable manifest)".to_string(),
                per_chunk: Vec::new(),
                manifest_hash_ok: None,
                manifest_proof_status: None,
                first_failure: None,
                verdict: Verdict::Tampered,
                notes: vec![format!("manifest damaged: {e}")],
            });
        }
    };
    let store = Store::open(&paths.objects()).map_err(VerifyOpenError::Store)?;
    let proofs = ProofStore::open(&paths.proofs()).map_err(VerifyOpenError::Proofs)?;
    Ok(verify_dataset(&manifest, &store, &proofs))
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyOpenError {
    #[error("no manifest.json under {0}")]
    NoManifest(std::path::PathBuf),
    #[error("cannot open object store: {0}")]
    Store(StoreError),
    #[error("cannot open proof records: {0}")]
    Proofs(StamperError),
}

/// Link check for two adjacent chunks by their bytes: the second must
/// carry the first's hash and the successor sequence number.
pub fn verify_chunk_pair(prev_bytes: &[u8], next_bytes: &[u8]) -> Result<bool, ChunkError> {
    let prev = parse_chunk(prev_bytes)?;
    let next = parse_chunk(next_bytes)?;
    let prev_hash = hash_chunk(prev_bytes)?;
    Ok(next.header.prev_hash == *prev_hash.as_bytes()
        && next.header.sequence == prev.header.sequence + 1)
}

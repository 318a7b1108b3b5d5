//! Timestamping client: submit chunk hashes, persist their proof
//! lifecycle, poll for confirmation, retry through outages.
//!
//! Only hashes ever travel to the service; chunk payloads stay local.
//! Submission is exactly-once per hash from the service's point of
//! view: duplicates are absorbed client-side (an existing live record
//! short-circuits) and service-side (the mock's ledger keys by hash).
//! A submission that fails on the network stays `queued` in the
//! persistent proof store and is retried with exponential backoff for
//! as long as it takes; timestamping is latency-tolerant but
//! loss-intolerant.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::canonical_line;
use crate::chunk::ChunkHash;

/// Environment variable holding the creator's API key.
pub const API_KEY_ENV: &str = "TPSC_API_KEY";

/// Retry backoff: base × 2^(attempts−1), capped.
pub const DEFAULT_BACKOFF_BASE: Duration = Duration::from_secs(1);
pub const DEFAULT_BACKOFF_CAP: Duration = Duration::from_secs(300);

/// The creator's API key plus its public fingerprint. The key itself
/// never appears in manifests, logs, or debug output.
#[derive(Clone)]
pub struct CreatorCredential {
    api_key: String,
    key_id: String,
}

impl CreatorCredential {
    pub fn new(api_key: String) -> CreatorCredential {
        let digest = Sha256::digest(api_key.as_bytes());
        let key_id = hex::encode(&digest[..8]);
        CreatorCredential { api_key, key_id }
    }

    /// Read `TPSC_API_KEY` from the environment.
    pub fn from_env() -> Option<CreatorCredential> {
        std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .map(CreatorCredential::new)
    }

    /// First 16 hex characters of SHA-256(api_key): safe to publish,
    /// identifies the creator.
    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    fn api_key(&self) -> &str {
        &self.api_key
    }
}

impl fmt::Debug for CreatorCredential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // deliberate redaction
        write!(f, "CreatorCredential(key_id={})", self.key_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProofStatus {
    Queued,
    Submitted,
    Confirmed,
    Failed,
}

/// Lifecycle of one hash at the timestamping service, as persisted in
/// `proofs.jsonl` (one canonical-JSON line per state change,
/// last-wins, compacted on clean shutdown).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofRecord {
    pub hash: String,
    pub submitted_at_us: u64,
    pub service_url: String,
    pub status: ProofStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tx_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub blockchain_time_us: Option<u64>,
    pub attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

impl ProofRecord {
    pub fn validate(&self) -> Result<(), StamperError> {
        if ChunkHash::from_hex(&self.hash).is_err() {
            return Err(StamperError::BadRecord(format!(
                "hash {:?} is not 64 lowercase hex characters",
                self.hash
            )));
        }
        if self.status == ProofStatus::Confirmed
            && (self.tx_id.is_none() || self.blockchain_time_us.is_none())
        {
            return Err(StamperError::BadRecord(format!(
                "confirmed proof for {} lacks tx_id or blockchain time",
                self.hash
            )));
        }
        if self.status != ProofStatus::Queued && self.attempts == 0 {
            return Err(StamperError::BadRecord(format!(
                "proof for {} is {:?} with zero attempts",
                self.hash, self.status
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StamperError {
    #[error("proof store io at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("proof store line {line} does not parse: {source}")]
    BadLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid proof record: {0}")]
    BadRecord(String),
    #[error("hash {0} was never submitted")]
    UnknownHash(String),
}

fn io_err(path: &Path, source: std::io::Error) -> StamperError {
    StamperError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Persistent map hash → latest ProofRecord, backed by a JSONL file.
pub struct ProofStore {
    path: PathBuf,
    records: BTreeMap<String, ProofRecord>,
}

impl ProofStore {
    /// Load (or create) the store. Later lines win; a torn final line
    /// is discarded with a warning, like the journal.
    pub fn open(path: &Path) -> Result<ProofStore, StamperError> {
        let mut records = BTreeMap::new();
        match fs::read(path) {
            Ok(raw) => {
                let complete = match raw.iter().rposition(|&b| b == b'\n') {
                    Some(last_newline) => {
                        if last_newline + 1 != raw.len() {
                            log::warn!(
                                "proof store {}: discarding torn final line",
                                path.display()
                            );
                        }
                        &raw[..=last_newline]
                    }
                    None => {
                        if !raw.is_empty() {
                            log::warn!(
                                "proof store {}: discarding torn final line",
                                path.display()
                            );
                        }
                        &raw[..0]
                    }
                };
                for (i, line) in complete.split(|&b| b == b'\n').enumerate() {
                    if line.is_empty() {
                        continue;
                    }
                    let record: ProofRecord = serde_json::from_slice(line)
                        .map_err(|source| StamperError::BadLine { line: i + 1, source })?;
                    record.validate()?;
                    records.insert(record.hash.clone(), record);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(path, e)),
        }
        Ok(ProofStore {
            path: path.to_path_buf(),
            records,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, hash_hex: &str) -> Option<&ProofRecord> {
        self.records.get(hash_hex)
    }

    /// Records sorted by hash.
    pub fn iter(&self) -> impl Iterator<Item = &ProofRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Persist a state change: append one line, sync, update the map.
    pub fn upsert(&mut self, record: ProofRecord) -> Result<(), StamperError> {
        record.validate()?;
        let mut line = canonical_line(&record)
            .map_err(|e| StamperError::BadRecord(e.to_string()))?;
        line.push('\n');
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| io_err(&self.path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| io_err(&self.path, e))?;
        f.sync_data().map_err(|e| io_err(&self.path, e))?;
        self.records.insert(record.hash.clone(), record);
        Ok(())
    }

    /// Rewrite the file to one line per hash (clean shutdown).
    pub fn compact(&self) -> Result<(), StamperError> {
        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
            for record in self.records.values() {
                let mut line = canonical_line(record)
                    .map_err(|e| StamperError::BadRecord(e.to_string()))?;
                line.push('\n');
                f.write_all(line.as_bytes()).map_err(|e| io_err(&tmp, e))?;
            }
            f.sync_data().map_err(|e| io_err(&tmp, e))?;
        }
        fs::rename(&tmp, &self.path).map_err(|e| io_err(&self.path, e))?;
        Ok(())
    }
}

/// What a proof poll found at the service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProofPoll {
    Pending,
    Confirmed { tx_id: String, timestamp_s: u64 },
    Unknown,
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("network: {0}")]
    Network(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

/// Thin wire client for the stamp protocol.
pub struct StamperClient {
    url: String,
    cred: CreatorCredential,
    agent: ureq::Agent,
}

impl StamperClient {
    pub fn new(url: &str, cred: CreatorCredential) -> StamperClient {
        StamperClient {
            url: url.trim_end_matches('/').to_string(),
            cred,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(10))
                .build(),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn key_id(&self) -> &str {
        self.cred.key_id()
    }

    /// POST /api/stamp. Ok(()) means the service acknowledged the
    /// submission.
    pub fn submit(&self, hash: &ChunkHash) -> Result<(), WireError> {
        let result = self
            .agent
            .post(&format!("{}/api/stamp", self.url))
            .set("Authorization", self.cred.api_key())
            .send_json(serde_json::json!({ "hash": hash.to_hex() }));
        match result {
            Ok(_) => Ok(()),
            Err(ureq::Error::Status(401 | 403, r)) => {
                Err(WireError::Auth(read_reason(r)))
            }
            Err(ureq::Error::Status(code, r)) => Err(WireError::Protocol(format!(
                "service answered {code}: {}",
                read_reason(r)
            ))),
            Err(ureq::Error::Transport(t)) => Err(WireError::Network(t.to_string())),
        }
    }

    /// GET /api/proof/<hex>.
    pub fn proof(&self, hash: &ChunkHash) -> Result<ProofPoll, WireError> {
        let result = self
            .agent
            .get(&format!("{}/api/proof/{}", self.url, hash.to_hex()))
            .call();
        let response = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(404, _)) => return Ok(ProofPoll::Unknown),
            Err(ureq::Error::Status(code, r)) => {
                return Err(WireError::Protocol(format!(
                    "service answered {code}: {}",
                    read_reason(r)
                )))
            }
            Err(ureq::Error::Transport(t)) => return Err(WireError::Network(t.to_string())),
        };
        let v: serde_json::Value = response
            .into_json()
            .map_err(|e| WireError::Protocol(format!("reply not json: {e}")))?;
        match v["status"].as_str() {
            Some("pending") => Ok(ProofPoll::Pending),
            Some("confirmed") => {
                let tx_id = v["tx_id"]
                    .as_str()
                    .ok_or_else(|| WireError::Protocol("confirmed without tx_id".into()))?
                    .to_string();
                let timestamp_s = v["timestamp"]
                    .as_u64()
                    .ok_or_else(|| WireError::Protocol("confirmed without timestamp".into()))?;
                Ok(ProofPoll::Confirmed { tx_id, timestamp_s })
            }
            other => Err(WireError::Protocol(format!("unexpected status {other:?}"))),
        }
    }
}

fn read_reason(r: ureq::Response) -> String {
    r.into_string().unwrap_or_else(|_| "<unreadable body>".to_string())
}

/// Submission orchestrator: client + proof store + retry schedule.
pub struct Stamper {
    client: StamperClient,
    proofs: ProofStore,
    backoff_base: Duration,
    backoff_cap: Duration,
    next_attempt: BTreeMap<String, Instant>,
}

impl Stamper {
    pub fn new(client: StamperClient, proofs: ProofStore) -> Stamper {
        Stamper::with_backoff(client, proofs, DEFAULT_BACKOFF_BASE, DEFAULT_BACKOFF_CAP)
    }

    /// Backoff made configurable so fault-injection tests run in
    /// milliseconds.
    pub fn with_backoff(
        client: StamperClient,
        proofs: ProofStore,
        base: Duration,
        cap: Duration,
    ) -> Stamper {
        Stamper {
            client,
            proofs,
            backoff_base: base,
            backoff_cap: cap,
            next_attempt: BTreeMap::new(),
        }
    }

    pub fn proofs(&self) -> &ProofStore {
        &self.proofs
    }

    pub fn into_proofs(self) -> ProofStore {
        self.proofs
    }

    /// Submit a hash (exactly-once semantics). An existing record that
    /// is already on its way is returned untouched; a queued or failed
    /// one is retried now; a fresh one is attempted immediately. On
    /// network failure the record persists as queued.
    pub fn submit_hash(
        &mut self,
        hash: &ChunkHash,
        now_us: u64,
    ) -> Result<&ProofRecord, StamperError> {
        let hex = hash.to_hex();
        let (mut record, fresh) = match self.proofs.get(&hex) {
            Some(existing)
                if existing.status == ProofStatus::Submitted
                    || existing.status == ProofStatus::Confirmed =>
            {
                return Ok(self.proofs.get(&hex).unwrap());
            }
            Some(existing) => (existing.clone(), false),
            None => (
                ProofRecord {
                    hash: hex.clone(),
                    submitted_at_us: now_us,
                    service_url: self.client.url().to_string(),
                    status: ProofStatus::Queued,
                    tx_id: None,
                    blockchain_time_us: None,
                    attempts: 0,
                    reason: None,
                },
                true,
            ),
        };
        if fresh {
            // persist the intent before the first network attempt, so a
            // crash mid-submit leaves a queued record to retry
            self.proofs.upsert(record.clone())?;
        }
        record.attempts += 1;
        match self.client.submit(hash) {
            Ok(()) => {
                record.status = ProofStatus::Submitted;
                record.reason = None;
            }
            Err(WireError::Auth(reason)) => {
                record.status = ProofStatus::Failed;
                record.reason = Some(reason);
            }
            Err(WireError::Network(reason)) | Err(WireError::Protocol(reason)) => {
                record.status = ProofStatus::Queued;
                record.reason = Some(reason);
                self.schedule_retry(&hex, record.attempts);
            }
        }
        self.proofs.upsert(record)?;
        Ok(self.proofs.get(&hex).unwrap())
    }

    /// Poll the service for a submitted hash. Confirmed records are
    /// returned as-is without a network call.
    pub fn poll_proof(&mut self, hash: &ChunkHash) -> Result<&ProofRecord, StamperError> {
        let hex = hash.to_hex();
        let record = self
            .proofs
            .get(&hex)
            .ok_or_else(|| StamperError::UnknownHash(hex.clone()))?;
        if record.status == ProofStatus::Confirmed {
            return Ok(self.proofs.get(&hex).unwrap());
        }
        let mut record = record.clone();
        match self.client.proof(hash) {
            Ok(ProofPoll::Confirmed { tx_id, timestamp_s }) => {
                record.status = ProofStatus::Confirmed;
                record.tx_id = Some(tx_id);
                record.blockchain_time_us = Some(timestamp_s * 1_000_000);
                record.reason = None;
                record.attempts = record.attempts.max(1);
                self.proofs.upsert(record)?;
            }
            Ok(ProofPoll::Pending) => {}
            Ok(ProofPoll::Unknown) => {
                // submitted but the service denies knowledge: keep it
                // queued so the retry worker re-submits
                if record.status != ProofStatus::Queued {
                    record.status = ProofStatus::Queued;
                    record.reason = Some("service does not know this hash".to_string());
                    self.proofs.upsert(record)?;
                }
            }
            Err(_) => {
                // transient; next poll pass tries again
            }
        }
        Ok(self.proofs.get(&hex).unwrap())
    }

    /// Retry every queued record whose backoff has elapsed. Returns
    /// how many submissions went through.
    pub fn retry_pass(&mut self, now_us: u64) -> Result<usize, StamperError> {
        let now = Instant::now();
        let due: Vec<String> = self
            .proofs
            .iter()
            .filter(|r| r.status == ProofStatus::Queued)
            .map(|r| r.hash.clone())
            .filter(|h| self.next_attempt.get(h).map_or(true, |&t| t <= now))
            .collect();
        let mut submitted = 0;
        for hex in due {
            let hash = ChunkHash::from_hex(&hex).expect("store holds valid hashes");
            let record = self.submit_hash(&hash, now_us)?;
            if record.status == ProofStatus::Submitted {
                submitted += 1;
                self.next_attempt.remove(&hex);
            }
        }
        Ok(submitted)
    }

    /// Poll every submitted-but-unconfirmed record once.
    pub fn poll_pass(&mut self) -> Result<usize, StamperError> {
        let open: Vec<String> = self
            .proofs
            .iter()
            .filter(|r| r.status == ProofStatus::Submitted)
            .map(|r| r.hash.clone())
            .collect();
        let mut confirmed = 0;
        for hex in open {
            let hash = ChunkHash::from_hex(&hex).expect("store holds valid hashes");
            if self.poll_proof(&hash)?.status == ProofStatus::Confirmed {
                confirmed += 1;
            }
        }
        Ok(confirmed)
    }

    /// Queued or submitted records still in flight.
    pub fn outstanding(&self) -> usize {
        self.proofs
            .iter()
            .filter(|r| matches!(r.status, ProofStatus::Queued | ProofStatus::Submitted))
            .count()
    }

    fn schedule_retry(&mut self, hex: &str, attempts: u32) {
        let factor = 1u32 << attempts.saturating_sub(1).min(20);
        let delay = self.backoff_base.saturating_mul(factor).min(self.backoff_cap);
        self.next_attempt
            .insert(hex.to_string(), Instant::now() + delay);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk::hash_chunk;
    use crate::mockstamp::{FaultMode, MockStamper};

    fn fast_stamper(url: &str, dir: &Path) -> Stamper {
        let cred = CreatorCredential::new("test-key".to_string());
        let client = StamperClient::new(url, cred);
        let proofs = ProofStore::open(&dir.join("proofs.jsonl")).unwrap();
        Stamper::with_backoff(
            client,
            proofs,
            Duration::from_millis(5),
            Duration::from_millis(50),
        )
    }

    #[test]
    fn key_id_is_a_sha256_fingerprint() {
        let cred = CreatorCredential::new("abc".to_string());
        // first 16 hex of sha256("abc")
        assert_eq!(cred.key_id(), "ba7816bf8f01cfea");
        assert_eq!(cred.key_id().len(), 16);
        let debugged = format!("{cred:?}");
        assert!(!debugged.contains("abc"));
    }

    #[test]
    fn fresh_hash_submits_once() {
        let mock = MockStamper::start(0, Duration::ZERO).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut stamper = fast_stamper(&mock.url(), dir.path());
        let hash = hash_chunk(b"h1").unwrap();

        let record = stamper.submit_hash(&hash, 1).unwrap();
        assert_eq!(record.status, ProofStatus::Submitted);
        assert_eq!(record.attempts, 1);

        // duplicate returns the same record, no second service entry
        let again = stamper.submit_hash(&hash, 2).unwrap().clone();
        assert_eq!(again.attempts, 1);
        assert_eq!(mock.received_hashes().len(), 1);
    }

    #[test]
    fn network_failure_queues_then_recovers() {
        let mock = MockStamper::start(0, Duration::ZERO).unwrap();
        mock.set_fault(FaultMode::RefuseConnections);
        let dir = tempfile::tempdir().unwrap();
        let mut stamper = fast_stamper(&mock.url(), dir.path());
        let hash = hash_chunk(b"h2").unwrap();

        let record = stamper.submit_hash(&hash, 1).unwrap();
        assert_eq!(record.status, ProofStatus::Queued);
        assert!(mock.received_hashes().is_empty());

        mock.set_fault(FaultMode::None);
        std::thread::sleep(Duration::from_millis(10));
        let moved = stamper.retry_pass(2).unwrap();
        assert_eq!(moved, 1);
        assert_eq!(
            stamper.proofs().get(&hash.to_hex()).unwrap().status,
            ProofStatus::Submitted
        );
    }

    #[test]
    fn auth_failure_is_terminal_with_reason() {
        let mock = MockStamper::start(0, Duration::ZERO).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cred = CreatorCredential::new(String::new());
        let client = StamperClient::new(&mock.url(), cred);
        let proofs = ProofStore::open(&dir.path().join("proofs.jsonl")).unwrap();
        let mut stamper = Stamper::new(client, proofs);

        let hash = hash_chunk(b"h3").unwrap();
        let record = stamper.submit_hash(&hash, 1).unwrap();
        assert_eq!(record.status, ProofStatus::Failed);
        assert!(record.reason.is_some());
    }

    #[test]
    fn poll_lifecycle_to_confirmed() {
        let mock = MockStamper::start(0, Duration::from_millis(100)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut stamper = fast_stamper(&mock.url(), dir.path());
        let hash = hash_chunk(b"h4").unwrap();

        stamper.submit_hash(&hash, 1).unwrap();
        let record = stamper.poll_proof(&hash).unwrap();
        assert_eq!(record.status, ProofStatus::Submitted); // still pending

        std::thread::sleep(Duration::from_millis(150));
        let record = stamper.poll_proof(&hash).unwrap().clone();
        assert_eq!(record.status, ProofStatus::Confirmed);
        assert_eq!(
            record.tx_id.as_deref(),
            Some(format!("mock-{}", &hash.to_hex()[..24]).as_str())
        );
        assert!(record.blockchain_time_us.unwrap() > 1_700_000_000_000_000);

        // polling a confirmed record is a no-op returning the same tx
        let tx = record.tx_id.clone();
        let again = stamper.poll_proof(&hash).unwrap();
        assert_eq!(again.tx_id, tx);
    }

    #[test]
    fn poll_before_submit_is_an_error() {
        let mock = MockStamper::start(0, Duration::ZERO).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut stamper = fast_stamper(&mock.url(), dir.path());
        let hash = hash_chunk(b"h5").unwrap();
        assert!(matches!(
            stamper.poll_proof(&hash),
            Err(StamperError::UnknownHash(_))
        ));
    }

    #[test]
    fn proof_store_persists_and_compacts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proofs.jsonl");
        let hash = hash_chunk(b"persisted").unwrap().to_hex();
        {
            let mut store = ProofStore::open(&path).unwrap();
            let mut record = ProofRecord {
                hash: hash.clone(),
                submitted_at_us: 10,
                service_url: "http://example.invalid".to_string(),
                status: ProofStatus::Queued,
                tx_id: None,
                blockchain_time_us: None,
                attempts: 0,
                reason: None,
            };
            store.upsert(record.clone()).unwrap();
            record.status = ProofStatus::Submitted;
            record.attempts = 1;
            store.upsert(record).unwrap();
        }
        // two lines before compaction, last wins on load
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let store = ProofStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get(&hash).unwrap().status, ProofStatus::Submitted);

        store.compact().unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        // keys sorted in the canonical line
        let keys: Vec<&str> = text
            .trim()
            .trim_start_matches('{')
            .split(',')
            .map(|kv| kv.split(':').next().unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn torn_final_proof_line_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proofs.jsonl");
        let hash = hash_chunk(b"kept").unwrap().to_hex();
        let mut store = ProofStore::open(&path).unwrap();
        store
            .upsert(ProofRecord {
                hash: hash.clone(),
                submitted_at_us: 1,
                service_url: "u".to_string(),
                status: ProofStatus::Queued,
                tx_id: None,
                blockchain_time_us: None,
                attempts: 0,
                reason: None,
            })
            .unwrap();
        let mut f = fs::OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"hash\":\"trunc").unwrap();
        drop(f);

        let store = ProofStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        assert!(store.get(&hash).is_some());
    }

    #[test]
    fn record_then_drop_absorbs_on_retry() {
        let mock = MockStamper::start(0, Duration::ZERO).unwrap();
        mock.set_fault(FaultMode::RecordThenDrop);
        let dir = tempfile::tempdir().unwrap();
        let mut stamper = fast_stamper(&mock.url(), dir.path());
        let hash = hash_chunk(b"dropped").unwrap();

        // service records it but the reply is lost: client queues
        let record = stamper.submit_hash(&hash, 1).unwrap();
        assert_eq!(record.status, ProofStatus::Queued);
        assert_eq!(mock.received_hashes().len(), 1);

        mock.set_fault(FaultMode::None);
        std::thread::sleep(Duration::from_millis(10));
        stamper.retry_pass(2).unwrap();
        assert_eq!(
            stamper.proofs().get(&hash.to_hex()).unwrap().status,
            ProofStatus::Submitted
        );
        // still exactly one ledger entry
        assert_eq!(mock.received_hashes().len(), 1);
    }
}

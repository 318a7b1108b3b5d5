//! Buffering and sealing: samples accumulate per dataset until the
//! payload reaches the size threshold or the time window expires, then
//! the buffer is sealed into the next chunk of the hash chain.
//!
//! Crash ordering contract with the caller: a sealed chunk's bytes go
//! to the store first, then [`Chunker::ack_seal`] journals the seal
//! marker, then the manifest may list the chunk. A crash anywhere in
//! that window replays the same samples from the journal and re-seals
//! them into a byte-identical chunk (same sequence, same prev_hash),
//! so the chain never gaps, repeats, or forks.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::chunk::{
    chain_link, hash_chunk, serialize_chunk, Chunk, ChunkError, ChunkHash, ChunkHeader,
    DatasetId, RECORD_LEN,
};
use crate::journal::{self, JournalError, JournalReplay, JournalWriter};
use crate::lineproto::format_sample_line;
use crate::types::{Sample, FLAG_RESERVED_MASK};

/// Seal when the buffered payload reaches 256 KiB.
pub const DEFAULT_MAX_PAYLOAD: usize = 262_144;

/// Default time window: 300 s (config key `chunker.chunk_interval_s`).
pub const DEFAULT_INTERVAL_US: u64 = 300_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlushPolicy {
    /// Seal when 19 × buffered records ≥ this, checked after append.
    pub max_payload_bytes: usize,
    /// Seal when the buffer has been open this long. `None` disables
    /// time flushes (deterministic test runs).
    pub interval_us: Option<u64>,
}

impl Default for FlushPolicy {
    fn default() -> Self {
        FlushPolicy {
            max_payload_bytes: DEFAULT_MAX_PAYLOAD,
            interval_us: Some(DEFAULT_INTERVAL_US),
        }
    }
}

#[derive(Debug, Error)]
pub enum ChunkerError {
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error("journal compaction: {0}")]
    Io(#[from] std::io::Error),
}

/// A freshly sealed chunk with its canonical bytes and hash, handed to
/// the caller for storage, stamping, and manifest update.
#[derive(Debug, Clone)]
pub struct SealedChunk {
    pub chunk: Chunk,
    pub bytes: Vec<u8>,
    pub hash: ChunkHash,
}

pub struct Chunker {
    dataset_id: DatasetId,
    next_sequence: u64,
    last_hash: Option<ChunkHash>,
    buffer: Vec<Sample>,
    buffer_opened_at_us: Option<u64>,
    policy: FlushPolicy,
    journal: Option<JournalWriter>,
    rejected: u64,
}

impl Chunker {
    /// Fresh chain at sequence 0. `journal` is optional so pure
    /// in-memory runs (tests, simulations) skip the disk entirely.
    pub fn new(dataset_id: DatasetId, policy: FlushPolicy, journal: Option<JournalWriter>) -> Self {
        Chunker {
            dataset_id,
            next_sequence: 0,
            last_hash: None,
            buffer: Vec::new(),
            buffer_opened_at_us: None,
            policy,
            journal,
            rejected: 0,
        }
    }

    /// Rebuild chain position and buffer from the journal, reopening it
    /// for appending. Recovered samples are already journaled and are
    /// not written again. Callers should follow up with
    /// [`Chunker::seal_if_oversize`]: a crash can land between a
    /// size-triggered seal and its marker, leaving a full buffer.
    pub fn recover(
        dataset_id: DatasetId,
        journal_path: &Path,
        policy: FlushPolicy,
    ) -> Result<(Self, JournalReplay), ChunkerError> {
        let replay = journal::replay(journal_path)?;
        let writer = JournalWriter::open_append(journal_path)?;
        let (next_sequence, last_hash) = match replay.last_seal {
            Some((seq, hash)) => (seq + 1, Some(hash)),
            None => (0, None),
        };
        let chunker = Chunker {
            dataset_id,
            next_sequence,
            last_hash,
            buffer: replay.buffered.clone(),
            buffer_opened_at_us: replay.buffered.first().map(|s| s.timestamp_us),
            policy,
            journal: Some(writer),
            rejected: 0,
        };
        Ok((chunker, replay))
    }

    pub fn dataset_id(&self) -> DatasetId {
        self.dataset_id
    }

    pub fn next_sequence(&self) -> u64 {
        self.next_sequence
    }

    pub fn last_hash(&self) -> Option<&ChunkHash> {
        self.last_hash.as_ref()
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// 19 bytes per buffered record.
    pub fn payload_bytes(&self) -> usize {
        self.buffer.len() * RECORD_LEN
    }

    /// Samples refused for non-finite values or reserved flag bits.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Accept one sample; seal and return a chunk when the policy says
    /// so. Invalid samples are counted and dropped, never an error.
    /// `now_us` drives the time window (wall clock live, logical clock
    /// in deterministic runs).
    pub fn append(&mut self, s: Sample, now_us: u64) -> Result<Option<SealedChunk>, ChunkerError> {
        if !s.value.is_finite() || s.flags & FLAG_RESERVED_MASK != 0 {
            self.rejected += 1;
            return Ok(None);
        }
        if let Some(j) = self.journal.as_mut() {
            j.append_sample(&s)?;
        }
        if self.buffer.is_empty() {
            self.buffer_opened_at_us = Some(now_us);
        }
        self.buffer.push(s);

        if self.payload_bytes() >= self.policy.max_payload_bytes {
            return self.seal().map(Some);
        }
        if self.window_expired(now_us) {
            return self.seal().map(Some);
        }
        Ok(None)
    }

    /// Seal on time expiry even when no sample arrives. An empty buffer
    /// never seals.
    pub fn flush_if_expired(&mut self, now_us: u64) -> Result<Option<SealedChunk>, ChunkerError> {
        if !self.buffer.is_empty() && self.window_expired(now_us) {
            return self.seal().map(Some);
        }
        Ok(None)
    }

    /// Seal whatever is buffered, policy aside. Used at shutdown so no
    /// sample is lost; idempotent on an empty buffer.
    pub fn seal_now(&mut self) -> Result<Option<SealedChunk>, ChunkerError> {
        if self.buffer.is_empty() {
            return Ok(None);
        }
        self.seal().map(Some)
    }

    /// Complete an interrupted size-triggered seal after recovery.
    pub fn seal_if_oversize(&mut self) -> Result<Option<SealedChunk>, ChunkerError> {
        if !self.buffer.is_empty() && self.payload_bytes() >= self.policy.max_payload_bytes {
            return self.seal().map(Some);
        }
        Ok(None)
    }

    /// Journal the seal marker once the chunk's bytes are durable in
    /// the store. Until this runs, a restart re-seals the same samples
    /// into the same chunk.
    pub fn ack_seal(&mut self, sealed: &SealedChunk) -> Result<(), ChunkerError> {
        if let Some(j) = self.journal.as_mut() {
            j.append_seal(sealed.chunk.header.sequence, &sealed.hash)?;
        }
        Ok(())
    }

    /// Rewrite the journal to its minimal equivalent (last seal marker
    /// plus unsealed samples) via temp-and-rename. Called on clean
    /// shutdown so replay cost does not grow across runs.
    pub fn compact_journal(&mut self) -> Result<(), ChunkerError> {
        let Some(writer) = self.journal.as_ref() else {
            return Ok(());
        };
        let path = writer.path().to_path_buf();
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            if self.next_sequence > 0 {
                let hash = self.last_hash.as_ref().expect("chain position past genesis");
                writeln!(f, "SEAL {} {}", self.next_sequence - 1, hash.to_hex())?;
            }
            for s in &self.buffer {
                writeln!(f, "{}", format_sample_line(s))?;
            }
            f.sync_data()?;
        }
        fs::rename(&tmp, &path)?;
        self.journal = Some(JournalWriter::open_append(&path)?);
        Ok(())
    }

    fn window_expired(&self, now_us: u64) -> bool {
        match (self.policy.interval_us, self.buffer_opened_at_us) {
            (Some(interval), Some(opened)) => now_us.saturating_sub(opened) >= interval,
            _ => false,
        }
    }

    fn seal(&mut self) -> Result<SealedChunk, ChunkerError> {
        debug_assert!(!self.buffer.is_empty());
        let mut records = std::mem::take(&mut self.buffer);
        // stable: ties keep arrival order
        records.sort_by_key(|r| r.timestamp_us);
        let sequence = self.next_sequence;
        let chunk = Chunk {
            header: ChunkHeader {
                dataset_id: self.dataset_id,
                sequence,
                prev_hash: chain_link(self.last_hash.as_ref(), sequence)?,
                first_ts_us: records.first().unwrap().timestamp_us,
                last_ts_us: records.last().unwrap().timestamp_us,
                record_count: records.len() as u32,
            },
            records,
        };
        let bytes = serialize_chunk(&chunk)?;
        let hash = hash_chunk(&bytes)?;
        self.next_sequence += 1;
        self.last_hash = Some(hash);
        self.buffer_opened_at_us = None;
        Ok(SealedChunk { chunk, bytes, hash })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: u16, ts: u64, value: f64) -> Sample {
        Sample {
            sensor_id: id,
            timestamp_us: ts,
            value,
            flags: 0,
        }
    }

    fn size_only_policy() -> FlushPolicy {
        FlushPolicy {
            max_payload_bytes: DEFAULT_MAX_PAYLOAD,
            interval_us: None,
        }
    }

    fn dsid() -> DatasetId {
        DatasetId::from_bytes([1; 16])
    }

    // The threshold arithmetic, pinned before the chunker was written:
    // 13,797 records hold 262,143 bytes (one short), the 13,798th
    // crosses 262,144.
    #[test]
    fn threshold_arithmetic() {
        assert_eq!(RECORD_LEN, 19);
        assert_eq!(13_797 * RECORD_LEN, 262_143);
        assert!(13_797 * RECORD_LEN < DEFAULT_MAX_PAYLOAD);
        assert_eq!(13_798 * RECORD_LEN, 262_162);
        assert!(13_798 * RECORD_LEN >= DEFAULT_MAX_PAYLOAD);
    }

    #[test]
    fn seal_triggers_on_the_13798th_append() {
        let mut c = Chunker::new(dsid(), size_only_policy(), None);
        for i in 0..13_797u64 {
            let sealed = c.append(sample(1, i, 0.0), i).unwrap();
            assert!(sealed.is_none(), "sealed early at record {}", i + 1);
        }
        let sealed = c.append(sample(1, 13_797, 0.0), 13_797).unwrap().unwrap();
        assert_eq!(sealed.chunk.header.record_count, 13_798);
        // at most one record of slack past the threshold
        assert!(sealed.bytes.len() - crate::chunk::HEADER_LEN <= DEFAULT_MAX_PAYLOAD + RECORD_LEN - 1);
        assert_eq!(c.buffered(), 0);
        assert_eq!(c.next_sequence(), 1);
    }

    #[test]
    fn genesis_then_linked_successor() {
        let mut c = Chunker::new(dsid(), size_only_policy(), None);
        for i in 0..3 {
            c.append(sample(1, i, 1.0), i).unwrap();
        }
        let first = c.seal_now().unwrap().unwrap();
        assert_eq!(first.chunk.header.sequence, 0);
        assert_eq!(first.chunk.header.prev_hash, [0u8; 32]);

        c.append(sample(1, 10, 2.0), 10).unwrap();
        let second = c.seal_now().unwrap().unwrap();
        assert_eq!(second.chunk.header.sequence, 1);
        assert_eq!(second.chunk.header.prev_hash, *first.hash.as_bytes());
    }

    #[test]
    fn seal_now_is_empty_safe() {
        let mut c = Chunker::new(dsid(), size_only_policy(), None);
        assert!(c.seal_now().unwrap().is_none());
        c.append(sample(1, 1, 1.0), 1).unwrap();
        c.append(sample(1, 2, 2.0), 2).unwrap();
        c.append(sample(1, 3, 3.0), 3).unwrap();
        let sealed = c.seal_now().unwrap().unwrap();
        assert_eq!(sealed.chunk.header.record_count, 3);
        assert!(c.seal_now().unwrap().is_none());
    }

    #[test]
    fn time_window_seals_on_append_and_on_flush() {
        let policy = FlushPolicy {
            max_payload_bytes: DEFAULT_MAX_PAYLOAD,
            interval_us: Some(10_000_000),
        };
        let mut c = Chunker::new(dsid(), policy, None);
        assert!(c.append(sample(1, 0, 1.0), 0).unwrap().is_none());
        assert!(c.append(sample(1, 5_000_000, 1.0), 5_000_000).unwrap().is_none());
        // window expires at the 10 s mark, sealing on append
        let sealed = c.append(sample(1, 10_000_000, 1.0), 10_000_000).unwrap();
        assert_eq!(sealed.unwrap().chunk.header.record_count, 3);

        // and with no sample arriving, flush_if_expired does it
        assert!(c.flush_if_expired(25_000_000).unwrap().is_none()); // empty buffer
        c.append(sample(1, 20_000_000, 1.0), 20_000_000).unwrap();
        assert!(c.flush_if_expired(29_000_000).unwrap().is_none());
        let sealed = c.flush_if_expired(30_000_000).unwrap().unwrap();
        assert_eq!(sealed.chunk.header.record_count, 1);
    }

    #[test]
    fn invalid_samples_are_counted_not_fatal() {
        let mut c = Chunker::new(dsid(), size_only_policy(), None);
        c.append(sample(1, 1, f64::NAN), 1).unwrap();
        c.append(sample(1, 2, f64::INFINITY), 2).unwrap();
        c.append(
            Sample { sensor_id: 1, timestamp_us: 3, value: 1.0, flags: 0b10 },
            3,
        )
        .unwrap();
        assert_eq!(c.rejected(), 3);
        assert_eq!(c.buffered(), 0);
    }

    #[test]
    fn ties_keep_arrival_order_at_seal() {
        let mut c = Chunker::new(dsid(), size_only_policy(), None);
        c.append(sample(7, 100, 1.0), 0).unwrap();
        c.append(sample(3, 100, 2.0), 0).unwrap();
        c.append(sample(5, 50, 3.0), 0).unwrap();
        let sealed = c.seal_now().unwrap().unwrap();
        let ids: Vec<u16> = sealed.chunk.records.iter().map(|r| r.sensor_id).collect();
        assert_eq!(ids, vec![5, 7, 3]);
    }

    #[test]
    fn same_stream_same_chain() {
        let run = || {
            let mut c = Chunker::new(dsid(), size_only_policy(), None);
            let mut out = Vec::new();
            for i in 0..30_000u64 {
                if let Some(s) = c.append(sample((i % 4) as u16, i, (i as f64) * 0.5), i).unwrap() {
                    out.push(s);
                }
            }
            if let Some(s) = c.seal_now().unwrap() {
                out.push(s);
            }
            out
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.bytes, y.bytes);
            assert_eq!(x.hash, y.hash);
        }
    }

    #[test]
    fn recover_resumes_chain_and_buffer() {
        let dir = tempfile::tempdir().unwrap();
        let jpath = dir.path().join("journal.log");
        let first_hash;
        {
            let w = JournalWriter::open_append(&jpath).unwrap();
            let mut c = Chunker::new(dsid(), size_only_policy(), Some(w));
            for i in 0..4 {
                c.append(sample(1, i, 1.5), i).unwrap();
            }
            let sealed = c.seal_now().unwrap().unwrap();
            c.ack_seal(&sealed).unwrap();
            first_hash = sealed.hash;
            for i in 10..15 {
                c.append(sample(1, i, 2.5), i).unwrap();
            }
            // no clean shutdown: writer dropped mid-buffer
        }
        let (mut c, replay) = Chunker::recover(dsid(), &jpath, size_only_policy()).unwrap();
        assert_eq!(replay.buffered.len(), 5);
        assert!(!replay.torn_tail);
        assert_eq!(c.next_sequence(), 1);
        assert_eq!(c.last_hash(), Some(&first_hash));
        assert_eq!(c.buffered(), 5);

        let sealed = c.seal_now().unwrap().unwrap();
        assert_eq!(sealed.chunk.header.sequence, 1);
        assert_eq!(sealed.chunk.header.prev_hash, *first_hash.as_bytes());
        assert_eq!(sealed.chunk.header.record_count, 5);
    }

    #[test]
    fn recovery_completes_an_interrupted_size_seal() {
        let dir = tempfile::tempdir().unwrap();
        let jpath = dir.path().join("journal.log");
        let policy = FlushPolicy {
            max_payload_bytes: 10 * RECORD_LEN,
            interval_us: None,
        };
        {
            let w = JournalWriter::open_append(&jpath).unwrap();
            let mut c = Chunker::new(dsid(), policy, Some(w));
            for i in 0..10u64 {
                let sealed = c.append(sample(1, i, 0.0), i).unwrap();
                if sealed.is_some() {
                    // crash before store.put: marker never written
                    break;
                }
            }
        }
        let (mut c, _) = Chunker::recover(dsid(), &jpath, policy).unwrap();
        assert_eq!(c.buffered(), 10);
        let sealed = c.seal_if_oversize().unwrap().unwrap();
        assert_eq!(sealed.chunk.header.sequence, 0);
        assert_eq!(sealed.chunk.header.record_count, 10);
        assert!(c.seal_if_oversize().unwrap().is_none());
    }

    #[test]
    fn compaction_preserves_position_and_buffer() {
        let dir = tempfile::tempdir().unwrap();
        let jpath = dir.path().join("journal.log");
        let w = JournalWriter::open_append(&jpath).unwrap();
        let mut c = Chunker::new(dsid(), size_only_policy(), Some(w));
        for i in 0..4 {
            c.append(sample(1, i, 1.0), i).unwrap();
        }
        let sealed = c.seal_now().unwrap().unwrap();
        c.ack_seal(&sealed).unwrap();
        c.append(sample(1, 100, 9.0), 100).unwrap();
        c.compact_journal().unwrap();

        let (c2, replay) = Chunker::recover(dsid(), &jpath, size_only_policy()).unwrap();
        assert_eq!(replay.last_seal, Some((0, sealed.hash)));
        assert_eq!(c2.next_sequence(), 1);
        assert_eq!(c2.buffered(), 1);
        // compacted file is minimal: one marker line, one sample line
        let text = std::fs::read_to_string(&jpath).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}

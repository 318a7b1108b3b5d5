//! The TPC1 chunk container: canonical byte serialization, SHA-256
//! hashing, and hash-chain link construction.
//!
//! A chunk is the unit of sealing. Its bytes are canonical: header fields
//! in declaration order, then fixed 19-byte records, all multi-byte
//! integers big-endian, no padding. Equal chunks serialize to identical
//! bytes on every platform, which is what makes the chunk hash a stable
//! identity (the chain link, the storage address, and the timestamped
//! value are all this one hash).
//!
//! Layout (see FORMAT.md in the repo root):
//!
//! ```text
//! header (82 bytes):
//!   magic        4  ASCII "TPC1"
//!   version      2  u16, currently 1
//!   dataset_id  16
//!   sequence     8  u64, 0-based
//!   prev_hash   32  all-zero for sequence 0
//!   first_ts_us  8  u64
//!   last_ts_us   8  u64
//!   record_count 4  u32
//! record (19 bytes, record_count times):
//!   sensor_id    2  u16
//!   flags        1  u8
//!   timestamp_us 8  u64
//!   value        8  IEEE-754 bit pattern as u64
//! ```

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::{Sample, FLAG_RESERVED_MASK};

/// First four bytes of every chunk.
pub const CHUNK_MAGIC: [u8; 4] = *b"TPC1";

/// Current chunk format version.
pub const CHUNK_VERSION: u16 = 1;

/// Header length in bytes: 4 + 2 + 16 + 8 + 32 + 8 + 8 + 4.
pub const HEADER_LEN: usize = 82;

/// Record length in bytes: 2 + 1 + 8 + 8.
pub const RECORD_LEN: usize = 19;

/// Length of a chunk hash (SHA-256).
pub const HASH_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum ChunkError {
    #[error("invalid chunk field `{field}`: {reason}")]
    Invariant { field: &'static str, reason: String },
    #[error("bad magic {found:02x?}, expected \"TPC1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported chunk version {found}, expected {CHUNK_VERSION}")]
    UnsupportedVersion { found: u16 },
    #[error("truncated chunk: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("record count mismatch: header claims {claimed} records but {extra} bytes trail the last one")]
    RecordCountMismatch { claimed: u32, extra: usize },
    #[error("non-finite value in record {index}")]
    NonFiniteValue { index: usize },
    #[error("cannot hash empty input")]
    EmptyInput,
    #[error("chain link: {0}")]
    ChainLink(String),
    #[error("bad hash hex: {0}")]
    BadHashHex(String),
}

impl ChunkError {
    pub(crate) fn invariant(field: &'static str, reason: String) -> Self {
        ChunkError::Invariant { field, reason }
    }
}

/// SHA-256 digest of a chunk's canonical bytes. Doubles as the chain
/// link, the content address, and the value anchored at the
/// timestamping service.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkHash([u8; HASH_LEN]);

impl ChunkHash {
    pub fn from_bytes(bytes: [u8; HASH_LEN]) -> Self {
        ChunkHash(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; HASH_LEN] {
        &self.0
    }

    /// 64 lowercase hex characters.
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, ChunkError> {
        if s.len() != 64 || !s.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(ChunkError::BadHashHex(format!(
                "expected 64 hex characters, got {:?}",
                s
            )));
        }
        if s.chars().any(|c| c.is_ascii_uppercase()) {
            return Err(ChunkError::BadHashHex(format!(
                "hash hex must be lowercase, got {:?}",
                s
            )));
        }
        let raw = hex::decode(s).map_err(|e| ChunkError::BadHashHex(e.to_string()))?;
        let mut bytes = [0u8; HASH_LEN];
        bytes.copy_from_slice(&raw);
        Ok(ChunkHash(bytes))
    }
}

impl fmt::Display for ChunkHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ChunkHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChunkHash({})", self.to_hex())
    }
}

impl FromStr for ChunkHash {
    type Err = ChunkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChunkHash::from_hex(s)
    }
}

/// 16-byte dataset identity, generated once at recording start and
/// printed as 32 hex characters everywhere outside the binary format.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DatasetId([u8; 16]);

impl DatasetId {
    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        DatasetId(bytes)
    }

    pub fn random<R: rand::Rng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill(&mut bytes);
        DatasetId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, ChunkError> {
        if s.len() != 32 {
            return Err(ChunkError::BadHashHex(format!(
                "dataset id must be 32 hex characters, got {:?}",
                s
            )));
        }
        let raw = hex::decode(s).map_err(|e| ChunkError::BadHashHex(e.to_string()))?;
        let mut bytes = [0u8; 16];
        bytes.copy_from_slice(&raw);
        Ok(DatasetId(bytes))
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DatasetId({})", self.to_hex())
    }
}

impl FromStr for DatasetId {
    type Err = ChunkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetId::from_hex(s)
    }
}

/// Parsed chunk header. Magic and version are implied (constants) and
/// checked at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkHeader {
    pub dataset_id: DatasetId,
    /// 0-based position in the chain.
    pub sequence: u64,
    /// Hash of the previous chunk's bytes; all zeros for sequence 0.
    pub prev_hash: [u8; HASH_LEN],
    pub first_ts_us: u64,
    pub last_ts_us: u64,
    pub record_count: u32,
}

/// A sealed batch of samples plus the header that chains it.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub header: ChunkHeader,
    /// Sorted by `timestamp_us`, ties in arrival order.
    pub records: Vec<Sample>,
}

impl Chunk {
    /// Total serialized length in bytes.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + RECORD_LEN * self.records.len()
    }

    fn validate(&self) -> Result<(), ChunkError> {
        let h = &self.header;
        if self.records.is_empty() {
            return Err(ChunkError::invariant(
                "record_count",
                "a sealed chunk holds at least one record".to_string(),
            ));
        }
        if self.records.len() > u32::MAX as usize {
            return Err(ChunkError::invariant(
                "record_count",
                format!("{} records exceed the u32 field", self.records.len()),
            ));
        }
        if h.record_count as usize != self.records.len() {
            return Err(ChunkError::invariant(
                "record_count",
                format!(
                    "header says {}, record list holds {}",
                    h.record_count,
                    self.records.len()
                ),
            ));
        }
        let mut prev_ts = None;
        for (i, r) in self.records.iter().enumerate() {
            if !r.value.is_finite() {
                return Err(ChunkError::NonFiniteValue { index: i });
            }
            if r.flags & FLAG_RESERVED_MASK != 0 {
                return Err(ChunkError::invariant(
                    "records",
                    format!("record {i} has reserved flag bits set"),
                ));
            }
            if let Some(prev) = prev_ts {
                if r.timestamp_us < prev {
                    return Err(ChunkError::invariant(
                        "records",
                        format!(
                            "timestamps out of order at record {i}: {} after {}",
                            r.timestamp_us, prev
                        ),
                    ));
                }
            }
            prev_ts = Some(r.timestamp_us);
        }
        let first = self.records.first().unwrap().timestamp_us;
        let last = self.records.last().unwrap().timestamp_us;
        if h.first_ts_us != first {
            return Err(ChunkError::invariant(
                "first_ts_us",
                format!("header says {}, records start at {first}", h.first_ts_us),
            ));
        }
        if h.last_ts_us != last {
            return Err(ChunkError::invariant(
                "last_ts_us",
                format!("header says {}, records end at {last}", h.last_ts_us),
            ));
        }
        if h.first_ts_us > h.last_ts_us {
            return Err(ChunkError::invariant(
                "first_ts_us",
                format!("{} exceeds last_ts_us {}", h.first_ts_us, h.last_ts_us),
            ));
        }
        let zero = h.prev_hash == [0u8; HASH_LEN];
        if (h.sequence == 0) != zero {
            return Err(ChunkError::invariant(
                "prev_hash",
                format!(
                    "sequence {} requires {} prev_hash",
                    h.sequence,
                    if h.sequence == 0 { "an all-zero" } else { "a non-zero" }
                ),
            ));
        }
        Ok(())
    }
}

/// Canonical serialization. Pure: equal chunks give byte-identical
/// output. Rejects any invariant violation, naming the violated field.
pub fn serialize_chunk(chunk: &Chunk) -> Result<Vec<u8>, ChunkError> {
    chunk.validate()?;
    let h = &chunk.header;
    let mut out = Vec::with_capacity(chunk.byte_len());
    out.extend_from_slice(&CHUNK_MAGIC);
    out.extend_from_slice(&CHUNK_VERSION.to_be_bytes());
    out.extend_from_slice(h.dataset_id.as_bytes());
    out.extend_from_slice(&h.sequence.to_be_bytes());
    out.extend_from_slice(&h.prev_hash);
    out.extend_from_slice(&h.first_ts_us.to_be_bytes());
    out.extend_from_slice(&h.last_ts_us.to_be_bytes());
    out.extend_from_slice(&h.record_count.to_be_bytes());
    for r in &chunk.records {
        out.extend_from_slice(&r.sensor_id.to_be_bytes());
        out.push(r.flags);
        out.extend_from_slice(&r.timestamp_us.to_be_bytes());
        out.extend_from_slice(&r.value.to_bits().to_be_bytes());
    }
    debug_assert_eq!(out.len(), chunk.byte_len());
    Ok(out)
}

/// Exact inverse of [`serialize_chunk`] on valid input. Each failure
/// mode is a distinct error variant.
pub fn parse_chunk(bytes: &[u8]) -> Result<Chunk, ChunkError> {
    if bytes.len() < HEADER_LEN {
        return Err(ChunkError::Truncated {
            need: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[0..4]);
    if magic != CHUNK_MAGIC {
        return Err(ChunkError::BadMagic { found: magic });
    }
    let version = u16::from_be_bytes([bytes[4], bytes[5]]);
    if version != CHUNK_VERSION {
        return Err(ChunkError::UnsupportedVersion { found: version });
    }
    let mut dataset_id = [0u8; 16];
    dataset_id.copy_from_slice(&bytes[6..22]);
    let sequence = u64::from_be_bytes(bytes[22..30].try_into().unwrap());
    let mut prev_hash = [0u8; HASH_LEN];
    prev_hash.copy_from_slice(&bytes[30..62]);
    let first_ts_us = u64::from_be_bytes(bytes[62..70].try_into().unwrap());
    let last_ts_us = u64::from_be_bytes(bytes[70..78].try_into().unwrap());
    let record_count = u32::from_be_bytes(bytes[78..82].try_into().unwrap());

    let need = HEADER_LEN + RECORD_LEN * record_count as usize;
    if bytes.len() < need {
        return Err(ChunkError::Truncated {
            need,
            have: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(ChunkError::RecordCountMismatch {
            claimed: record_count,
            extra: bytes.len() - need,
        });
    }

    let mut records = Vec::with_capacity(record_count as usize);
    for i in 0..record_count as usize {
        let at = HEADER_LEN + i * RECORD_LEN;
        let r = &bytes[at..at + RECORD_LEN];
        let sensor_id = u16::from_be_bytes([r[0], r[1]]);
        let flags = r[2];
        let timestamp_us = u64::from_be_bytes(r[3..11].try_into().unwrap());
        let value = f64::from_bits(u64::from_be_bytes(r[11..19].try_into().unwrap()));
        if !value.is_finite() {
            return Err(ChunkError::NonFiniteValue { index: i });
        }
        records.push(Sample {
            sensor_id,
            timestamp_us,
            value,
            flags,
        });
    }

    let chunk = Chunk {
        header: ChunkHeader {
            dataset_id: DatasetId::from_bytes(dataset_id),
            sequence,
            prev_hash,
            first_ts_us,
            last_ts_us,
            record_count,
        },
        records,
    };
    chunk.validate()?;
    Ok(chunk)
}

/// SHA-256 of the chunk bytes. Empty input is refused so a missing
/// object can never hash to a plausible address.
pub fn hash_chunk(chunk_bytes: &[u8]) -> Result<ChunkHash, ChunkError> {
    if chunk_bytes.is_empty() {
        return Err(ChunkError::EmptyInput);
    }
    let digest = Sha256::digest(chunk_bytes);
    let mut bytes = [0u8; HASH_LEN];
    bytes.copy_from_slice(&digest);
    Ok(ChunkHash(bytes))
}

/// The prev_hash field for a chunk at `sequence`: the previous chunk's
/// hash, or 32 zero bytes for the genesis chunk. Presence of `prev`
/// must match the sequence number exactly.
pub fn chain_link(prev: Option<&ChunkHash>, sequence: u64) -> Result<[u8; HASH_LEN], ChunkError> {
    match (prev, sequence) {
        (None, 0) => Ok([0u8; HASH_LEN]),
        (Some(_), 0) => Err(ChunkError::ChainLink(
            "sequence 0 is the genesis chunk and takes no previous hash".to_string(),
        )),
        (None, seq) => Err(ChunkError::ChainLink(format!(
            "sequence {seq} requires the previous chunk's hash"
        ))),
        (Some(hash), _) => Ok(*hash.as_bytes()),
    }
}

//! Tamper-evident pipeline for time-series sensor measurements.
//!
//! Samples flow from sources through the chunker, which seals them into
//! hash-chained chunks. Chunk hashes are anchored at an external
//! timestamping service, the bytes land in a content-addressed store,
//! and an independent auditor can later re-derive every hash and replay
//! the chain without trusting the recorder.

pub mod bundle;
pub mod chunk;
pub mod canonical;
pub mod chunker;
pub mod dataset;
pub mod httpd;
pub mod ingest;
pub mod journal;
pub mod lineproto;
pub mod manifest;
pub mod mockstamp;
pub mod stamper;
pub mod store;
pub mod trustcheck;
pub mod types;
pub mod verify;

pub use chunk::{
    chain_link, hash_chunk, parse_chunk, serialize_chunk, Chunk, ChunkError, ChunkHash,
    ChunkHeader, DatasetId, CHUNK_MAGIC, CHUNK_VERSION, HASH_LEN, HEADER_LEN, RECORD_LEN,
};
pub use types::{Sample, SensorDescriptor, SensorKind, FLAG_RESERVED_MASK, FLAG_SUSPECT};

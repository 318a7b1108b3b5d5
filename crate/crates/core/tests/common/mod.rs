//! Shared fixture: build a complete on-disk dataset the way the
//! recorder does (journal, store, manifest, proofs), without going
//! through the CLI.

use std::path::Path;

use tpsc_core::chunker::{Chunker, FlushPolicy, SealedChunk};
use tpsc_core::dataset::DatasetPaths;
use tpsc_core::journal::JournalWriter;
use tpsc_core::manifest::DatasetManifest;
use tpsc_core::stamper::{ProofRecord, ProofStatus, ProofStore};
use tpsc_core::store::Store;
use tpsc_core::types::{Sample, SensorDescriptor, SensorKind};
use tpsc_core::{ChunkHash, DatasetId};

pub fn descriptor(sensor_id: u16) -> SensorDescriptor {
    SensorDescriptor {
        sensor_id,
        kind: SensorKind::Temperature,
        unit: "degC".to_string(),
        model: "DHT11".to_string(),
        nominal_interval_us: 1_000_000,
    }
}

pub fn confirmed_proof(hash: &ChunkHash, at_us: u64) -> ProofRecord {
    let hex = hash.to_hex();
    ProofRecord {
        hash: hex.clone(),
        submitted_at_us: at_us,
        service_url: "http://127.0.0.1:0".to_string(),
        status: ProofStatus::Confirmed,
        tx_id: Some(format!("mock-{}", &hex[..24])),
        blockchain_time_us: Some(at_us + 2_000_000),
        attempts: 1,
        reason: None,
    }
}

pub fn submitted_proof(hash: &ChunkHash, at_us: u64) -> ProofRecord {
    ProofRecord {
        hash: hash.to_hex(),
        submitted_at_us: at_us,
        service_url: "http://127.0.0.1:0".to_string(),
        status: ProofStatus::Submitted,
        tx_id: None,
        blockchain_time_us: None,
        attempts: 1,
        reason: None,
    }
}

/// Record `n_chunks` chunks of `records_per_chunk` samples each into
/// `root`, finalize, and write proofs (confirmed or merely submitted).
/// Returns the saved manifest and the sealed chunks.
pub fn build_dataset(
    root: &Path,
    n_chunks: usize,
    records_per_chunk: usize,
    confirm_proofs: bool,
) -> (DatasetManifest, Vec<SealedChunk>) {
    let paths = DatasetPaths::new(root);
    std::fs::create_dir_all(root).unwrap();
    let dataset_id = DatasetId::from_bytes([0x42; 16]);
    let store = Store::open(&paths.objects()).unwrap();
    let journal = JournalWriter::open_append(&paths.journal()).unwrap();
    let mut chunker = Chunker::new(
        dataset_id,
        FlushPolicy {
            max_payload_bytes: usize::MAX >> 1,
            interval_us: None,
        },
        Some(journal),
    );
    let mut manifest = DatasetManifest::new(
        dataset_id,
        "deadbeefdeadbeef".to_string(),
        vec![descriptor(1)],
    );
    let mut proofs = ProofStore::open(&paths.proofs()).unwrap();
    let mut sealed_chunks = Vec::new();

    let mut ts = 1_700_000_000_000_000u64;
    for _ in 0..n_chunks {
        for r in 0..records_per_chunk {
            let sample = Sample {
                sensor_id: 1,
                timestamp_us: ts,
                value: (r as f64) * 0.5 + 20.0,
                flags: 0,
            };
            ts += 1_000_000;
            chunker.append(sample, ts).unwrap();
        }
        let sealed = chunker.seal_now().unwrap().expect("buffer non-empty");
        store.put(&sealed.bytes).unwrap();
        chunker.ack_seal(&sealed).unwrap();
        manifest.push_chunk(&sealed).unwrap();
        let proof = if confirm_proofs {
            confirmed_proof(&sealed.hash, ts)
        } else {
            submitted_proof(&sealed.hash, ts)
        };
        proofs.upsert(proof).unwrap();
        sealed_chunks.push(sealed);
    }

    let manifest_hash = manifest.finalize().unwrap();
    let proof = if confirm_proofs {
        confirmed_proof(&manifest_hash, ts)
    } else {
        submitted_proof(&manifest_hash, ts)
    };
    proofs.upsert(proof).unwrap();
    manifest.save(&paths.manifest()).unwrap();

    (manifest, sealed_chunks)
}

/// Path of a stored object inside `root`.
pub fn object_path(root: &Path, hash: &ChunkHash) -> std::path::PathBuf {
    let hex = hash.to_hex();
    DatasetPaths::new(root)
        .objects()
        .join(&hex[..2])
        .join(&hex[2..])
}

//! Deposit bundle round trips: determinism, integrity checks on read,
//! and the export → extract → verify loop.

mod common;

use std::io::Cursor;

use tpsc_core::bundle::{
    extract_bundle, read_bundle, write_bundle, write_bundle_file, BundleError,
};
use tpsc_core::verify::{verify_dir, Verdict};

fn bundle_bytes(root: &std::path::Path) -> Vec<u8> {
    let mut out = Vec::new();
    write_bundle(root, &mut out).unwrap();
    out
}

#[test]
fn writing_the_same_dataset_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    common::build_dataset(dir.path(), 3, 40, true);
    let a = bundle_bytes(dir.path());
    let b = bundle_bytes(dir.path());
    assert_eq!(a, b);
    assert!(!a.is_empty());

    let out = dir.path().join("deposit.tar");
    write_bundle_file(dir.path(), &out).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), a);
}

#[test]
fn members_appear_in_the_documented_order() {
    let dir = tempfile::tempdir().unwrap();
    common::build_dataset(dir.path(), 3, 40, true);
    let bytes = bundle_bytes(dir.path());
    let mut archive = tar::Archive::new(Cursor::new(&bytes));
    let names: Vec<String> = archive
        .entries()
        .unwrap()
        .map(|e| e.unwrap().path().unwrap().to_str().unwrap().to_string())
        .collect();
    assert_eq!(names[0], "manifest.json");
    assert_eq!(names[1], "proofs.jsonl");
    assert_eq!(*names.last().unwrap(), "README");
    let objects: Vec<&String> = names[2..names.len() - 1].iter().collect();
    assert_eq!(objects.len(), 3);
    let mut sorted = objects.clone();
    sorted.sort();
    assert_eq!(objects, sorted, "objects must be sorted by address");

    // normalized metadata: every header says mtime 0, uid/gid 0, 0644
    let mut archive = tar::Archive::new(Cursor::new(&bytes));
    for entry in archive.entries().unwrap() {
        let entry = entry.unwrap();
        let h = entry.header();
        assert_eq!(h.mtime().unwrap(), 0);
        assert_eq!(h.uid().unwrap(), 0);
        assert_eq!(h.gid().unwrap(), 0);
        assert_eq!(h.mode().unwrap() & 0o777, 0o644);
    }
}

#[test]
fn read_after_write_exposes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, chunks) = common::build_dataset(dir.path(), 2, 25, true);
    let bytes = bundle_bytes(dir.path());
    let view = read_bundle(Cursor::new(&bytes)).unwrap();
    assert_eq!(view.manifest.dataset_id, manifest.dataset_id);
    assert_eq!(view.manifest.chunks.len(), 2);
    assert_eq!(view.objects.len(), 2);
    for sealed in &chunks {
        assert_eq!(view.objects[&sealed.hash.to_hex()], sealed.bytes);
    }
    // chunk proofs plus the manifest-hash proof
    assert_eq!(view.proofs.len(), 3);
    assert!(view.readme.contains(&manifest.dataset_id));
}

#[test]
fn extracted_bundle_verifies_intact() {
    let dir = tempfile::tempdir().unwrap();
    common::build_dataset(dir.path(), 3, 30, true);
    let bytes = bundle_bytes(dir.path());

    let out = tempfile::tempdir().unwrap();
    extract_bundle(Cursor::new(&bytes), out.path()).unwrap();
    let report = verify_dir(out.path()).unwrap();
    assert_eq!(report.verdict, Verdict::Intact, "{}", report.to_text());
    for checks in &report.per_chunk {
        assert_eq!(checks.proof_status, "confirmed");
    }
}

#[test]
fn unfinalized_dataset_refuses_to_export() {
    let dir = tempfile::tempdir().unwrap();
    common::build_dataset(dir.path(), 1, 10, true);
    // rewrite the manifest as unfinalized
    let manifest_path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["finalized"] = serde_json::json!(false);
    value.as_object_mut().unwrap().remove("manifest_hash");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&value).unwrap()).unwrap();

    let mut out = Vec::new();
    let err = write_bundle(dir.path(), &mut out).unwrap_err();
    assert!(matches!(err, BundleError::Unfinalized));
    assert!(err.to_string().contains("finalize"));
}

#[test]
fn missing_store_object_aborts_the_export() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = common::build_dataset(dir.path(), 2, 20, true);
    let victim = tpsc_core::ChunkHash::from_hex(&manifest.chunks[1].hash).unwrap();
    std::fs::remove_file(common::object_path(dir.path(), &victim)).unwrap();
    let mut out = Vec::new();
    let err = write_bundle(dir.path(), &mut out).unwrap_err();
    match err {
        BundleError::MissingMember { name } => {
            assert!(name.contains(&manifest.chunks[1].hash[..2]))
        }
        other => panic!("expected MissingMember, got {other:?}"),
    }
}

/// Rebuild an archive, transforming one member.
fn rewrite_archive(
    bytes: &[u8],
    mut keep: impl FnMut(&str) -> bool,
    mut mutate: impl FnMut(&str, &mut Vec<u8>),
) -> Vec<u8> {
    let mut archive = tar::Archive::new(Cursor::new(bytes));
    let mut builder = tar::Builder::new(Vec::new());
    for entry in archive.entries().unwrap() {
        let mut entry = entry.unwrap();
        let name = entry.path().unwrap().to_str().unwrap().to_string();
        if !keep(&name) {
            continue;
        }
        let mut data = Vec::new();
        std::io::Read::read_to_end(&mut entry, &mut data).unwrap();
        mutate(&name, &mut data);
        let mut header = entry.header().clone();
        header.set_size(data.len() as u64);
        builder.append_data(&mut header, &name, data.as_slice()).unwrap();
    }
    builder.into_inner().unwrap()
}

#[test]
fn archive_missing_one_object_names_the_absent_address() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = common::build_dataset(dir.path(), 3, 20, true);
    let bytes = bundle_bytes(dir.path());
    let victim = &manifest.chunks[1].hash;
    let victim_member = format!("objects/{}/{}", &victim[..2], &victim[2..]);
    let stripped = rewrite_archive(&bytes, |name| name != victim_member, |_, _| {});
    match read_bundle(Cursor::new(&stripped)).unwrap_err() {
        BundleError::MissingMember { name } => assert_eq!(name, victim_member),
        other => panic!("expected MissingMember, got {other:?}"),
    }
}

#[test]
fn corrupted_object_bytes_name_the_mismatched_address() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = common::build_dataset(dir.path(), 2, 20, true);
    let bytes = bundle_bytes(dir.path());
    let victim = manifest.chunks[0].hash.clone();
    let victim_member = format!("objects/{}/{}", &victim[..2], &victim[2..]);
    let poisoned = rewrite_archive(
        &bytes,
        |_| true,
        |name, data| {
            if name == victim_member {
                let last = data.len() - 1;
                data[last] ^= 0x01;
            }
        },
    );
    match read_bundle(Cursor::new(&poisoned)).unwrap_err() {
        BundleError::AddressMismatch { address, actual } => {
            assert_eq!(address, victim);
            assert_ne!(actual, victim);
        }
        other => panic!("expected AddressMismatch, got {other:?}"),
    }
}

#[test]
fn foreign_members_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    common::build_dataset(dir.path(), 1, 10, true);
    let bytes = bundle_bytes(dir.path());
    let mut builder = tar::Builder::new(Vec::new());
    {
        let mut archive = tar::Archive::new(Cursor::new(&bytes));
        for entry in archive.entries().unwrap() {
            let mut entry = entry.unwrap();
            let name = entry.path().unwrap().to_str().unwrap().to_string();
            let mut data = Vec::new();
            std::io::Read::read_to_end(&mut entry, &mut data).unwrap();
            let mut header = entry.header().clone();
            header.set_size(data.len() as u64);
            builder.append_data(&mut header, &name, data.as_slice()).unwrap();
        }
    }
    let mut header = tar::Header::new_ustar();
    header.set_entry_type(tar::EntryType::Regular);
    header.set_size(4);
    header.set_mode(0o644);
    header.set_mtime(0);
    builder
        .append_data(&mut header, "evil.txt", &b"boom"[..])
        .unwrap();
    let with_extra = builder.into_inner().unwrap();
    match read_bundle(Cursor::new(&with_extra)).unwrap_err() {
        BundleError::Malformed(msg) => assert!(msg.contains("evil.txt")),
        other => panic!("expected Malformed, got {other:?}"),
    }
}

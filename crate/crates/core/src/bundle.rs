//! Deposit bundles: one finalized dataset as a single deterministic
//! uncompressed tar archive, ready for a long-term archive upload.
//!
//! Member order is fixed (manifest, proofs, objects sorted by address,
//! README last) and all header metadata is normalized, so identical
//! datasets produce byte-identical archives; the bundle itself can be
//! hashed and cited. No compression: longevity and toolless
//! auditability beat size here.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::chunk::ChunkHash;
use crate::dataset::{DatasetPaths, MANIFEST_FILE, PROOFS_FILE};
use crate::manifest::{DatasetManifest, ManifestError};
use crate::stamper::ProofRecord;
use crate::store::{Store, StoreError};

pub const BUNDLE_README: &str = "README";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("dataset is not finalized; run finalize before exporting")]
    Unfinalized,
    #[error("manifest: {0}")]
    Manifest(#[from] ManifestError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bundle is missing member {name}")]
    MissingMember { name: String },
    #[error("object {address} does not hash to its address (got {actual})")]
    AddressMismatch { address: String, actual: String },
    #[error("malformed bundle: {0}")]
    Malformed(String),
}

/// Write the dataset at `root` as a tar stream. Objects are read back
/// through the verifying store path, so a corrupted object aborts the
/// export instead of being archived.
pub fn write_bundle<W: Write>(root: &Path, out: W) -> Result<(), BundleError> {
    let paths = DatasetPaths::new(root);
    let manifest = DatasetManifest::load(&paths.manifest())?;
    if !manifest.finalized {
        return Err(BundleError::Unfinalized);
    }
    let store = Store::open(&paths.objects())?;
    let proofs_bytes = std::fs::read(paths.proofs()).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            BundleError::MissingMember {
                name: PROOFS_FILE.to_string(),
            }
        } else {
            BundleError::Io(e)
        }
    })?;

    let mut addresses: Vec<ChunkHash> = Vec::with_capacity(manifest.chunks.len());
    for entry in &manifest.chunks {
        let address =
            ChunkHash::from_hex(&entry.hash).map_err(|e| BundleError::Malformed(e.to_string()))?;
        addresses.push(address);
    }
    addresses.sort_by_key(|a| a.to_hex());
    addresses.dedup_by_key(|a| a.to_hex());

    let mut builder = tar::Builder::new(out);
    let manifest_bytes = std::fs::read(paths.manifest())?;
    append_member(&mut builder, MANIFEST_FILE, &manifest_bytes)?;
    append_member(&mut builder, PROOFS_FILE, &proofs_bytes)?;
    for address in &addresses {
        let bytes = match store.get(address) {
            Ok(b) => b,
            Err(StoreError::NotFound { .. }) => {
                return Err(BundleError::MissingMember {
                    name: object_member_name(&address.to_hex()),
                })
            }
            Err(e) => return Err(e.into()),
        };
        append_member(&mut builder, &object_member_name(&address.to_hex()), &bytes)?;
    }
    let readme = readme_text(&manifest);
    append_member(&mut builder, BUNDLE_README, readme.as_bytes())?;
    builder.finish()?;
    Ok(())
}

/// Write the bundle to a file via a temp-and-rename so no partial
/// archive is ever visible under the final name.
pub fn write_bundle_file(root: &Path, out_path: &Path) -> Result<(), BundleError> {
    let tmp = out_path.with_extension("tmp");
    let result = (|| -> Result<(), BundleError> {
        let file = std::fs::File::create(&tmp)?;
        let mut writer = io::BufWriter::new(file);
        write_bundle(root, &mut writer)?;
        writer.flush()?;
        writer.get_ref().sync_data()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            std::fs::rename(&tmp, out_path)?;
            Ok(())
        }
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Parsed, integrity-checked view of a bundle: exactly the inputs the
/// auditor consumes.
#[derive(Debug)]
pub struct BundleView {
    pub manifest: DatasetManifest,
    /// Last-wins by hash, like the on-disk proof store.
    pub proofs: Vec<ProofRecord>,
    /// Address (64 hex chars) to chunk bytes.
    pub objects: BTreeMap<String, Vec<u8>>,
    pub readme: String,
}

/// Read and check a bundle: every object must hash to its address and
/// every chunk the manifest lists must be present.
pub fn read_bundle<R: Read>(reader: R) -> Result<BundleView, BundleError> {
    let mut archive = tar::Archive::new(reader);
    let mut manifest_bytes: Option<Vec<u8>> = None;
    let mut proofs_bytes: Option<Vec<u8>> = None;
    let mut readme: Option<String> = None;
    let mut objects: BTreeMap<String, Vec<u8>> = BTreeMap::new();

    for entry in archive.entries()? {
        let mut entry = entry?;
        let path = entry.path()?.into_owned();
        let name = path
            .to_str()
            .ok_or_else(|| BundleError::Malformed(format!("non-UTF-8 member {path:?}")))?
            .to_string();
        let mut data = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut data)?;
        match name.as_str() {
            MANIFEST_FILE => manifest_bytes = Some(data),
            PROOFS_FILE => proofs_bytes = Some(data),
            BUNDLE_README => {
                readme = Some(String::from_utf8(data).map_err(|_| {
                    BundleError::Malformed("README is not UTF-8".to_string())
                })?)
            }
            _ => match parse_object_member_name(&name) {
                Some(address) => {
                    let actual = crate::chunk::hash_chunk(&data)
                        .map_err(|_| {
                            BundleError::Malformed(format!("object member {name} is empty"))
                        })?
                        .to_hex();
                    if actual != address {
                        return Err(BundleError::AddressMismatch { address, actual });
                    }
                    objects.insert(address, data);
                }
                None => {
                    return Err(BundleError::Malformed(format!("unexpected member {name}")))
                }
            },
        }
    }

    let manifest_bytes = manifest_bytes.ok_or_else(|| BundleError::MissingMember {
        name: MANIFEST_FILE.to_string(),
    })?;
    let proofs_bytes = proofs_bytes.ok_or_else(|| BundleError::MissingMember {
        name: PROOFS_FILE.to_string(),
    })?;
    let readme = readme.ok_or_else(|| BundleError::MissingMember {
        name: BUNDLE_README.to_string(),
    })?;

    let manifest: DatasetManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| BundleError::Malformed(format!("manifest: {e}")))?;
    manifest.validate()?;
    for entry in &manifest.chunks {
        if !objects.contains_key(&entry.hash) {
            return Err(BundleError::MissingMember {
                name: object_member_name(&entry.hash),
            });
        }
    }

    let mut by_hash: BTreeMap<String, ProofRecord> = BTreeMap::new();
    for (i, line) in proofs_bytes.split(|b| *b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let record: ProofRecord = serde_json::from_slice(line)
            .map_err(|e| BundleError::Malformed(format!("proof line {}: {e}", i + 1)))?;
        record
            .validate()
            .map_err(|e| BundleError::Malformed(format!("proof line {}: {e}", i + 1)))?;
        by_hash.insert(record.hash.clone(), record);
    }

    Ok(BundleView {
        manifest,
        proofs: by_hash.into_values().collect(),
        objects,
        readme,
    })
}

/// Unpack a bundle into `out_dir` as a dataset directory the auditor
/// can open: `manifest.json`, `proofs.jsonl`, `objects/`. The same
/// integrity checks as [`read_bundle`] run first, so a damaged archive
/// never materializes.
pub fn extract_bundle<R: Read>(reader: R, out_dir: &Path) -> Result<(), BundleError> {
    let view = read_bundle(reader)?;
    std::fs::create_dir_all(out_dir)?;
    let paths = DatasetPaths::new(out_dir);
    std::fs::write(paths.manifest(), serialize_manifest(&view)?)?;
    let mut proofs_out = Vec::new();
    for record in &view.proofs {
        let line = crate::canonical::canonical_line(record)
            .map_err(|e| BundleError::Malformed(format!("proof record: {e}")))?;
        proofs_out.extend_from_slice(line.as_bytes());
        proofs_out.push(b'\n');
    }
    std::fs::write(paths.proofs(), proofs_out)?;
    let store = Store::open(&paths.objects())?;
    for bytes in view.objects.values() {
        store.put(bytes)?;
    }
    Ok(())
}

fn serialize_manifest(view: &BundleView) -> Result<Vec<u8>, BundleError> {
    let mut out = serde_json::to_vec_pretty(&view.manifest)
        .map_err(|e| BundleError::Malformed(format!("manifest: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

fn object_member_name(hex: &str) -> String {
    format!("objects/{}/{}", &hex[..2], &hex[2..])
}

fn parse_object_member_name(name: &str) -> Option<String> {
    let rest = name.strip_prefix("objects/")?;
    let (prefix, suffix) = rest.split_once('/')?;
    if prefix.len() != 2 || suffix.len() != 62 {
        return None;
    }
    let address = format!("{prefix}{suffix}");
    if !address.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
        return None;
    }
    Some(address)
}

fn append_member<W: Write>(
    builder: &mut tar::Builder<W>,
    name: &str,
    data: &[u8],
) -> Result<(), BundleError> {
    let mut header = tar::Header::new_ustar();
    header.set_entry_type(tar::EntryType::Regular);
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_uid(0);
    header.set_gid(0);
    header.set_mtime(0);
    builder.append_data(&mut header, name, data)?;
    Ok(())
}

fn readme_text(manifest: &DatasetManifest) -> String {
    format!(
        "Tamper-evident sensor dataset {dataset_id}\n\
         ==============================================================\n\
         \n\
         Contents\n\
         --------\n\
         manifest.json   dataset index: sensors, chunk list, creator key\n\
         proofs.jsonl    one timestamp proof per line (canonical JSON)\n\
         objects/        one file per chunk, named by the SHA-256 of its\n\
         \x20               bytes (two hex characters, slash, sixty-two)\n\
         \n\
         This archive contains {chunks} chunk(s) and is deterministic:\n\
         archiving the same dataset again yields byte-identical output,\n\
         so the archive itself can be hashed and cited.\n\
         \n\
         Independent verification, no special tooling\n\
         --------------------------------------------\n\
         1. Recompute the SHA-256 of every file under objects/ and\n\
         \x20  compare it with the file's two-level name.\n\
         2. Parse each chunk: an 82-byte header (magic \"TPC1\", version,\n\
         \x20  dataset id, sequence, previous hash, first/last timestamp,\n\
         \x20  record count, all big-endian) followed by 19-byte records.\n\
         3. Walk the chain: chunk 0 carries 32 zero bytes as its previous\n\
         \x20  hash; chunk k+1 carries the SHA-256 of chunk k's bytes.\n\
         4. Recompute the manifest hash: drop the \"manifest_hash\" field,\n\
         \x20  serialize the rest with sorted keys and no extra whitespace,\n\
         \x20  SHA-256 the result, compare with the recorded value.\n\
         5. Check each hash against its proof in proofs.jsonl: the tx_id\n\
         \x20  names the timestamping transaction that anchored it.\n\
         \n\
         With the pipeline installed: extract this archive into a\n\
         directory and run `tpsc verify <directory>`.\n",
        dataset_id = manifest.dataset_id,
        chunks = manifest.chunks.len(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn object_member_names_round_trip() {
        let hex = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
        let name = object_member_name(hex);
        assert_eq!(
            name,
            "objects/ba/7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(parse_object_member_name(&name).unwrap(), hex);
        assert!(parse_object_member_name("objects/ba/short").is_none());
        assert!(parse_object_member_name("other/ba/cafe").is_none());
        let upper = name.to_uppercase();
        assert!(parse_object_member_name(&upper).is_none());
    }
}

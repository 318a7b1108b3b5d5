//! Dataset directory layout. One directory = one dataset:
//!
//! ```text
//! <dataset>/
//!   manifest.json   chunk index, sensor and creator metadata
//!   proofs.jsonl    timestamp proof records, one JSON line each
//!   journal.log     crash-recovery journal
//!   objects/        content-addressed chunk store
//!   record.lock     held by a live `record` process
//! ```

use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROOFS_FILE: &str = "proofs.jsonl";
pub const JOURNAL_FILE: &str = "journal.log";
pub const OBJECTS_DIR: &str = "objects";
pub const LOCK_FILE: &str = "record.lock";

#[derive(Debug, Clone)]
pub struct DatasetPaths {
    root: PathBuf,
}

impl DatasetPaths {
    pub fn new(root: &Path) -> DatasetPaths {
        DatasetPaths {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn proofs(&self) -> PathBuf {
        self.root.join(PROOFS_FILE)
    }

    pub fn journal(&self) -> PathBuf {
        self.root.join(JOURNAL_FILE)
    }

    pub fn objects(&self) -> PathBuf {
        self.root.join(OBJECTS_DIR)
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join(LOCK_FILE)
    }
}

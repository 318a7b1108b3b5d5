//! Append-only crash-recovery journal.
//!
//! Every accepted sample is journaled before it enters the buffer, as a
//! line-protocol record. When a chunk's bytes have been durably stored,
//! a `SEAL <sequence> <hash-hex>` marker line follows. Replaying the
//! file therefore reconstructs both the chain position (last marker)
//! and the still-unsealed buffer (lines after it), so a killed recorder
//! resumes without losing samples, skipping sequence numbers, or
//! sealing anything twice.
//!
//! Durability policy: sample lines are synced at least every 64
//! appends; seal markers are synced immediately, before the manifest
//! may record the chunk. A torn final line (no trailing newline) is the
//! expected kill signature and is discarded on replay with a warning.
//! Anything unparseable before that is real corruption and recovery
//! refuses, naming the byte offset.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use thiserror::Error;

use crate::chunk::ChunkHash;
use crate::lineproto::{format_sample_line, parse_sample_line};
use crate::types::Sample;

/// Sample appends per sync_data call; seal markers always sync.
const SYNC_EVERY: usize = 64;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal io: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal corrupt at byte {offset} (line {line}): {reason}")]
    Corrupt {
        offset: u64,
        line: usize,
        reason: String,
    },
}

pub struct JournalWriter {
    file: File,
    path: PathBuf,
    unsynced: usize,
}

impl JournalWriter {
    /// Open for appending, creating the file if absent.
    pub fn open_append(path: &Path) -> Result<JournalWriter, JournalError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JournalWriter {
            file,
            path: path.to_path_buf(),
            unsynced: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Journal one accepted sample. The whole line goes down in a
    /// single write call so a kill can only tear the final line.
    pub fn append_sample(&mut self, s: &Sample) -> Result<(), JournalError> {
        let mut line = format_sample_line(s);
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.unsynced += 1;
        if self.unsynced >= SYNC_EVERY {
            self.sync()?;
        }
        Ok(())
    }

    /// Journal a seal marker and sync. Called after the chunk's bytes
    /// are durable in the store, never before.
    pub fn append_seal(&mut self, sequence: u64, hash: &ChunkHash) -> Result<(), JournalError> {
        let line = format!("SEAL {} {}\n", sequence, hash.to_hex());
        self.file.write_all(line.as_bytes())?;
        self.sync()
    }

    pub fn sync(&mut self) -> Result<(), JournalError> {
        self.file.sync_data()?;
        self.unsynced = 0;
        Ok(())
    }
}

/// What a journal replay found.
#[derive(Debug)]
pub struct JournalReplay {
    /// Sequence and hash of the last sealed chunk, if any.
    pub last_seal: Option<(u64, ChunkHash)>,
    /// Samples journaled after the last seal marker, in arrival order.
    pub buffered: Vec<Sample>,
    /// A torn final line was discarded.
    pub torn_tail: bool,
}

/// Replay a journal file. An absent file is an empty journal.
pub fn replay(path: &Path) -> Result<JournalReplay, JournalError> {
    let mut raw = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut raw)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e.into()),
    }

    let mut out = JournalReplay {
        last_seal: None,
        buffered: Vec::new(),
        torn_tail: false,
    };

    let mut offset: u64 = 0;
    let mut line_no = 0;
    let mut rest: &[u8] = &raw;
    while !rest.is_empty() {
        let (line_bytes, consumed, terminated) = match rest.iter().position(|&b| b == b'\n') {
            Some(at) => (&rest[..at], at + 1, true),
            None => (rest, rest.len(), false),
        };
        line_no += 1;
        if !terminated {
            // Kill signature: the final write was cut short. Drop it;
            // the sample (or seal ack) was never acknowledged anyway.
            warn!(
                "journal {}: discarding torn final line at byte {offset}",
                path.display()
            );
            out.torn_tail = true;
            break;
        }
        let line = std::str::from_utf8(line_bytes).map_err(|e| JournalError::Corrupt {
            offset,
            line: line_no,
            reason: format!("not utf-8: {e}"),
        })?;
        parse_journal_line(line, &mut out).map_err(|reason| JournalError::Corrupt {
            offset,
            line: line_no,
            reason,
        })?;
        offset += consumed as u64;
        rest = &rest[consumed..];
    }
    Ok(out)
}

fn parse_journal_line(line: &str, out: &mut JournalReplay) -> Result<(), String> {
    let trimmed = line.trim();
    if let Some(marker) = trimmed.strip_prefix("SEAL ") {
        let mut fields = marker.split_whitespace();
        let seq: u64 = fields
            .next()
            .ok_or("seal marker missing sequence")?
            .parse()
            .map_err(|e| format!("seal marker sequence: {e}"))?;
        let hash = fields
            .next()
            .ok_or("seal marker missing hash")
            .and_then(|h| ChunkHash::from_hex(h).map_err(|_| "seal marker hash malformed"))
            .map_err(|e| e.to_string())?;
        if fields.next().is_some() {
            return Err("seal marker has trailing fields".to_string());
        }
        if let Some((prev_seq, _)) = out.last_seal {
            if seq != prev_seq + 1 {
                return Err(format!(
                    "seal sequence {seq} does not follow {prev_seq}"
                ));
            }
        } else if seq != 0 && out.buffered.is_empty() {
            // A journal that begins mid-chain is fine (earlier segments
            // were compacted away), but only as the very first entry.
        }
        out.last_seal = Some((seq, hash));
        out.buffered.clear();
        return Ok(());
    }
    match parse_sample_line(line) {
        Ok(Some(s)) => {
            out.buffered.push(s);
            Ok(())
        }
        Ok(None) => Ok(()),
        Err(e) => Err(e.to_string()),
    }
}

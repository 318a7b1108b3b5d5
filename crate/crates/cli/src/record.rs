//! The `record` command: pump the configured sources through the
//! chunker until the duration elapses or the operator interrupts,
//! sealing, storing, and stamping along the way.
//!
//! Per sealed chunk the order is fixed: object store write, seal
//! acknowledgement in the journal, manifest update, then the stamping
//! worker gets the hash. A crash at any point is recovered on the next
//! start by replaying the journal; the manifest can lag the journal by
//! at most one chunk (the save happens right after the ack), and
//! [`reconcile_manifest`] closes exactly that gap.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, ValueEnum};

use tpsc_core::chunker::{Chunker, SealedChunk};
use tpsc_core::dataset::DatasetPaths;
use tpsc_core::ingest::{run_scheduler, IngestError, Pacing, SchedulerOptions, SourceMode};
use tpsc_core::manifest::{DatasetManifest, ManifestError};
use tpsc_core::stamper::{
    CreatorCredential, ProofStatus, ProofStore, Stamper, StamperClient, API_KEY_ENV,
};
use tpsc_core::store::{PinClient, Store};
use tpsc_core::{parse_chunk, ChunkHash, DatasetId, Sample};

use crate::config::Config;
use crate::{CliError, CmdResult, EXIT_OK};

/// creator_key_id placeholder for datasets recorded without a
/// timestamping credential.
pub const UNSTAMPED_KEY_ID: &str = "unstamped";

/// Timestamp anchor for logical-clock runs that include simulated
/// sources, so two runs of the same config produce the same samples.
const LOGICAL_EPOCH_US: u64 = 1_700_000_000_000_000;

#[derive(Args)]
pub struct RecordArgs {
    /// Recorder configuration (JSON)
    #[arg(long, short = 'c', value_name = "FILE")]
    pub config: PathBuf,
    /// Override one config value, e.g. --set chunker.time_window_s=60
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Stop after this much sampled time (seconds)
    #[arg(long, value_name = "SECONDS")]
    pub duration: Option<f64>,
    /// Record without contacting the timestamping service
    #[arg(long)]
    pub no_stamp: bool,
    /// auto picks logical when every source is a replay file
    #[arg(long, value_enum, default_value_t = ClockArg::Auto)]
    pub clock: ClockArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockArg {
    Auto,
    Logical,
    Realtime,
}

pub fn wall_now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

pub fn run(args: RecordArgs) -> CmdResult {
    let config = Config::load(&args.config, &args.overrides).map_err(usage_list)?;
    if config.sensors.is_empty() {
        return Err(CliError::usage("no sensors configured; nothing to record"));
    }
    if let Some(d) = args.duration {
        if !(d.is_finite() && d > 0.0) {
            return Err(CliError::usage(format!("--duration must be positive, got {d}")));
        }
    }

    let paths = DatasetPaths::new(&config.dataset.dir);
    fs::create_dir_all(paths.root())
        .map_err(|e| CliError::internal(format!("cannot create {}: {e}", paths.root().display())))?;
    let _lock = LockGuard::acquire(&paths.lock())?;

    let stamping = config.stamper.enabled && !args.no_stamp;
    let credential = if stamping { Some(resolve_credential()?) } else { None };

    let mut manifest = open_or_create_manifest(&config, &paths, credential.as_ref())?;
    merge_sensors(&mut manifest, &config);
    let dataset_id = DatasetId::from_hex(&manifest.dataset_id).expect("manifest validated on load");

    let store = Store::open(&paths.objects()).map_err(|e| CliError::internal(e.to_string()))?;
    let (mut chunker, replay) =
        Chunker::recover(dataset_id, &paths.journal(), config.chunker.policy())
            .map_err(|e| CliError::internal(format!("journal recovery: {e}")))?;
    if replay.torn_tail {
        log::warn!("journal had a torn final line (crash mid-write); it was discarded");
    }
    reconcile_manifest(&mut manifest, replay.last_seal.as_ref(), &store, &paths)?;
    manifest
        .save(&paths.manifest())
        .map_err(|e| CliError::internal(e.to_string()))?;

    let pin = config.store.pin_gateway.as_deref().map(PinClient::new);
    let worker = if stamping {
        Some(spawn_stamp_worker(&config, &paths, &manifest, credential.clone().unwrap())?)
    } else {
        None
    };

    let chunks_at_start = manifest.chunks.len();
    // a crash can interrupt a size-triggered seal before its marker;
    // finish that seal before taking new samples
    if let Some(sealed) = chunker
        .seal_if_oversize()
        .map_err(|e| CliError::internal(e.to_string()))?
    {
        handle_seal(
            sealed,
            &mut chunker,
            &store,
            pin.as_ref(),
            &mut manifest,
            &paths,
            worker.as_ref(),
        )?;
    }

    let pacing = resolve_pacing(args.clock, &config);
    let start_us = match pacing {
        Pacing::Realtime => wall_now_us(),
        Pacing::Logical => LOGICAL_EPOCH_US,
    };
    let opts = SchedulerOptions {
        pacing,
        start_us,
        duration_us: args.duration.map(|s| (s * 1e6) as u64),
    };
    let sources: Vec<_> = config.sensors.iter().map(|s| s.source()).collect();

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst))
            .map_err(|e| CliError::internal(format!("installing interrupt handler: {e}")))?;
    }

    log::info!(
        "recording dataset {} into {} ({:?} clock, {} sources)",
        manifest.dataset_id,
        paths.root().display(),
        pacing,
        sources.len()
    );

    let summary = run_scheduler(&sources, &opts, &stop, |sample: Sample| {
        let now = match pacing {
            Pacing::Logical => sample.timestamp_us,
            Pacing::Realtime => wall_now_us(),
        };
        let sealed = chunker
            .append(sample, now)
            .map_err(|e| io::Error::other(e.to_string()))?;
        if let Some(sealed) = sealed {
            handle_seal(
                sealed,
                &mut chunker,
                &store,
                pin.as_ref(),
                &mut manifest,
                &paths,
                worker.as_ref(),
            )
            .map_err(|e| io::Error::other(e.message().to_string()))?;
        }
        Ok(())
    })
    .map_err(|e| match e {
        IngestError::Sink(inner) => CliError::internal(inner.to_string()),
        other => CliError::usage(other.to_string()),
    })?;

    // shutdown: seal the remainder so nothing recorded is left loose
    if let Some(sealed) = chunker
        .seal_now()
        .map_err(|e| CliError::internal(e.to_string()))?
    {
        handle_seal(
            sealed,
            &mut chunker,
            &store,
            pin.as_ref(),
            &mut manifest,
            &paths,
            worker.as_ref(),
        )?;
    }
    chunker
        .compact_journal()
        .map_err(|e| CliError::internal(format!("journal compaction: {e}")))?;
    manifest
        .save(&paths.manifest())
        .map_err(|e| CliError::internal(e.to_string()))?;

    let stamp_stats = worker.map(StampWorker::finish);

    let total_records: u64 = manifest.chunks.iter().map(|c| c.record_count as u64).sum();
    println!("dataset  {}", manifest.dataset_id);
    println!(
        "chunks   {} total, {} sealed this run",
        manifest.chunks.len(),
        manifest.chunks.len() - chunks_at_start
    );
    println!(
        "records  {} in chunks; this run delivered {}, rejected {} at ingest, {} at chunking",
        total_records,
        summary.delivered,
        summary.rejected,
        chunker.rejected()
    );
    match &stamp_stats {
        Some(s) => println!(
            "proofs   {} confirmed, {} submitted, {} queued, {} failed",
            s.confirmed, s.submitted, s.queued, s.failed
        ),
        None => println!("proofs   stamping disabled for this run"),
    }
    if let Some(s) = &stamp_stats {
        if s.failed > 0 {
            eprintln!(
                "tpsc: {} proof submission(s) failed permanently; check the API key",
                s.failed
            );
        }
    }
    Ok(EXIT_OK)
}

fn usage_list(errors: Vec<String>) -> CliError {
    CliError::usage(errors.join("\n      "))
}

fn resolve_pacing(clock: ClockArg, config: &Config) -> Pacing {
    match clock {
        ClockArg::Realtime => Pacing::Realtime,
        ClockArg::Logical => Pacing::Logical,
        ClockArg::Auto => {
            let all_replay = config
                .sensors
                .iter()
                .all(|s| matches!(s.mode, SourceMode::Replay { .. }));
            if all_replay {
                Pacing::Logical
            } else {
                Pacing::Realtime
            }
        }
    }
}

fn open_or_create_manifest(
    config: &Config,
    paths: &DatasetPaths,
    credential: Option<&CreatorCredential>,
) -> Result<DatasetManifest, CliError> {
    match DatasetManifest::load(&paths.manifest()) {
        Ok(mut manifest) => {
            if manifest.finalized {
                return Err(CliError::usage(format!(
                    "dataset {} is finalized and takes no more data",
                    manifest.dataset_id
                )));
            }
            if let Some(pinned) = &config.dataset.id {
                if *pinned != manifest.dataset_id {
                    return Err(CliError::usage(format!(
                        "config pins dataset id {pinned} but {} holds dataset {}",
                        paths.root().display(),
                        manifest.dataset_id
                    )));
                }
            }
            if let Some(cred) = credential {
                if manifest.creator_key_id == UNSTAMPED_KEY_ID {
                    manifest.creator_key_id = cred.key_id().to_string();
                } else if manifest.creator_key_id != cred.key_id() {
                    log::warn!(
                        "dataset was created under key {}; recording continues under {}",
                        manifest.creator_key_id,
                        cred.key_id()
                    );
                }
            }
            Ok(manifest)
        }
        Err(ManifestError::Io { source, .. }) if source.kind() == io::ErrorKind::NotFound => {
            let dataset_id = match config
                .dataset_id()
                .map_err(|e| CliError::usage(e.to_string()))?
            {
                Some(id) => id,
                None => DatasetId::random(&mut rand::thread_rng()),
            };
            let key_id = credential
                .map(|c| c.key_id().to_string())
                .unwrap_or_else(|| UNSTAMPED_KEY_ID.to_string());
            let mut manifest = DatasetManifest::new(dataset_id, key_id, Vec::new());
            manifest.location = config.dataset.location.clone();
            manifest.experiment = config.dataset.experiment.clone();
            Ok(manifest)
        }
        Err(e) => Err(CliError::usage(format!("cannot open dataset manifest: {e}"))),
    }
}

/// Adopt config sensors the manifest does not list yet. Descriptors
/// that diverge from the recorded ones are a warning; the original
/// stays, since it describes the hardware that produced the early data.
fn merge_sensors(manifest: &mut DatasetManifest, config: &Config) {
    let mut changed = false;
    for entry in &config.sensors {
        let descriptor = entry.descriptor();
        match manifest
            .sensors
            .iter()
            .find(|s| s.sensor_id == descriptor.sensor_id)
        {
            None => {
                manifest.sensors.push(descriptor);
                changed = true;
            }
            Some(existing) if *existing != descriptor => {
                log::warn!(
                    "sensor {} differs from the descriptor recorded at creation; keeping the original",
                    descriptor.sensor_id
                );
            }
            Some(_) => {}
        }
    }
    if changed {
        manifest.sensors.sort_by_key(|s| s.sensor_id);
    }
}

/// Close the one-chunk gap a crash can leave between journal and
/// manifest. Anything wider means the journal or manifest was damaged
/// out of band, and that is refused rather than papered over.
pub fn reconcile_manifest(
    manifest: &mut DatasetManifest,
    last_seal: Option<&(u64, ChunkHash)>,
    store: &Store,
    paths: &DatasetPaths,
) -> Result<(), CliError> {
    let listed = manifest.chunks.len() as u64;
    let Some((seq, hash)) = last_seal else {
        if listed > 0 {
            return Err(CliError::internal(format!(
                "{} lists {listed} chunks but the journal holds no seal marker; \
                 the journal was lost or truncated, refusing to fork the chain",
                paths.manifest().display()
            )));
        }
        return Ok(());
    };

    if listed == seq + 1 {
        let recorded = &manifest.chunks[*seq as usize].hash;
        if *recorded != hash.to_hex() {
            return Err(CliError::internal(format!(
                "journal seal marker for sequence {seq} is {} but the manifest records {recorded}",
                hash.to_hex()
            )));
        }
        return Ok(());
    }
    if listed == *seq {
        // crash landed between ack_seal and the manifest save
        let bytes = store
            .get(hash)
            .map_err(|e| CliError::internal(format!("recovering chunk {seq}: {e}")))?;
        let chunk = parse_chunk(&bytes).map_err(|e| {
            CliError::internal(format!("recovering chunk {seq}: stored bytes do not parse: {e}"))
        })?;
        let sealed = SealedChunk { chunk, bytes, hash: *hash };
        manifest
            .push_chunk(&sealed)
            .map_err(|e| CliError::internal(format!("recovering chunk {seq}: {e}")))?;
        log::info!("manifest caught up with sealed chunk {seq} after an interrupted run");
        return Ok(());
    }
    Err(CliError::internal(format!(
        "manifest lists {listed} chunks but the journal's last seal is sequence {seq}; \
         manual inspection required"
    )))
}

/// Store, acknowledge, list, stamp: the full path for one sealed chunk.
#[allow(clippy::too_many_arguments)]
pub fn handle_seal(
    sealed: SealedChunk,
    chunker: &mut Chunker,
    store: &Store,
    pin: Option<&PinClient>,
    manifest: &mut DatasetManifest,
    paths: &DatasetPaths,
    worker: Option<&StampWorker>,
) -> Result<(), CliError> {
    let header = &sealed.chunk.header;
    store
        .put(&sealed.bytes)
        .map_err(|e| CliError::internal(format!("storing chunk {}: {e}", header.sequence)))?;
    // pinning is best-effort; the local store is the durability anchor
    let remote_id = pin.and_then(|client| match client.add(&sealed.hash, &sealed.bytes) {
        Ok(id) => Some(id),
        Err(e) => {
            log::warn!("pinning chunk {} failed: {e}", header.sequence);
            None
        }
    });
    chunker
        .ack_seal(&sealed)
        .map_err(|e| CliError::internal(format!("journaling seal {}: {e}", header.sequence)))?;
    manifest
        .push_chunk(&sealed)
        .map_err(|e| CliError::internal(e.to_string()))?;
    if let Some(id) = remote_id {
        manifest
            .set_remote_id(header.sequence, id)
            .map_err(|e| CliError::internal(e.to_string()))?;
    }
    manifest
        .save(&paths.manifest())
        .map_err(|e| CliError::internal(e.to_string()))?;
    log::info!(
        "sealed chunk {} ({} records, {})",
        header.sequence,
        header.record_count,
        &sealed.hash.to_hex()[..12]
    );
    if let Some(worker) = worker {
        worker.submit(sealed.hash);
    }
    Ok(())
}

fn spawn_stamp_worker(
    config: &Config,
    paths: &DatasetPaths,
    manifest: &DatasetManifest,
    credential: CreatorCredential,
) -> Result<StampWorker, CliError> {
    let client = StamperClient::new(&config.stamper.url, credential);
    let proofs =
        ProofStore::open(&paths.proofs()).map_err(|e| CliError::internal(e.to_string()))?;
    let stamper = Stamper::with_backoff(
        client,
        proofs,
        Duration::from_millis(config.stamper.backoff_base_ms),
        Duration::from_millis(config.stamper.backoff_cap_ms),
    );
    // chunks from earlier runs whose proofs never got under way
    let backlog: Vec<ChunkHash> = manifest
        .chunks
        .iter()
        .filter(|c| {
            !matches!(
                stamper.proofs().get(&c.hash).map(|r| r.status),
                Some(ProofStatus::Submitted | ProofStatus::Confirmed)
            )
        })
        .map(|c| ChunkHash::from_hex(&c.hash).expect("manifest validated on load"))
        .collect();
    if !backlog.is_empty() {
        log::info!("re-submitting {} chunk hash(es) from earlier runs", backlog.len());
    }
    let drain_budget = Duration::from_millis((config.stamper.backoff_base_ms * 10).clamp(1_000, 5_000));
    Ok(StampWorker::spawn(
        stamper,
        backlog,
        Duration::from_millis(config.stamper.poll_interval_ms.max(1)),
        drain_budget,
    ))
}

#[derive(Debug, Default, Clone, Copy)]
pub struct StampStats {
    pub confirmed: usize,
    pub submitted: usize,
    pub queued: usize,
    pub failed: usize,
}

/// Background submitter. Sealing never waits on the network: hashes
/// arrive over a channel, retries and confirmation polls run between
/// arrivals, and shutdown drains the queue within a bounded budget
/// (confirmations are finalize's job, not record's).
pub struct StampWorker {
    tx: Option<mpsc::Sender<ChunkHash>>,
    handle: Option<std::thread::JoinHandle<StampStats>>,
}

impl StampWorker {
    pub fn spawn(
        mut stamper: Stamper,
        backlog: Vec<ChunkHash>,
        poll_interval: Duration,
        drain_budget: Duration,
    ) -> StampWorker {
        let (tx, rx) = mpsc::channel();
        let handle = std::thread::Builder::new()
            .name("stamp-worker".to_string())
            .spawn(move || {
                for hash in &backlog {
                    submit_logged(&mut stamper, hash);
                }
                loop {
                    match rx.recv_timeout(poll_interval) {
                        Ok(hash) => submit_logged(&mut stamper, &hash),
                        Err(mpsc::RecvTimeoutError::Timeout) => run_passes(&mut stamper),
                        Err(mpsc::RecvTimeoutError::Disconnected) => break,
                    }
                }
                let deadline = Instant::now() + drain_budget;
                while has_queued(&stamper) && Instant::now() < deadline {
                    run_passes(&mut stamper);
                    std::thread::sleep(poll_interval.min(Duration::from_millis(25)));
                }
                if let Err(e) = stamper.poll_pass() {
                    log::error!("final proof poll: {e}");
                }
                if let Err(e) = stamper.proofs().compact() {
                    log::error!("compacting proof store: {e}");
                }
                stats_of(&stamper)
            })
            .expect("spawning a thread never fails here");
        StampWorker {
            tx: Some(tx),
            handle: Some(handle),
        }
    }

    pub fn submit(&self, hash: ChunkHash) {
        if let Some(tx) = &self.tx {
            // a dead worker only means proofs lag; recording continues
            let _ = tx.send(hash);
        }
    }

    pub fn finish(mut self) -> StampStats {
        drop(self.tx.take());
        match self.handle.take() {
            Some(handle) => handle.join().unwrap_or_else(|_| {
                log::error!("stamp worker panicked; proof store may need a retry run");
                StampStats::default()
            }),
            None => StampStats::default(),
        }
    }
}

fn submit_logged(stamper: &mut Stamper, hash: &ChunkHash) {
    match stamper.submit_hash(hash, wall_now_us()) {
        Ok(record) => {
            if record.status == ProofStatus::Failed {
                log::error!(
                    "stamp submission for {} failed: {}",
                    &record.hash[..12],
                    record.reason.as_deref().unwrap_or("unknown reason")
                );
            }
        }
        Err(e) => log::error!("stamp submission: {e}"),
    }
}

fn run_passes(stamper: &mut Stamper) {
    if let Err(e) = stamper.retry_pass(wall_now_us()) {
        log::error!("stamp retry pass: {e}");
    }
    if let Err(e) = stamper.poll_pass() {
        log::error!("proof poll pass: {e}");
    }
}

fn has_queued(stamper: &Stamper) -> bool {
    stamper
        .proofs()
        .iter()
        .any(|r| r.status == ProofStatus::Queued)
}

fn stats_of(stamper: &Stamper) -> StampStats {
    let mut stats = StampStats::default();
    for record in stamper.proofs().iter() {
        match record.status {
            ProofStatus::Confirmed => stats.confirmed += 1,
            ProofStatus::Submitted => stats.submitted += 1,
            ProofStatus::Queued => stats.queued += 1,
            ProofStatus::Failed => stats.failed += 1,
        }
    }
    stats
}

/// Single-writer guard for a dataset directory. The lock file carries
/// the holder's pid; a dead holder's lock is stale and reclaimed.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(path: &Path) -> Result<LockGuard, CliError> {
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(LockGuard {
                        path: path.to_path_buf(),
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(path)
                        .ok()
                        .and_then(|s| s.trim().parse::<i32>().ok());
                    match holder {
                        Some(pid) if pid_alive(pid) => {
                            return Err(CliError::usage(format!(
                                "dataset is in use by process {pid} (lock {})",
                                path.display()
                            )));
                        }
                        _ => {
                            log::warn!("removing stale lock {}", path.display());
                            let _ = fs::remove_file(path);
                        }
                    }
                }
                Err(e) => {
                    return Err(CliError::internal(format!(
                        "cannot create lock {}: {e}",
                        path.display()
                    )));
                }
            }
        }
        Err(CliError::internal(format!(
            "lock {} is contested; try again",
            path.display()
        )))
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn pid_alive(pid: i32) -> bool {
    if pid <= 0 {
        return false;
    }
    // signal 0 probes without signalling; EPERM still proves liveness
    let rc = unsafe { libc::kill(pid, 0) };
    rc == 0 || io::Error::last_os_error().raw_os_error() == Some(libc::EPERM)
}

pub fn resolve_credential() -> Result<CreatorCredential, CliError> {
    if let Some(cred) = CreatorCredential::from_env() {
        return Ok(cred);
    }
    if unsafe { libc::isatty(libc::STDIN_FILENO) } != 1 {
        return Err(CliError::usage(format!(
            "{API_KEY_ENV} is not set and stdin is not a terminal; \
             export {API_KEY_ENV}, or pass --no-stamp to record without proofs"
        )));
    }
    let key = prompt_secret("API key: ")?;
    if key.is_empty() {
        return Err(CliError::usage("empty API key"));
    }
    Ok(CreatorCredential::new(key))
}

/// Read one line from the terminal with echo off; the key must never
/// appear on screen, in history, or in any file.
fn prompt_secret(prompt: &str) -> Result<String, CliError> {
    eprint!("{prompt}");
    let _ = io::stderr().flush();

    let fd = libc::STDIN_FILENO;
    let mut termios = unsafe { std::mem::zeroed::<libc::termios>() };
    let have_termios = unsafe { libc::tcgetattr(fd, &mut termios) } == 0;
    let saved = termios;
    if have_termios {
        termios.c_lflag &= !libc::ECHO;
        unsafe { libc::tcsetattr(fd, libc::TCSANOW, &termios) };
    }
    let mut line = String::new();
    let read = io::stdin().read_line(&mut line);
    if have_termios {
        unsafe { libc::tcsetattr(fd, libc::TCSANOW, &saved) };
        eprintln!();
    }
    read.map_err(|e| CliError::internal(format!("reading API key: {e}")))?;
    Ok(line.trim_end_matches(['\r', '\n']).to_string())
}

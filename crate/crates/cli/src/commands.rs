//! Everything except `record`: audit, finalize, bundle in and out,
//! inspection, quality checks, aggregation, simulation, and the mock
//! timestamping service.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, ValueEnum};
use serde::Serialize;

use tpsc_core::bundle::{extract_bundle, write_bundle_file, BundleError};
use tpsc_core::chunker::Chunker;
use tpsc_core::dataset::{DatasetPaths, MANIFEST_FILE};
use tpsc_core::manifest::{DatasetManifest, ManifestError};
use tpsc_core::mockstamp::MockStamper;
use tpsc_core::stamper::{ProofStatus, ProofStore, Stamper, StamperClient};
use tpsc_core::store::{PinClient, Store, StoreError};
use tpsc_core::trustcheck::{
    aggregate_sources, check_series, simulate_network, CheckError, CheckRules, QualityReport,
    SourceSeries,
};
use tpsc_core::verify::{verify_dir, VerifyOpenError};
use tpsc_core::{hash_chunk, parse_chunk, ChunkHash, DatasetId, Sample, SensorKind};

use crate::config::Config;
use crate::record::{self, LockGuard};
use crate::{CliError, CmdResult, EXIT_OK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

fn internal<E: std::fmt::Display>(e: E) -> CliError {
    CliError::internal(e.to_string())
}

fn usage_list(errors: Vec<String>) -> CliError {
    CliError::usage(errors.join("\n      "))
}

fn load_manifest(dir: &Path) -> Result<DatasetManifest, CliError> {
    match DatasetManifest::load(&DatasetPaths::new(dir).manifest()) {
        Ok(m) => Ok(m),
        Err(ManifestError::Io { source, .. }) if source.kind() == io::ErrorKind::NotFound => {
            Err(CliError::usage(format!(
                "no dataset at {} (manifest.json not found)",
                dir.display()
            )))
        }
        Err(e) => Err(CliError::usage(format!("cannot open dataset manifest: {e}"))),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(internal)?;
    println!("{text}");
    Ok(())
}

fn format_ts(us: u64) -> String {
    format!("{}.{:06}", us / 1_000_000, us % 1_000_000)
}

// ---------------------------------------------------------------- verify

#[derive(Args)]
pub struct VerifyArgs {
    /// Dataset directory
    pub dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

pub fn verify(args: VerifyArgs) -> CmdResult {
    match verify_dir(&args.dir) {
        Ok(report) => {
            match args.format {
                Format::Text => print!("{}", report.to_text()),
                Format::Json => print_json(&report)?,
            }
            Ok(i32::from(report.verdict.exit_code()))
        }
        Err(VerifyOpenError::NoManifest(p)) => Err(CliError::usage(format!(
            "no dataset at {} (manifest.json not found)",
            p.display()
        ))),
        Err(e) => Err(internal(e)),
    }
}

// -------------------------------------------------------------- finalize

#[derive(Args)]
pub struct FinalizeArgs {
    /// Recorder configuration (JSON)
    #[arg(long, short = 'c', value_name = "FILE")]
    pub config: PathBuf,
    /// Override one config value, e.g. --set stamper.url=http://...
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Finalize without stamping or waiting for confirmations
    #[arg(long)]
    pub no_stamp: bool,
    /// How long to wait for proof confirmations (seconds)
    #[arg(long, default_value_t = 30.0, value_name = "SECONDS")]
    pub wait: f64,
}

pub fn finalize(args: FinalizeArgs) -> CmdResult {
    let config = Config::load(&args.config, &args.overrides).map_err(usage_list)?;
    let paths = DatasetPaths::new(&config.dataset.dir);
    let _lock = LockGuard::acquire(&paths.lock())?;

    let mut manifest = load_manifest(paths.root())?;
    let store = Store::open(&paths.objects()).map_err(internal)?;

    if manifest.finalized {
        log::info!(
            "dataset {} is already finalized; checking proofs only",
            manifest.dataset_id
        );
    } else {
        let dataset_id =
            DatasetId::from_hex(&manifest.dataset_id).expect("manifest validated on load");
        let (mut chunker, replay) =
            Chunker::recover(dataset_id, &paths.journal(), config.chunker.policy())
                .map_err(|e| CliError::internal(format!("journal recovery: {e}")))?;
        record::reconcile_manifest(&mut manifest, replay.last_seal.as_ref(), &store, &paths)?;
        let pin = config.store.pin_gateway.as_deref().map(PinClient::new);
        // an interrupted size seal first, then whatever is left
        if let Some(sealed) = chunker.seal_if_oversize().map_err(internal)? {
            record::handle_seal(sealed, &mut chunker, &store, pin.as_ref(), &mut manifest, &paths, None)?;
        }
        if let Some(sealed) = chunker.seal_now().map_err(internal)? {
            record::handle_seal(sealed, &mut chunker, &store, pin.as_ref(), &mut manifest, &paths, None)?;
        }
        chunker.compact_journal().map_err(internal)?;

        let hash = manifest.finalize().map_err(internal)?;
        manifest.save(&paths.manifest()).map_err(internal)?;
        println!("manifest hash {}", hash.to_hex());
    }

    if args.no_stamp || !config.stamper.enabled {
        println!(
            "finalized dataset {} ({} chunks); stamping skipped",
            manifest.dataset_id,
            manifest.chunks.len()
        );
        return Ok(EXIT_OK);
    }

    // every chunk hash plus the manifest hash must reach confirmed
    let credential = record::resolve_credential()?;
    let client = StamperClient::new(&config.stamper.url, credential);
    let proofs = ProofStore::open(&paths.proofs()).map_err(internal)?;
    let mut stamper = Stamper::with_backoff(
        client,
        proofs,
        Duration::from_millis(config.stamper.backoff_base_ms),
        Duration::from_millis(config.stamper.backoff_cap_ms),
    );

    let mut targets: Vec<String> = manifest.chunks.iter().map(|c| c.hash.clone()).collect();
    targets.push(
        manifest
            .manifest_hash
            .clone()
            .expect("a finalized manifest carries its hash"),
    );

    for hex in &targets {
        let status = stamper.proofs().get(hex).map(|r| r.status);
        if !matches!(status, Some(ProofStatus::Submitted | ProofStatus::Confirmed)) {
            let hash = ChunkHash::from_hex(hex).expect("manifest validated on load");
            if let Err(e) = stamper.submit_hash(&hash, record::wall_now_us()) {
                log::error!("stamp submission: {e}");
            }
        }
    }

    let deadline = Instant::now() + Duration::from_secs_f64(args.wait.max(0.0));
    let poll = Duration::from_millis(config.stamper.poll_interval_ms.clamp(50, 2_000));
    loop {
        let mut open = 0usize;
        let mut failed = 0usize;
        for hex in &targets {
            match stamper.proofs().get(hex).map(|r| r.status) {
                Some(ProofStatus::Confirmed) => {}
                Some(ProofStatus::Failed) => failed += 1,
                _ => open += 1,
            }
        }
        if failed > 0 {
            let _ = stamper.proofs().compact();
            eprintln!(
                "tpsc: {failed} proof submission(s) were rejected by the service; check the API key"
            );
            return Ok(1);
        }
        if open == 0 {
            break;
        }
        if Instant::now() >= deadline {
            let _ = stamper.proofs().compact();
            eprintln!(
                "tpsc: finalized, but {open} of {} proof(s) are not confirmed yet; \
                 run `tpsc finalize` again later",
                targets.len()
            );
            return Ok(1);
        }
        if let Err(e) = stamper.retry_pass(record::wall_now_us()) {
            log::error!("stamp retry pass: {e}");
        }
        if let Err(e) = stamper.poll_pass() {
            log::error!("proof poll pass: {e}");
        }
        std::thread::sleep(poll);
    }
    stamper.proofs().compact().map_err(internal)?;

    println!(
        "finalized dataset {}; {} proofs confirmed ({} chunks + manifest)",
        manifest.dataset_id,
        targets.len(),
        manifest.chunks.len()
    );
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------- export

#[derive(Args)]
pub struct ExportArgs {
    /// Dataset directory (must be finalized)
    pub dir: PathBuf,
    /// Output bundle file (a tar archive)
    pub out: PathBuf,
}

pub fn export(args: ExportArgs) -> CmdResult {
    match write_bundle_file(&args.dir, &args.out) {
        Ok(()) => {}
        Err(BundleError::Unfinalized) => {
            return Err(CliError::usage(
                "dataset is not finalized; run `tpsc finalize` first",
            ))
        }
        Err(BundleError::Manifest(ManifestError::Io { source, .. }))
            if source.kind() == io::ErrorKind::NotFound =>
        {
            return Err(CliError::usage(format!(
                "no dataset at {} (manifest.json not found)",
                args.dir.display()
            )))
        }
        Err(e) => {
            return Err(CliError::internal(format!(
                "{e}; run `tpsc verify {}` to diagnose",
                args.dir.display()
            )))
        }
    }
    let bytes = fs::read(&args.out)
        .map_err(|e| CliError::internal(format!("re-reading {}: {e}", args.out.display())))?;
    let digest = hash_chunk(&bytes).map_err(internal)?;
    println!("bundle  {}", args.out.display());
    println!("size    {} bytes", bytes.len());
    println!("sha256  {}", digest.to_hex());
    Ok(EXIT_OK)
}

// --------------------------------------------------------------- extract

#[derive(Args)]
pub struct ExtractArgs {
    /// Bundle file produced by `tpsc export`
    pub bundle: PathBuf,
    /// Directory to materialize the dataset into
    pub out: PathBuf,
}

pub fn extract(args: ExtractArgs) -> CmdResult {
    let file = match fs::File::open(&args.bundle) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(CliError::usage(format!("no bundle at {}", args.bundle.display())))
        }
        Err(e) => return Err(internal(e)),
    };
    if args.out.join(MANIFEST_FILE).exists() {
        return Err(CliError::usage(format!(
            "{} already holds a dataset; refusing to overwrite",
            args.out.display()
        )));
    }
    match extract_bundle(io::BufReader::new(file), &args.out) {
        Ok(()) => {
            let manifest = load_manifest(&args.out)?;
            println!(
                "extracted dataset {} ({} chunks) to {}",
                manifest.dataset_id,
                manifest.chunks.len(),
                args.out.display()
            );
            println!("audit it with: tpsc verify {}", args.out.display());
            Ok(EXIT_OK)
        }
        Err(BundleError::MissingMember { name }) => {
            eprintln!("tpsc: bundle is incomplete: {name} is missing");
            Ok(2)
        }
        Err(
            e @ (BundleError::AddressMismatch { .. }
            | BundleError::Malformed(_)
            | BundleError::Unfinalized
            | BundleError::Manifest(_)),
        ) => {
            eprintln!("tpsc: bundle failed verification: {e}");
            Ok(3)
        }
        Err(e) => Err(internal(e)),
    }
}

// --------------------------------------------------------------- inspect

#[derive(Args)]
pub struct InspectArgs {
    /// Dataset directory
    pub dir: PathBuf,
    /// Show one chunk in detail instead of the dataset summary
    #[arg(long)]
    pub sequence: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Serialize)]
struct ChunkRow<'a> {
    sequence: u64,
    hash: &'a str,
    records: u32,
    first_ts_us: u64,
    last_ts_us: u64,
    proof: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    remote_id: Option<&'a str>,
}

#[derive(Serialize)]
struct InspectSummary<'a> {
    dataset_id: &'a str,
    creator_key_id: &'a str,
    location: &'a str,
    experiment: &'a str,
    finalized: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest_hash: Option<&'a str>,
    sensors: &'a [tpsc_core::SensorDescriptor],
    chunk_count: usize,
    record_count: u64,
    proof_counts: BTreeMap<String, usize>,
    chunks: Vec<ChunkRow<'a>>,
}

#[derive(Serialize)]
struct ChunkDetail {
    sequence: u64,
    hash: String,
    prev_hash: String,
    dataset_id: String,
    first_ts_us: u64,
    last_ts_us: u64,
    record_count: u32,
    size_bytes: usize,
    records_per_sensor: BTreeMap<u16, u32>,
}

pub fn inspect(args: InspectArgs) -> CmdResult {
    let manifest = load_manifest(&args.dir)?;
    let paths = DatasetPaths::new(&args.dir);
    let proofs = ProofStore::open(&paths.proofs()).map_err(internal)?;

    if let Some(sequence) = args.sequence {
        return inspect_chunk(&manifest, &paths, sequence, args.format);
    }

    let proof_status = |hash: &str| -> String {
        proofs
            .get(hash)
            .map(|r| format!("{:?}", r.status).to_lowercase())
            .unwrap_or_else(|| "missing".to_string())
    };
    let mut proof_counts: BTreeMap<String, usize> = BTreeMap::new();
    for record in proofs.iter() {
        *proof_counts
            .entry(format!("{:?}", record.status).to_lowercase())
            .or_default() += 1;
    }
    let summary = InspectSummary {
        dataset_id: &manifest.dataset_id,
        creator_key_id: &manifest.creator_key_id,
        location: &manifest.location,
        experiment: &manifest.experiment,
        finalized: manifest.finalized,
        manifest_hash: manifest.manifest_hash.as_deref(),
        sensors: &manifest.sensors,
        chunk_count: manifest.chunks.len(),
        record_count: manifest.chunks.iter().map(|c| c.record_count as u64).sum(),
        proof_counts,
        chunks: manifest
            .chunks
            .iter()
            .map(|c| ChunkRow {
                sequence: c.sequence,
                hash: &c.hash,
                records: c.record_count,
                first_ts_us: c.first_ts_us,
                last_ts_us: c.last_ts_us,
                proof: proof_status(&c.hash),
                remote_id: c.remote_id.as_deref(),
            })
            .collect(),
    };

    match args.format {
        Format::Json => print_json(&summary)?,
        Format::Text => {
            println!("dataset     {}", summary.dataset_id);
            println!("creator     {}", summary.creator_key_id);
            if !summary.location.is_empty() {
                println!("location    {}", summary.location);
            }
            if !summary.experiment.is_empty() {
                println!("experiment  {}", summary.experiment);
            }
            println!(
                "finalized   {}{}",
                summary.finalized,
                summary
                    .manifest_hash
                    .map(|h| format!(" (manifest hash {h})"))
                    .unwrap_or_default()
            );
            println!("sensors     {}", summary.sensors.len());
            for s in summary.sensors {
                println!(
                    "  {:>5}  {:<12} {:<8} {:<10} every {}",
                    s.sensor_id,
                    s.kind.as_str(),
                    s.unit,
                    s.model,
                    format_ts(s.nominal_interval_us)
                );
            }
            println!(
                "chunks      {} holding {} records",
                summary.chunk_count, summary.record_count
            );
            for c in &summary.chunks {
                println!(
                    "  {:>5}  {}  {:>7} records  {} .. {}  proof {}{}",
                    c.sequence,
                    &c.hash[..12],
                    c.records,
                    format_ts(c.first_ts_us),
                    format_ts(c.last_ts_us),
                    c.proof,
                    c.remote_id.map(|r| format!("  pinned {r}")).unwrap_or_default()
                );
            }
            if summary.proof_counts.is_empty() {
                println!("proofs      none recorded");
            } else {
                let rendered: Vec<String> = summary
                    .proof_counts
                    .iter()
                    .map(|(k, v)| format!("{v} {k}"))
                    .collect();
                println!("proofs      {}", rendered.join(", "));
            }
        }
    }
    Ok(EXIT_OK)
}

fn inspect_chunk(
    manifest: &DatasetManifest,
    paths: &DatasetPaths,
    sequence: u64,
    format: Format,
) -> CmdResult {
    let Some(entry) = manifest.chunks.iter().find(|c| c.sequence == sequence) else {
        return Err(CliError::usage(format!(
            "no chunk with sequence {sequence} (dataset has {})",
            manifest.chunks.len()
        )));
    };
    let store = Store::open(&paths.objects()).map_err(internal)?;
    let address = ChunkHash::from_hex(&entry.hash).expect("manifest validated on load");
    let bytes = match store.get(&address) {
        Ok(b) => b,
        Err(StoreError::NotFound { address }) => {
            eprintln!("tpsc: chunk {sequence} ({address}) is missing from the store");
            return Ok(2);
        }
        Err(StoreError::Corrupt { address, .. }) => {
            eprintln!("tpsc: chunk {sequence} ({address}) is corrupt on disk");
            return Ok(3);
        }
        Err(e) => return Err(internal(e)),
    };
    let chunk = match parse_chunk(&bytes) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("tpsc: chunk {sequence} does not parse: {e}");
            return Ok(3);
        }
    };
    let mut records_per_sensor: BTreeMap<u16, u32> = BTreeMap::new();
    for r in &chunk.records {
        *records_per_sensor.entry(r.sensor_id).or_default() += 1;
    }
    let detail = ChunkDetail {
        sequence,
        hash: entry.hash.clone(),
        prev_hash: hex::encode(chunk.header.prev_hash),
        dataset_id: chunk.header.dataset_id.to_hex(),
        first_ts_us: chunk.header.first_ts_us,
        last_ts_us: chunk.header.last_ts_us,
        record_count: chunk.header.record_count,
        size_bytes: bytes.len(),
        records_per_sensor,
    };
    match format {
        Format::Json => print_json(&detail)?,
        Format::Text => {
            println!("chunk       {}", detail.sequence);
            println!("hash        {}", detail.hash);
            println!("prev hash   {}", detail.prev_hash);
            println!("dataset     {}", detail.dataset_id);
            println!(
                "spans       {} .. {}",
                format_ts(detail.first_ts_us),
                format_ts(detail.last_ts_us)
            );
            println!("records     {} in {} bytes", detail.record_count, detail.size_bytes);
            for (id, n) in &detail.records_per_sensor {
                println!("  sensor {id:>5}  {n} records");
            }
        }
    }
    Ok(EXIT_OK)
}

// ----------------------------------------------------------------- check

#[derive(Args)]
pub struct CheckArgs {
    /// Dataset directory
    pub dir: PathBuf,
    /// Recorder config supplying per-kind check rules (stock rules otherwise)
    #[arg(long, short = 'c', value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Serialize)]
struct CheckOutput {
    sensors: Vec<QualityReport>,
    /// Sensor ids found in chunks but not declared in the manifest.
    undeclared_sensor_ids: Vec<u16>,
}

pub fn check(args: CheckArgs) -> CmdResult {
    let config = match &args.config {
        Some(path) => Some(Config::load(path, &args.overrides).map_err(usage_list)?),
        None => {
            if !args.overrides.is_empty() {
                return Err(CliError::usage("--set requires --config"));
            }
            None
        }
    };
    let manifest = load_manifest(&args.dir)?;
    let store = Store::open(&DatasetPaths::new(&args.dir).objects()).map_err(internal)?;
    let mut per_sensor = match collect_samples(&manifest, &store) {
        Ok(map) => map,
        Err(exit) => return exit,
    };

    let mut reports = Vec::new();
    for descriptor in &manifest.sensors {
        let samples = per_sensor.remove(&descriptor.sensor_id).unwrap_or_default();
        let rules = match &config {
            Some(c) => c.rules_for(descriptor.kind),
            None => CheckRules::for_kind(descriptor.kind),
        };
        let report = check_series(&samples, descriptor, &rules).map_err(internal)?;
        reports.push((samples.len(), report));
    }
    let undeclared: Vec<u16> = per_sensor.keys().copied().collect();

    match args.format {
        Format::Json => print_json(&CheckOutput {
            sensors: reports.iter().map(|(_, r)| r.clone()).collect(),
            undeclared_sensor_ids: undeclared.clone(),
        })?,
        Format::Text => {
            let by_id: BTreeMap<u16, &tpsc_core::SensorDescriptor> =
                manifest.sensors.iter().map(|s| (s.sensor_id, s)).collect();
            for (n_samples, report) in &reports {
                let d = by_id[&report.series_id];
                println!(
                    "sensor {} ({}, {}, {})",
                    report.series_id,
                    d.kind.as_str(),
                    d.unit,
                    d.model
                );
                println!("  samples           {n_samples}");
                println!(
                    "  sampling gaps     {}{}",
                    report.sampling_gaps.count,
                    if report.sampling_gaps.count > 0 {
                        format!(" (worst {})", format_ts(report.sampling_gaps.worst_us))
                    } else {
                        String::new()
                    }
                );
                println!("  range violations  {}", report.range_violations);
                println!("  rate violations   {}", report.rate_of_change_violations);
                println!(
                    "  metadata          {}",
                    if report.metadata_complete { "complete" } else { "INCOMPLETE" }
                );
                match &report.error_estimate {
                    Some(e) => println!(
                        "  error estimate    mean {:+.4}, sd {:.4} (n {})",
                        e.mean, e.sd, e.n
                    ),
                    None => println!("  error estimate    (no reference configured)"),
                }
            }
            if !undeclared.is_empty() {
                println!(
                    "note: chunks carry undeclared sensor id(s) {:?}; the manifest should list them",
                    undeclared
                );
            }
        }
    }
    Ok(EXIT_OK)
}

/// Rebuild per-sensor series from the stored chunks, in chain order.
/// Integrity trouble is reported the way `verify` would: exit 2 when
/// objects are missing, 3 when content does not match its address.
fn collect_samples(
    manifest: &DatasetManifest,
    store: &Store,
) -> Result<BTreeMap<u16, Vec<Sample>>, CmdResult> {
    let mut per_sensor: BTreeMap<u16, Vec<Sample>> = BTreeMap::new();
    for entry in &manifest.chunks {
        let address = ChunkHash::from_hex(&entry.hash).expect("manifest validated on load");
        let bytes = match store.get(&address) {
            Ok(b) => b,
            Err(StoreError::NotFound { address }) => {
                eprintln!(
                    "tpsc: chunk {} ({address}) is missing from the store; run `tpsc verify`",
                    entry.sequence
                );
                return Err(Ok(2));
            }
            Err(StoreError::Corrupt { address, .. }) => {
                eprintln!(
                    "tpsc: chunk {} ({address}) is corrupt on disk; run `tpsc verify`",
                    entry.sequence
                );
                return Err(Ok(3));
            }
            Err(e) => return Err(Err(internal(e))),
        };
        match parse_chunk(&bytes) {
            Ok(chunk) => {
                for record in chunk.records {
                    per_sensor.entry(record.sensor_id).or_default().push(record);
                }
            }
            Err(e) => {
                eprintln!("tpsc: chunk {} does not parse: {e}; run `tpsc verify`", entry.sequence);
                return Err(Ok(3));
            }
        }
    }
    Ok(per_sensor)
}

// ------------------------------------------------------------- aggregate

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Temperature,
    Current,
    Vibration,
    Other,
}

impl From<KindArg> for SensorKind {
    fn from(k: KindArg) -> SensorKind {
        match k {
            KindArg::Temperature => SensorKind::Temperature,
            KindArg::Current => SensorKind::Current,
            KindArg::Vibration => SensorKind::Vibration,
            KindArg::Other => SensorKind::Other,
        }
    }
}

#[derive(Args)]
pub struct AggregateArgs {
    /// Dataset directory
    pub dir: PathBuf,
    /// Sensor kind to aggregate (required when the dataset mixes kinds)
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Grid spacing in microseconds (default: the slowest participating
    /// sensor's nominal interval)
    #[arg(long, value_name = "MICROS")]
    pub grid_us: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

pub fn aggregate(args: AggregateArgs) -> CmdResult {
    let manifest = load_manifest(&args.dir)?;
    let mut kinds: Vec<SensorKind> = manifest.sensors.iter().map(|s| s.kind).collect();
    kinds.sort();
    kinds.dedup();
    let kind = match (args.kind.map(SensorKind::from), kinds.as_slice()) {
        (Some(k), _) => k,
        (None, [only]) => *only,
        (None, []) => return Err(CliError::usage("dataset declares no sensors")),
        (None, many) => {
            let names: Vec<&str> = many.iter().map(|k| k.as_str()).collect();
            return Err(CliError::usage(format!(
                "dataset mixes sensor kinds ({}); pick one with --kind",
                names.join(", ")
            )));
        }
    };

    let participants: Vec<u16> = manifest
        .sensors
        .iter()
        .filter(|s| s.kind == kind)
        .map(|s| s.sensor_id)
        .collect();
    if participants.is_empty() {
        return Err(CliError::usage(format!(
            "no sensors of kind {} in this dataset",
            kind.as_str()
        )));
    }
    let grid_us = args.grid_us.unwrap_or_else(|| {
        manifest
            .sensors
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.nominal_interval_us)
            .max()
            .unwrap_or(1)
    });

    let store = Store::open(&DatasetPaths::new(&args.dir).objects()).map_err(internal)?;
    let mut per_sensor = match collect_samples(&manifest, &store) {
        Ok(map) => map,
        Err(exit) => return exit,
    };
    let series: Vec<SourceSeries> = participants
        .iter()
        .map(|id| SourceSeries {
            source_id: *id,
            samples: per_sensor.remove(id).unwrap_or_default(),
        })
        .collect();

    let result = match aggregate_sources(&series, grid_us) {
        Ok(r) => r,
        Err(CheckError::NoSeries | CheckError::EmptyGrid) => {
            return Err(CliError::usage("no samples to aggregate"))
        }
        Err(CheckError::BadParameter(m)) => return Err(CliError::usage(m)),
        Err(e) => return Err(internal(e)),
    };

    match args.format {
        Format::Json => print_json(&result)?,
        Format::Text => {
            println!(
                "{} sources, grid {} over {} points",
                series.len(),
                format_ts(result.grid_interval_us),
                result.points.len()
            );
            for p in &result.points {
                println!(
                    "{}  median {:>12.6}  mad {:>10.6}  n {:>3}{}",
                    format_ts(p.timestamp_us),
                    p.median,
                    p.mad,
                    p.n_sources,
                    if p.outlier_source_ids.is_empty() {
                        String::new()
                    } else {
                        format!("  outliers {:?}", p.outlier_source_ids)
                    }
                );
            }
        }
    }
    Ok(EXIT_OK)
}

// -------------------------------------------------------------- simulate

#[derive(Args)]
pub struct SimulateArgs {
    /// Number of independent sources
    #[arg(long, default_value_t = 101)]
    pub sources: u32,
    /// Fraction of sources reporting a constant bias
    #[arg(long, default_value_t = 0.2)]
    pub corrupt_fraction: f64,
    /// Honest sources' noise standard deviation
    #[arg(long, default_value_t = 0.5)]
    pub noise_sd: f64,
    /// Constant offset the corrupt sources add
    #[arg(long, default_value_t = 10.0)]
    pub bias: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

pub fn simulate(args: SimulateArgs) -> CmdResult {
    let outcome = match simulate_network(
        args.sources,
        args.corrupt_fraction,
        args.noise_sd,
        args.bias,
        args.seed,
    ) {
        Ok(o) => o,
        Err(CheckError::BadParameter(m)) => return Err(CliError::usage(m)),
        Err(e) => return Err(internal(e)),
    };
    match args.format {
        Format::Json => print_json(&outcome)?,
        Format::Text => {
            println!(
                "sources       {} ({} corrupt, bias {:+})",
                outcome.n_sources, outcome.n_corrupt, args.bias
            );
            println!("grid points   {}", outcome.grid_points);
            println!(
                "median |err|  {:.4} (worst {:.4})",
                outcome.median_abs_err, outcome.worst_median_abs_err
            );
            println!(
                "mean   |err|  {:.4} (worst {:.4})",
                outcome.mean_abs_err, outcome.worst_mean_abs_err
            );
        }
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------- mock-stamper

#[derive(Args)]
pub struct MockStamperArgs {
    /// Port to listen on (0 picks a free one)
    #[arg(long, default_value_t = 0)]
    pub port: u16,
    /// Delay before a submitted hash confirms (milliseconds)
    #[arg(long, default_value_t = 2_000)]
    pub confirm_delay_ms: u64,
}

pub fn mock_stamper(args: MockStamperArgs) -> CmdResult {
    let mock = MockStamper::start(args.port, Duration::from_millis(args.confirm_delay_ms))
        .map_err(|e| CliError::internal(format!("cannot bind port {}: {e}", args.port)))?;
    println!("mock timestamping service at {}", mock.url());
    println!("submit: POST {}/api/stamp   body {{\"hash\":\"<64 hex>\"}}", mock.url());
    println!("proof:  GET  {}/api/proof/<hash>", mock.url());
    let _ = io::stdout().flush();

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst))
            .map_err(|e| CliError::internal(format!("installing interrupt handler: {e}")))?;
    }
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(100));
    }
    mock.stop();
    Ok(EXIT_OK)
}

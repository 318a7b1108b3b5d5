//! Sample sources and the scheduler that merges them into one stream.
//!
//! Three source modes: `simulated` synthesizes a sine-plus-noise signal
//! on a fixed tick grid, `replay` reads a previously recorded
//! line-protocol file, and `line_protocol` accepts the same format from
//! stdin or a named pipe so external reader processes can feed the
//! pipeline without drivers in this codebase.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lineproto;
use crate::types::{Sample, SensorDescriptor, SensorKind, FLAG_SUSPECT};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source {sensor_id}: {reason}")]
    BadConfig { sensor_id: u16, reason: String },
    #[error("duplicate sensor_id {0} across sources")]
    DuplicateSensor(u16),
    #[error("source {sensor_id}: {source}")]
    Io {
        sensor_id: u16,
        #[source]
        source: io::Error,
    },
    #[error("sink rejected sample: {0}")]
    Sink(#[source] io::Error),
}

/// How a source produces samples. Simulation parameters are flattened
/// into the variant so config files read naturally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SourceMode {
    Simulated {
        baseline: f64,
        amplitude: f64,
        noise_sd: f64,
        period_s: f64,
        #[serde(default)]
        seed: u64,
    },
    Replay {
        path: PathBuf,
    },
    /// Reads from `path` when given, stdin otherwise.
    LineProtocol {
        #[serde(default)]
        path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub descriptor: SensorDescriptor,
    #[serde(flatten)]
    pub mode: SourceMode,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let id = self.descriptor.sensor_id;
        let bad = |reason: String| IngestError::BadConfig {
            sensor_id: id,
            reason,
        };
        if self.descriptor.nominal_interval_us == 0 {
            return Err(bad("nominal_interval_us must be > 0".to_string()));
        }
        if let SourceMode::Simulated {
            baseline,
            amplitude,
            noise_sd,
            period_s,
            ..
        } = &self.mode
        {
            if !baseline.is_finite() || !amplitude.is_finite() {
                return Err(bad("baseline and amplitude must be finite".to_string()));
            }
            if !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                return Err(bad(format!("noise_sd must be >= 0, got {noise_sd}")));
            }
            if !(period_s.is_finite() && *period_s > 0.0) {
                return Err(bad(format!("period_s must be > 0, got {period_s}")));
            }
        }
        Ok(())
    }
}

enum SourceInner {
    Simulated {
        rng: ChaCha8Rng,
        noise: Normal<f64>,
        baseline: f64,
        amplitude: f64,
        period_s: f64,
        tick: u64,
        start_us: u64,
    },
    Lines {
        reader: Box<dyn BufRead + Send>,
        line_no: u64,
        done: bool,
    },
}

/// An opened source; pull samples with [`Source::next_sample`].
pub struct Source {
    descriptor: SensorDescriptor,
    inner: SourceInner,
    rejected: u64,
}

impl Source {
    /// Open a source. `start_us` anchors the tick grid of simulated
    /// sources and is ignored by the file-backed modes, whose timestamps
    /// come from the data itself.
    pub fn open(config: &SourceConfig, start_us: u64) -> Result<Source, IngestError> {
        config.validate()?;
        let id = config.descriptor.sensor_id;
        let inner = match &config.mode {
            SourceMode::Simulated {
                baseline,
                amplitude,
                noise_sd,
                period_s,
                seed,
            } => SourceInner::Simulated {
                rng: ChaCha8Rng::seed_from_u64(*seed),
                noise: Normal::new(0.0, *noise_sd).map_err(|e| IngestError::BadConfig {
                    sensor_id: id,
                    reason: format!("noise_sd: {e}"),
                })?,
                baseline: *baseline,
                amplitude: *amplitude,
                period_s: *period_s,
                tick: 0,
                start_us,
            },
            SourceMode::Replay { path } => {
                let file = File::open(path).map_err(|source| IngestError::Io {
                    sensor_id: id,
                    source,
                })?;
                SourceInner::Lines {
                    reader: Box::new(BufReader::new(file)),
                    line_no: 0,
                    done: false,
                }
            }
            SourceMode::LineProtocol { path } => {
                let reader: Box<dyn BufRead + Send> = match path {
                    Some(p) => {
                        let file = File::open(p).map_err(|source| IngestError::Io {
                            sensor_id: id,
                            source,
                        })?;
                        Box::new(BufReader::new(file))
                    }
                    None => Box::new(BufReader::new(io::stdin())),
                };
                SourceInner::Lines {
                    reader,
                    line_no: 0,
                    done: false,
                }
            }
        };
        Ok(Source {
            descriptor: config.descriptor.clone(),
            inner,
            rejected: 0,
        })
    }

    pub fn descriptor(&self) -> &SensorDescriptor {
        &self.descriptor
    }

    /// Lines that failed to parse so far. Rejects never halt the stream.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Next sample, or `Ok(None)` at a clean end of the stream.
    /// Simulated sources never end on their own; the scheduler bounds
    /// them by time.
    pub fn next_sample(&mut self) -> Result<Option<Sample>, IngestError> {
        let id = self.descriptor.sensor_id;
        match &mut self.inner {
            SourceInner::Simulated {
                rng,
                noise,
                baseline,
                amplitude,
                period_s,
                tick,
                start_us,
            } => {
                let interval = self.descriptor.nominal_interval_us;
                let timestamp_us = *start_us + *tick * interval;
                let t_s = (*tick * interval) as f64 / 1e6;
                let signal = *baseline
                    + *amplitude * (2.0 * std::f64::consts::PI * t_s / *period_s).sin()
                    + noise.sample(rng);
                // Vibration hardware reports events, not magnitudes: the
                // stand-in thresholds the same signal at its baseline.
                let value = if self.descriptor.kind == SensorKind::Vibration {
                    if signal > *baseline {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    signal
                };
                *tick += 1;
                let sample = Sample::new(id, timestamp_us, value, 0).map_err(|e| {
                    IngestError::BadConfig {
                        sensor_id: id,
                        reason: e.to_string(),
                    }
                })?;
                Ok(Some(sample))
            }
            SourceInner::Lines {
                reader,
                line_no,
                done,
            } => {
                if *done {
                    return Ok(None);
                }
                let mut line = String::new();
                loop {
                    line.clear();
                    let n = reader
                        .read_line(&mut line)
                        .map_err(|source| IngestError::Io {
                            sensor_id: id,
                            source,
                        })?;
                    if n == 0 {
                        *done = true;
                        return Ok(None);
                    }
                    *line_no += 1;
                    match lineproto::parse_sample_line(line.trim_end_matches(['\n', '\r'])) {
                        Ok(None) => continue, // comment or blank
                        Ok(Some(sample)) => {
                            // A shared feed may carry several sensors;
                            // foreign ids are filtered, not rejected.
                            if sample.sensor_id != id {
                                continue;
                            }
                            return Ok(Some(sample));
                        }
                        Err(e) => {
                            self.rejected += 1;
                            log::warn!("source {id}: rejected line {line_no}: {e}");
                            continue;
                        }
                    }
                }
            }
        }
    }
}

/// Whether the scheduler paces sources against the wall clock or merges
/// them as fast as the data allows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// One thread per source, simulated ticks slept out in real time.
    Realtime,
    /// Single-threaded timestamp-ordered merge; deterministic, used for
    /// replay runs and tests.
    Logical,
}

#[derive(Debug, Clone)]
pub struct SchedulerOptions {
    pub pacing: Pacing,
    /// Anchor for simulated tick grids and the run duration window.
    pub start_us: u64,
    /// Stop delivering once a source's timestamp reaches
    /// `start_us + duration_us`. `None` runs until the stop flag.
    pub duration_us: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamSummary {
    pub delivered: u64,
    pub rejected: u64,
    pub delivered_per_source: BTreeMap<u16, u64>,
}

/// Run every source to completion (or until `stop`), delivering a
/// merged per-source-ordered stream to `sink`.
///
/// Per-source monotonicity is enforced here: a non-increasing timestamp
/// is clamped to previous + 1 µs and the sample marked suspect.
pub fn run_scheduler<F>(
    sources: &[SourceConfig],
    opts: &SchedulerOptions,
    stop: &Arc<AtomicBool>,
    mut sink: F,
) -> Result<StreamSummary, IngestError>
where
    F: FnMut(Sample) -> Result<(), io::Error>,
{
    let mut seen = BTreeMap::new();
    for config in sources {
        config.validate()?;
        if seen
            .insert(config.descriptor.sensor_id, ())
            .is_some()
        {
            return Err(IngestError::DuplicateSensor(config.descriptor.sensor_id));
        }
    }
    if sources.is_empty() {
        return Ok(StreamSummary::default());
    }

    let end_us = opts.duration_us.map(|d| opts.start_us.saturating_add(d));
    let mut summary = StreamSummary::default();
    let mut last_ts: BTreeMap<u16, u64> = BTreeMap::new();
    let mut deliver = |sample: Sample,
                       summary: &mut StreamSummary,
                       sink: &mut F|
     -> Result<(), IngestError> {
        let mut sample = sample;
        if let Some(&prev) = last_ts.get(&sample.sensor_id) {
            if sample.timestamp_us <= prev {
                sample.timestamp_us = prev + 1;
                sample.flags |= FLAG_SUSPECT;
            }
        }
        last_ts.insert(sample.sensor_id, sample.timestamp_us);
        sink(sample).map_err(IngestError::Sink)?;
        summary.delivered += 1;
        *summary
            .delivered_per_source
            .entry(sample.sensor_id)
            .or_insert(0) += 1;
        Ok(())
    };

    match opts.pacing {
        Pacing::Logical => {
            let mut opened: Vec<Source> = sources
                .iter()
                .map(|c| Source::open(c, opts.start_us))
                .collect::<Result<_, _>>()?;
            // Pull-merge by (timestamp, source index); a source whose
            // next sample falls past the window is finished.
            let mut pending: Vec<Option<Sample>> = Vec::with_capacity(opened.len());
            for source in &mut opened {
                pending.push(next_within(source, end_us)?);
            }
            while !stop.load(Ordering::Relaxed) {
                let next = pending
                    .iter()
                    .enumerate()
                    .filter_map(|(i, s)| s.map(|s| (s.timestamp_us, i)))
                    .min();
                let Some((_, i)) = next else { break };
                let sample = pending[i].take().unwrap();
                deliver(sample, &mut summary, &mut sink)?;
                pending[i] = next_within(&mut opened[i], end_us)?;
            }
            for source in &opened {
                summary.rejected += source.rejected();
            }
        }
        Pacing::Realtime => {
            enum Feed {
                Sample(Sample),
                Done { rejected: u64 },
                Failed(IngestError),
            }
            let (tx, rx) = mpsc::channel::<Feed>();
            let started = Instant::now();
            for config in sources {
                let tx = tx.clone();
                let config = config.clone();
                let stop = Arc::clone(stop);
                let start_us = opts.start_us;
                let realtime_pace = matches!(config.mode, SourceMode::Simulated { .. });
                // Detached on purpose: a reader blocked on a quiet pipe
                // cannot be interrupted portably, so it reports through
                // the channel and is abandoned at shutdown.
                thread::spawn(move || {
                    let mut source = match Source::open(&config, start_us) {
                        Ok(s) => s,
                        Err(e) => {
                            let _ = tx.send(Feed::Failed(e));
                            return;
                        }
                    };
                    loop {
                        if stop.load(Ordering::Relaxed) {
                            break;
                        }
                        let sample = match source.next_sample() {
                            Ok(Some(s)) => s,
                            Ok(None) => break,
                            Err(e) => {
                                let _ = tx.send(Feed::Failed(e));
                                return;
                            }
                        };
                        if let Some(end) = end_us {
                            if sample.timestamp_us >= end {
                                break;
                            }
                        }
                        if realtime_pace {
                            let offset =
                                Duration::from_micros(sample.timestamp_us.saturating_sub(start_us));
                            while started.elapsed() < offset {
                                if stop.load(Ordering::Relaxed) {
                                    return;
                                }
                                let remaining = offset - started.elapsed();
                                thread::sleep(remaining.min(Duration::from_millis(50)));
                            }
                        }
                        if tx.send(Feed::Sample(sample)).is_err() {
                            return; // receiver gone, run is over
                        }
                    }
                    let _ = tx.send(Feed::Done {
                        rejected: source.rejected(),
                    });
                });
            }
            drop(tx);

            // Sources bound their own lifetimes; the receive loop just
            // counts them out and honors the stop flag.
            let mut done = 0usize;
            let mut failure: Option<IngestError> = None;
            while done < sources.len() {
                match rx.recv_timeout(Duration::from_millis(50)) {
                    Ok(Feed::Sample(sample)) => {
                        if failure.is_none() {
                            deliver(sample, &mut summary, &mut sink)?;
                        }
                    }
                    Ok(Feed::Done { rejected }) => {
                        summary.rejected += rejected;
                        done += 1;
                    }
                    Ok(Feed::Failed(e)) => {
                        stop.store(true, Ordering::Relaxed);
                        if failure.is_none() {
                            failure = Some(e);
                        }
                        done += 1;
                    }
                    Err(mpsc::RecvTimeoutError::Timeout) => {
                        if stop.load(Ordering::Relaxed) {
                            // Grace period for threads to notice the flag
                            // and report; stragglers are abandoned.
                            let deadline = Instant::now() + Duration::from_millis(250);
                            while done < sources.len() && Instant::now() < deadline {
                                match rx.recv_timeout(Duration::from_millis(50)) {
                                    Ok(Feed::Done { rejected }) => {
                                        summary.rejected += rejected;
                                        done += 1;
                                    }
                                    Ok(Feed::Failed(_)) => done += 1,
                                    Ok(Feed::Sample(_)) => {}
                                    Err(_) => {}
                                }
                            }
                            break;
                        }
                    }
                    Err(mpsc::RecvTimeoutError::Disconnected) => break,
                }
            }
            if let Some(e) = failure {
                return Err(e);
            }
        }
    }
    Ok(summary)
}

fn next_within(source: &mut Source, end_us: Option<u64>) -> Result<Option<Sample>, IngestError> {
    match source.next_sample()? {
        Some(s) => match end_us {
            Some(end) if s.timestamp_us >= end => Ok(None),
            _ => Ok(Some(s)),
        },
        None => Ok(None),
    }
}

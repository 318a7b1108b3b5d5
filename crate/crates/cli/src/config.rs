//! Recorder configuration: one JSON file with `dataset`, `sensors[]`,
//! `chunker`, `stamper`, `store`, and `checks` sections, plus
//! `--set key=value` command-line overrides.
//!
//! Secrets never live here: the API key comes from the `TPSC_API_KEY`
//! environment variable or an interactive prompt, and any `api_key`
//! style key found in the file is itself a configuration error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use tpsc_core::chunker::{FlushPolicy, DEFAULT_INTERVAL_US, DEFAULT_MAX_PAYLOAD};
use tpsc_core::ingest::{SourceConfig, SourceMode};
use tpsc_core::trustcheck::CheckRules;
use tpsc_core::types::{SensorDescriptor, SensorKind};
use tpsc_core::{ChunkError, DatasetId, RECORD_LEN};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub sensors: Vec<SensorEntry>,
    #[serde(default)]
    pub chunker: ChunkerSection,
    #[serde(default)]
    pub stamper: StamperSection,
    #[serde(default)]
    pub store: StoreSection,
    /// Per-kind check rules; kinds not listed fall back to the stock
    /// bounds.
    #[serde(default)]
    pub checks: BTreeMap<SensorKind, CheckRules>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub dir: PathBuf,
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub experiment: String,
    /// Pin the dataset id (32 hex chars) instead of drawing a random
    /// one; replayed recordings only become reproducible with a pinned
    /// id.
    #[serde(default)]
    pub id: Option<String>,
}

/// One sensor: descriptor fields plus the source mode, flattened.
#[derive(Debug, Clone, Deserialize)]
pub struct SensorEntry {
    pub sensor_id: u16,
    pub kind: SensorKind,
    pub unit: String,
    pub model: String,
    pub nominal_interval_us: u64,
    #[serde(flatten)]
    pub mode: SourceMode,
}

impl SensorEntry {
    pub fn descriptor(&self) -> SensorDescriptor {
        SensorDescriptor {
            sensor_id: self.sensor_id,
            kind: self.kind,
            unit: self.unit.clone(),
            model: self.model.clone(),
            nominal_interval_us: self.nominal_interval_us,
        }
    }

    pub fn source(&self) -> SourceConfig {
        SourceConfig {
            descriptor: self.descriptor(),
            mode: self.mode.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkerSection {
    pub max_payload_bytes: usize,
    /// Seal the buffer after this many seconds even if under the size
    /// threshold; 0 disables the time window.
    pub time_window_s: u64,
}

impl Default for ChunkerSection {
    fn default() -> Self {
        ChunkerSection {
            max_payload_bytes: DEFAULT_MAX_PAYLOAD,
            time_window_s: DEFAULT_INTERVAL_US / 1_000_000,
        }
    }
}

impl ChunkerSection {
    pub fn policy(&self) -> FlushPolicy {
        FlushPolicy {
            max_payload_bytes: self.max_payload_bytes,
            interval_us: match self.time_window_s {
                0 => None,
                s => Some(s * 1_000_000),
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StamperSection {
    pub enabled: bool,
    pub url: String,
    pub poll_interval_ms: u64,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
}

impl Default for StamperSection {
    fn default() -> Self {
        StamperSection {
            enabled: true,
            url: String::new(),
            poll_interval_ms: 2_000,
            backoff_base_ms: 1_000,
            backoff_cap_ms: 300_000,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    /// IPFS-style HTTP gateway to pin sealed chunks at; unset disables
    /// pinning.
    #[serde(default)]
    pub pin_gateway: Option<String>,
}

impl Config {
    /// Load a config file, apply `--set key=value` overrides, validate.
    /// Every problem found is reported at once.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Config, Vec<String>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| vec![format!("cannot read config {}: {e}", path.display())])?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| vec![format!("config {} is not valid JSON: {e}", path.display())])?;

        let mut errors = Vec::new();
        for spec in overrides {
            if let Err(e) = apply_override(&mut value, spec) {
                errors.push(e);
            }
        }
        scan_for_secrets(&value, "", &mut errors);
        if !errors.is_empty() {
            return Err(errors);
        }

        let config: Config = match serde_json::from_value(value) {
            Ok(c) => c,
            Err(e) => return Err(vec![format!("config: {e}")]),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.dataset.dir.as_os_str().is_empty() {
            errors.push("dataset.dir must not be empty".to_string());
        }
        if let Some(id) = &self.dataset.id {
            if let Err(e) = DatasetId::from_hex(id) {
                errors.push(format!("dataset.id: {e}"));
            }
        }
        let mut seen = BTreeMap::new();
        for (i, sensor) in self.sensors.iter().enumerate() {
            if let Some(prev) = seen.insert(sensor.sensor_id, i) {
                errors.push(format!(
                    "sensors[{i}]: sensor_id {} already used by sensors[{prev}]",
                    sensor.sensor_id
                ));
            }
            if let Err(e) = sensor.source().validate() {
                errors.push(format!("sensors[{i}]: {e}"));
            }
            if sensor.unit.trim().is_empty() {
                errors.push(format!("sensors[{i}]: unit must not be blank"));
            }
            if sensor.model.trim().is_empty() {
                errors.push(format!("sensors[{i}]: model must not be blank"));
            }
        }
        if self.chunker.max_payload_bytes < RECORD_LEN {
            errors.push(format!(
                "chunker.max_payload_bytes must hold at least one {RECORD_LEN}-byte record"
            ));
        }
        if self.stamper.enabled {
            if self.stamper.url.is_empty() {
                errors.push("stamper.url is required while stamper.enabled is true".to_string());
            } else if !self.stamper.url.starts_with("http://")
                && !self.stamper.url.starts_with("https://")
            {
                errors.push(format!(
                    "stamper.url must be an http(s) URL, got {:?}",
                    self.stamper.url
                ));
            }
            if self.stamper.backoff_base_ms == 0 {
                errors.push("stamper.backoff_base_ms must be > 0".to_string());
            }
        }
        if let Some(gw) = &self.store.pin_gateway {
            if !gw.starts_with("http://") && !gw.starts_with("https://") {
                errors.push(format!("store.pin_gateway must be an http(s) URL, got {gw:?}"));
            }
        }
        for (kind, rules) in &self.checks {
            if !(rules.gap_factor.is_finite() && rules.gap_factor > 0.0) {
                errors.push(format!(
                    "checks.{}: gap_factor must be finite and > 0",
                    kind.as_str()
                ));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn dataset_id(&self) -> Result<Option<DatasetId>, ChunkError> {
        self.dataset.id.as_deref().map(DatasetId::from_hex).transpose()
    }

    /// Check rules for one sensor kind: configured section first, stock
    /// bounds otherwise.
    pub fn rules_for(&self, kind: SensorKind) -> CheckRules {
        self.checks
            .get(&kind)
            .cloned()
            .unwrap_or_else(|| CheckRules::for_kind(kind))
    }
}

/// Apply one `path.to.key=value` override onto the raw JSON. The value
/// is parsed as JSON when possible and taken as a string otherwise, so
/// `--set stamper.enabled=false` and `--set dataset.dir=/tmp/x` both
/// work. Numeric segments index into arrays.
fn apply_override(root: &mut Value, spec: &str) -> Result<(), String> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("--set {spec:?}: expected key=value"))?;
    if path.is_empty() {
        return Err(format!("--set {spec:?}: empty key"));
    }
    let new_value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));

    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let last = i == segments.len() - 1;
        if let Ok(index) = segment.parse::<usize>() {
            let arr = cursor
                .as_array_mut()
                .ok_or_else(|| format!("--set {path}: {segment:?} indexes a non-array"))?;
            if index >= arr.len() {
                return Err(format!(
                    "--set {path}: index {index} out of bounds ({} elements)",
                    arr.len()
                ));
            }
            if last {
                arr[index] = new_value;
                return Ok(());
            }
            cursor = &mut arr[index];
        } else {
            let obj = cursor
                .as_object_mut()
                .ok_or_else(|| format!("--set {path}: {segment:?} keys into a non-object"))?;
            if last {
                obj.insert(segment.to_string(), new_value);
                return Ok(());
            }
            cursor = obj
                .entry(segment.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
    }
    unreachable!("loop returns on the last segment");
}

/// Secrets belong in the environment, never in config files.
fn scan_for_secrets(value: &Value, path: &str, errors: &mut Vec<String>) {
    match value {
        Value::Object(map) => {
            for (key, child) in map {
                let child_path = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                let lowered = key.to_ascii_lowercase().replace(['-', '_'], "");
                if lowered.contains("apikey") || lowered.contains("secret") {
                    errors.push(format!(
                        "config key {child_path:?} looks like a secret; set TPSC_API_KEY in the environment instead"
                    ));
                }
                scan_for_secrets(child, &child_path, errors);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                scan_for_secrets(child, &format!("{path}[{i}]"), errors);
            }
        }
        _ => {}
    }
}

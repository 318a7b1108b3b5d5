//! Per-series quality checks, robust cross-source aggregation, and a
//! small corruption simulation.
//!
//! The checks are deliberately mechanical: gaps against the declared
//! sampling interval, values against configured physical bounds, rate of
//! change against a configured limit, and descriptor completeness. The
//! aggregation side combines several sources measuring the same quantity
//! on a shared time grid using median and MAD, flagging (never dropping)
//! sources that disagree with the consensus.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Sample, SensorDescriptor, SensorKind};

/// Robust z-score cutoff for outlier flagging. 1.4826 scales MAD to the
/// standard deviation of a normal distribution; 3.5 is the conventional
/// cutoff on that scale.
pub const OUTLIER_CUTOFF: f64 = 3.5;
const MAD_TO_SD: f64 = 1.4826;

/// Grid length used by [`simulate_network`].
pub const SIMULATION_GRID_POINTS: usize = 200;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("series {series_id}: sample {index} is earlier than its predecessor")]
    Unordered { series_id: u16, index: usize },
    #[error("no series to aggregate")]
    NoSeries,
    #[error("no samples fall on the aggregation grid")]
    EmptyGrid,
    #[error("{0}")]
    BadParameter(String),
}

/// Allowed values for one sensor kind. `Discrete` is for event-style
/// sensors whose legal readings are an exact set, not an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeRule {
    Interval { min: f64, max: f64 },
    Discrete { allowed: Vec<f64> },
}

impl RangeRule {
    pub fn allows(&self, value: f64) -> bool {
        match self {
            RangeRule::Interval { min, max } => value >= *min && value <= *max,
            RangeRule::Discrete { allowed } => allowed.iter().any(|a| *a == value),
        }
    }
}

/// Tunable thresholds for [`check_series`]. All defaults are declared
/// configuration, not measured properties of any particular hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRules {
    /// A gap is flagged when it exceeds `gap_factor` times the declared
    /// nominal interval.
    pub gap_factor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<RangeRule>,
    /// Physical rate-of-change limit in value units per second.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rate_per_s: Option<f64>,
    /// Constant reference value; when set, the report carries residual
    /// statistics against it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

impl Default for CheckRules {
    fn default() -> Self {
        CheckRules {
            gap_factor: 3.0,
            range: None,
            max_rate_per_s: None,
            reference: None,
        }
    }
}

impl CheckRules {
    /// Stock bounds for the shipped sensor profile. Temperature in degC,
    /// current in A, vibration as a 0/1 event stream.
    pub fn for_kind(kind: SensorKind) -> Self {
        let range = match kind {
            SensorKind::Temperature => Some(RangeRule::Interval { min: 0.0, max: 50.0 }),
            SensorKind::Current => Some(RangeRule::Interval {
                min: -35.0,
                max: 35.0,
            }),
            SensorKind::Vibration => Some(RangeRule::Discrete {
                allowed: vec![0.0, 1.0],
            }),
            SensorKind::Other => None,
        };
        CheckRules {
            range,
            ..CheckRules::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GapStats {
    pub count: u64,
    /// Largest flagged gap in microseconds; 0 when `count` is 0.
    pub worst_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorEstimate {
    pub mean: f64,
    pub sd: f64,
    pub n: u64,
}

/// Outcome of the per-series checks. Counts, never verdicts: deciding
/// what a violation means is the operator's business.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub series_id: u16,
    pub sampling_gaps: GapStats,
    pub range_violations: u64,
    pub metadata_complete: bool,
    pub rate_of_change_violations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_estimate: Option<ErrorEstimate>,
}

/// Run the quality checks over one time-ordered series.
pub fn check_series(
    samples: &[Sample],
    descriptor: &SensorDescriptor,
    rules: &CheckRules,
) -> Result<QualityReport, CheckError> {
    ensure_ordered(descriptor.sensor_id, samples)?;
    if !(rules.gap_factor.is_finite() && rules.gap_factor > 0.0) {
        return Err(CheckError::BadParameter(format!(
            "gap_factor must be finite and > 0, got {}",
            rules.gap_factor
        )));
    }

    let gap_limit = rules.gap_factor * descriptor.nominal_interval_us as f64;
    let mut gaps = GapStats { count: 0, worst_us: 0 };
    let mut rate_violations = 0u64;
    for pair in samples.windows(2) {
        let dt_us = pair[1].timestamp_us - pair[0].timestamp_us;
        if dt_us as f64 > gap_limit {
            gaps.count += 1;
            gaps.worst_us = gaps.worst_us.max(dt_us);
        }
        if let Some(limit) = rules.max_rate_per_s {
            let dv = (pair[1].value - pair[0].value).abs();
            // Zero elapsed time with a value change is an infinite rate.
            let over = if dt_us == 0 {
                dv > 0.0
            } else {
                dv / (dt_us as f64 / 1e6) > limit
            };
            if over {
                rate_violations += 1;
            }
        }
    }

    let range_violations = match &rules.range {
        Some(rule) => samples.iter().filter(|s| !rule.allows(s.value)).count() as u64,
        None => 0,
    };

    let metadata_complete = !descriptor.unit.trim().is_empty()
        && !descriptor.model.trim().is_empty()
        && descriptor.nominal_interval_us > 0;

    let error_estimate = rules.reference.and_then(|reference| {
        if samples.is_empty() {
            return None;
        }
        let residuals: Vec<f64> = samples.iter().map(|s| s.value - reference).collect();
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        // Sample standard deviation; a single residual reports sd 0.
        let sd = if residuals.len() > 1 {
            let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt()
        } else {
            0.0
        };
        Some(ErrorEstimate {
            mean,
            sd,
            n: residuals.len() as u64,
        })
    });

    Ok(QualityReport {
        series_id: descriptor.sensor_id,
        sampling_gaps: gaps,
        range_violations,
        metadata_complete,
        rate_of_change_violations: rate_violations,
        error_estimate,
    })
}

/// One source's contribution to an aggregation run.
#[derive(Debug, Clone)]
pub struct SourceSeries {
    pub source_id: u16,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatePoint {
    pub timestamp_us: u64,
    pub median: f64,
    pub mad: f64,
    pub n_sources: u32,
    /// Sources whose value sits more than [`OUTLIER_CUTOFF`] robust
    /// z-scores from the median. Flagged, never removed.
    pub outlier_source_ids: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateResult {
    pub grid_interval_us: u64,
    pub points: Vec<AggregatePoint>,
}

/// Combine several sources onto a shared time grid.
///
/// Each source contributes its nearest sample within half a grid
/// interval of each grid point; points no source reaches are omitted, so
/// every emitted point has `n_sources` of at least 1. No interpolation:
/// an integrity tool must not invent readings that were never taken.
pub fn aggregate_sources(
    series: &[SourceSeries],
    grid_interval_us: u64,
) -> Result<AggregateResult, CheckError> {
    if series.is_empty() {
        return Err(CheckError::NoSeries);
    }
    if grid_interval_us == 0 {
        return Err(CheckError::BadParameter(
            "grid_interval_us must be > 0".to_string(),
        ));
    }
    for s in series {
        ensure_ordered(s.source_id, &s.samples)?;
    }

    let start = series
        .iter()
        .filter_map(|s| s.samples.first())
        .map(|s| s.timestamp_us)
        .min()
        .ok_or(CheckError::EmptyGrid)?;
    let end = series
        .iter()
        .filter_map(|s| s.samples.last())
        .map(|s| s.timestamp_us)
        .max()
        .ok_or(CheckError::EmptyGrid)?;

    let mut points = Vec::new();
    let mut t = start;
    loop {
        let mut contributions: Vec<(u16, f64)> = Vec::new();
        for s in series {
            if let Some(value) = nearest_within(&s.samples, t, grid_interval_us) {
                contributions.push((s.source_id, value));
            }
        }
        if !contributions.is_empty() {
            let mut values: Vec<f64> = contributions.iter().map(|(_, v)| *v).collect();
            let median = median_of(&mut values);
            let mut deviations: Vec<f64> = contributions
                .iter()
                .map(|(_, v)| (v - median).abs())
                .collect();
            let mad = median_of(&mut deviations);
            // MAD 0 means a strict majority agrees exactly; an epsilon
            // floor keeps the cutoff finite so any dissent is flagged
            // while unanimous points flag nothing.
            let cutoff = OUTLIER_CUTOFF * MAD_TO_SD * mad.max(f64::EPSILON);
            let mut outlier_source_ids: Vec<u16> = contributions
                .iter()
                .filter(|(_, v)| (v - median).abs() > cutoff)
                .map(|(id, _)| *id)
                .collect();
            outlier_source_ids.sort_unstable();
            points.push(AggregatePoint {
                timestamp_us: t,
                median,
                mad,
                n_sources: contributions.len() as u32,
                outlier_source_ids,
            });
        }
        match t.checked_add(grid_interval_us) {
            Some(next) if next <= end => t = next,
            _ => break,
        }
    }

    if points.is_empty() {
        return Err(CheckError::EmptyGrid);
    }
    Ok(AggregateResult {
        grid_interval_us,
        points,
    })
}

/// Summary statistics from one [`simulate_network`] run over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationOutcome {
    pub n_sources: u32,
    pub n_corrupt: u32,
    pub grid_points: u32,
    /// Mean over the grid of |median - truth|.
    pub median_abs_err: f64,
    /// Mean over the grid of |mean - truth|.
    pub mean_abs_err: f64,
    pub worst_median_abs_err: f64,
    pub worst_mean_abs_err: f64,
}

/// Simulate a network of independent sources measuring one signal, a
/// fraction of them colluding on a constant bias, and compare how the
/// mean and the median track the truth.
///
/// Honest sources report truth plus gaussian noise; corrupt sources
/// report truth plus `corrupt_bias` exactly. The corrupt count is
/// `round(corrupt_fraction * n_sources)`. Deterministic for a fixed
/// seed.
pub fn simulate_network(
    n_sources: u32,
    corrupt_fraction: f64,
    noise_sd: f64,
    corrupt_bias: f64,
    seed: u64,
) -> Result<SimulationOutcome, CheckError> {
    if n_sources == 0 {
        return Err(CheckError::BadParameter("n_sources must be >= 1".to_string()));
    }
    if !(corrupt_fraction.is_finite() && (0.0..1.0).contains(&corrupt_fraction)) {
        return Err(CheckError::BadParameter(format!(
            "corrupt_fraction must be in [0, 1), got {corrupt_fraction}"
        )));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(CheckError::BadParameter(format!(
            "noise_sd must be finite and >= 0, got {noise_sd}"
        )));
    }
    if !corrupt_bias.is_finite() {
        return Err(CheckError::BadParameter(format!(
            "corrupt_bias must be finite, got {corrupt_bias}"
        )));
    }

    let n_corrupt = (corrupt_fraction * n_sources as f64).round() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd)
        .map_err(|e| CheckError::BadParameter(format!("noise_sd: {e}")))?;

    let mut median_err_sum = 0.0;
    let mut mean_err_sum = 0.0;
    let mut worst_median = 0.0f64;
    let mut worst_mean = 0.0f64;
    let mut values = vec![0.0f64; n_sources as usize];
    for g in 0..SIMULATION_GRID_POINTS {
        let truth = 20.0 + 5.0 * (2.0 * std::f64::consts::PI * g as f64 / 64.0).sin();
        for (i, slot) in values.iter_mut().enumerate() {
            *slot = if (i as u32) < n_corrupt {
                truth + corrupt_bias
            } else {
                truth + noise.sample(&mut rng)
            };
        }
        // Shifted summation so a grid of identical values averages to
        // exactly that value (the zero-noise, zero-corruption case).
        let anchor = values[0];
        let mean = anchor + values.iter().map(|v| v - anchor).sum::<f64>() / n_sources as f64;
        let mut sorted = values.clone();
        let median = median_of(&mut sorted);

        let med_err = (median - truth).abs();
        let mean_err = (mean - truth).abs();
        median_err_sum += med_err;
        mean_err_sum += mean_err;
        worst_median = worst_median.max(med_err);
        worst_mean = worst_mean.max(mean_err);
    }

    let n_grid = SIMULATION_GRID_POINTS as f64;
    Ok(SimulationOutcome {
        n_sources,
        n_corrupt,
        grid_points: SIMULATION_GRID_POINTS as u32,
        median_abs_err: median_err_sum / n_grid,
        mean_abs_err: mean_err_sum / n_grid,
        worst_median_abs_err: worst_median,
        worst_mean_abs_err: worst_mean,
    })
}

fn ensure_ordered(series_id: u16, samples: &[Sample]) -> Result<(), CheckError> {
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].timestamp_us < pair[0].timestamp_us {
            return Err(CheckError::Unordered {
                series_id,
                index: i + 1,
            });
        }
    }
    Ok(())
}

/// Median with the usual even-count convention. Sorts in place.
fn median_of(xs: &mut [f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    xs.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Nearest sample to `t` within half a grid interval; ties go to the
/// earlier sample.
fn nearest_within(samples: &[Sample], t: u64, grid_interval_us: u64) -> Option<f64> {
    let idx = samples.partition_point(|s| s.timestamp_us < t);
    let mut best: Option<(u64, f64)> = None;
    for cand in [idx.checked_sub(1), Some(idx)].into_iter().flatten() {
        if let Some(s) = samples.get(cand) {
            let dist = s.timestamp_us.abs_diff(t);
            match best {
                Some((d, _)) if d <= dist => {}
                _ => best = Some((dist, s.value)),
            }
        }
    }
    // Compare 2*dist <= interval in integers to avoid rounding the
    // half-width.
    best.and_then(|(dist, value)| {
        if dist.checked_mul(2).is_some_and(|d| d <= grid_interval_us) {
            Some(value)
        } else {
            None
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn descriptor(interval_us: u64) -> SensorDescriptor {
        SensorDescriptor {
            sensor_id: 7,
            kind: SensorKind::Temperature,
            unit: "degC".to_string(),
            model: "DHT11".to_string(),
            nominal_interval_us: interval_us,
        }
    }

    fn series(interval_us: u64, values: &[f64]) -> Vec<Sample> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| Sample::new(7, 1_000_000 + i as u64 * interval_us, *v, 0).unwrap())
            .collect()
    }

    #[test]
    fn regular_in_range_series_reports_clean() {
        let samples = series(1_000_000, &[20.0, 20.1, 20.2, 20.1, 20.0]);
        let rules = CheckRules {
            max_rate_per_s: Some(2.0),
            ..CheckRules::for_kind(SensorKind::Temperature)
        };
        let report = check_series(&samples, &descriptor(1_000_000), &rules).unwrap();
        assert_eq!(report.sampling_gaps, GapStats { count: 0, worst_us: 0 });
        assert_eq!(report.range_violations, 0);
        assert_eq!(report.rate_of_change_violations, 0);
        assert!(report.metadata_complete);
        assert!(report.error_estimate.is_none());
    }

    #[test]
    fn gap_twice_the_interval_passes_but_four_times_is_flagged() {
        let interval = 1_000_000u64;
        let rules = CheckRules::default(); // gap_factor 3

        let mut samples = series(interval, &[20.0, 20.0, 20.0]);
        samples.push(Sample::new(7, samples[2].timestamp_us + 2 * interval, 20.0, 0).unwrap());
        let report = check_series(&samples, &descriptor(interval), &rules).unwrap();
        assert_eq!(report.sampling_gaps.count, 0);

        let mut samples = series(interval, &[20.0, 20.0, 20.0]);
        samples.push(Sample::new(7, samples[2].timestamp_us + 4 * interval, 20.0, 0).unwrap());
        let report = check_series(&samples, &descriptor(interval), &rules).unwrap();
        assert_eq!(report.sampling_gaps.count, 1);
        assert_eq!(report.sampling_gaps.worst_us, 4 * interval);
    }

    #[test]
    fn rate_of_change_jump_is_flagged_once() {
        // 50 units in one second against a 2 units/s limit.
        let samples = series(1_000_000, &[0.0, 50.0, 50.0]);
        let rules = CheckRules {
            max_rate_per_s: Some(2.0),
            ..CheckRules::default()
        };
        let report = check_series(&samples, &descriptor(1_000_000), &rules).unwrap();
        assert_eq!(report.rate_of_change_violations, 1);
    }

    #[test]
    fn out_of_range_values_are_counted() {
        let samples = series(1_000_000, &[20.0, -3.0, 57.5, 20.0]);
        let rules = CheckRules::for_kind(SensorKind::Temperature);
        let report = check_series(&samples, &descriptor(1_000_000), &rules).unwrap();
        assert_eq!(report.range_violations, 2);
    }

    #[test]
    fn vibration_values_must_be_exactly_zero_or_one() {
        let rule = CheckRules::for_kind(SensorKind::Vibration).range.unwrap();
        assert!(rule.allows(0.0));
        assert!(rule.allows(1.0));
        assert!(!rule.allows(0.5));
    }

    #[test]
    fn unordered_input_is_an_error() {
        let mut samples = series(1_000_000, &[20.0, 20.0, 20.0]);
        samples.swap(0, 2);
        let err = check_series(&samples, &descriptor(1_000_000), &CheckRules::default());
        assert!(matches!(
            err,
            Err(CheckError::Unordered { series_id: 7, .. })
        ));
    }

    #[test]
    fn blank_descriptor_fields_mark_metadata_incomplete() {
        let samples = series(1_000_000, &[20.0]);
        let mut d = descriptor(1_000_000);
        d.unit = "  ".to_string();
        let report = check_series(&samples, &d, &CheckRules::default()).unwrap();
        assert!(!report.metadata_complete);
    }

    #[test]
    fn residuals_against_a_reference_value() {
        let samples = series(1_000_000, &[1.0, 2.0, 3.0]);
        let rules = CheckRules {
            reference: Some(2.0),
            ..CheckRules::default()
        };
        let report = check_series(&samples, &descriptor(1_000_000), &rules).unwrap();
        let est = report.error_estimate.unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.sd, 1.0);
        assert_eq!(est.n, 3);
    }

    #[test]
    fn check_series_is_pure() {
        let samples = series(500_000, &[20.0, 25.0, 30.0, 80.0]);
        let rules = CheckRules {
            max_rate_per_s: Some(5.0),
            reference: Some(22.0),
            ..CheckRules::for_kind(SensorKind::Temperature)
        };
        let a = check_series(&samples, &descriptor(500_000), &rules).unwrap();
        let b = check_series(&samples, &descriptor(500_000), &rules).unwrap();
        assert_eq!(a, b);
    }

    fn one_point_sources(values: &[f64]) -> Vec<SourceSeries> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| SourceSeries {
                source_id: i as u16 + 1,
                samples: vec![Sample::new(i as u16 + 1, 1_000_000, *v, 0).unwrap()],
            })
            .collect()
    }

    #[test]
    fn one_loud_source_among_agreeing_sources_is_the_outlier() {
        let sources = one_point_sources(&[10.0, 10.0, 10.0, 10.0, 100.0]);
        let result = aggregate_sources(&sources, 1_000_000).unwrap();
        assert_eq!(result.points.len(), 1);
        let point = &result.points[0];
        assert_eq!(point.median, 10.0);
        assert_eq!(point.n_sources, 5);
        assert_eq!(point.outlier_source_ids, vec![5]);
    }

    #[test]
    fn single_source_aggregates_to_itself() {
        let sources = one_point_sources(&[21.5]);
        let result = aggregate_sources(&sources, 1_000_000).unwrap();
        assert_eq!(result.points[0].median, 21.5);
        assert_eq!(result.points[0].n_sources, 1);
        assert!(result.points[0].outlier_source_ids.is_empty());
    }

    #[test]
    fn identical_sources_produce_no_outliers() {
        let sources = one_point_sources(&[10.0, 10.0, 10.0, 10.0]);
        let result = aggregate_sources(&sources, 1_000_000).unwrap();
        assert_eq!(result.points[0].mad, 0.0);
        assert!(result.points[0].outlier_source_ids.is_empty());
    }

    #[test]
    fn empty_series_set_is_an_error() {
        assert!(matches!(
            aggregate_sources(&[], 1_000_000),
            Err(CheckError::NoSeries)
        ));
        let empty = vec![SourceSeries {
            source_id: 1,
            samples: Vec::new(),
        }];
        assert!(matches!(
            aggregate_sources(&empty, 1_000_000),
            Err(CheckError::EmptyGrid)
        ));
    }

    #[test]
    fn gridding_takes_the_nearest_sample_within_half_an_interval() {
        // Source 1 samples every second; source 2 has one sample that
        // sits 0.4 s after the second grid point and nothing else.
        let s1 = SourceSeries {
            source_id: 1,
            samples: (0..3)
                .map(|i| Sample::new(1, 1_000_000 + i * 1_000_000, 10.0, 0).unwrap())
                .collect(),
        };
        let s2 = SourceSeries {
            source_id: 2,
            samples: vec![Sample::new(2, 2_400_000, 12.0, 0).unwrap()],
        };
        let result = aggregate_sources(&[s1, s2], 1_000_000).unwrap();
        assert_eq!(result.points.len(), 3);
        assert_eq!(result.points[0].n_sources, 1);
        assert_eq!(result.points[1].n_sources, 2);
        assert_eq!(result.points[1].median, 11.0);
        assert_eq!(result.points[2].n_sources, 1);
    }

    #[test]
    fn sparse_sources_skip_unreachable_grid_points() {
        // Two samples ten seconds apart on a one-second grid: only the
        // grid points near a sample are emitted.
        let s = SourceSeries {
            source_id: 1,
            samples: vec![
                Sample::new(1, 1_000_000, 5.0, 0).unwrap(),
                Sample::new(1, 11_000_000, 6.0, 0).unwrap(),
            ],
        };
        let result = aggregate_sources(&[s], 1_000_000).unwrap();
        for point in &result.points {
            assert!(point.n_sources >= 1);
        }
        assert_eq!(result.points.len(), 2); // only 1 s and 11 s are reachable
    }

    #[test]
    fn zero_noise_zero_corruption_is_exact() {
        let outcome = simulate_network(101, 0.0, 0.0, 10.0, 42).unwrap();
        assert_eq!(outcome.n_corrupt, 0);
        assert_eq!(outcome.median_abs_err, 0.0);
        assert_eq!(outcome.mean_abs_err, 0.0);
        assert_eq!(outcome.worst_median_abs_err, 0.0);
        assert_eq!(outcome.worst_mean_abs_err, 0.0);
    }

    #[test]
    fn same_seed_same_outcome() {
        let a = simulate_network(51, 0.2, 0.5, 10.0, 7).unwrap();
        let b = simulate_network(51, 0.2, 0.5, 10.0, 7).unwrap();
        assert_eq!(a, b);
        let c = simulate_network(51, 0.2, 0.5, 10.0, 8).unwrap();
        assert_ne!(a.median_abs_err, c.median_abs_err);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(simulate_network(0, 0.1, 0.5, 10.0, 1).is_err());
        assert!(simulate_network(10, 1.0, 0.5, 10.0, 1).is_err());
        assert!(simulate_network(10, -0.1, 0.5, 10.0, 1).is_err());
        assert!(simulate_network(10, f64::NAN, 0.5, 10.0, 1).is_err());
        assert!(simulate_network(10, 0.1, -1.0, 10.0, 1).is_err());
        assert!(simulate_network(10, 0.1, 0.5, f64::INFINITY, 1).is_err());
    }

    #[test]
    fn corrupting_which_sources_does_not_move_the_median() {
        // Fixed multiset of values: the median only sees the values, not
        // which source holds which. Model two corruption assignments by
        // permuting the same values across source ids.
        let values = [10.0, 10.2, 9.9, 20.0, 20.0, 10.1, 9.8];
        let mut permuted = values;
        permuted.rotate_left(3);
        let a = aggregate_sources(&one_point_sources(&values), 1_000_000).unwrap();
        let b = aggregate_sources(&one_point_sources(&permuted), 1_000_000).unwrap();
        assert_eq!(a.points[0].median, b.points[0].median);
        assert_eq!(a.points[0].mad, b.points[0].mad);
        assert_eq!(
            a.points[0].outlier_source_ids.len(),
            b.points[0].outlier_source_ids.len()
        );
    }

    #[test]
    fn mean_error_grows_with_bias_while_median_stays_bounded() {
        let mut previous_mean_err = 0.0;
        for bias in [1.0, 10.0, 100.0] {
            let outcome = simulate_network(101, 0.2, 0.5, bias, 1234).unwrap();
            assert!(
                outcome.mean_abs_err > previous_mean_err,
                "mean err {} did not grow past {} at bias {}",
                outcome.mean_abs_err,
                previous_mean_err,
                bias
            );
            assert!(
                outcome.median_abs_err < 0.5,
                "median err {} escaped its bound at bias {}",
                outcome.median_abs_err,
                bias
            );
            previous_mean_err = outcome.mean_abs_err;
        }
    }

    #[test]
    fn minority_corruption_shifts_the_mean_but_not_the_median() {
        // n=101, f=0.2, bias=10: 20 corrupt sources pull the mean by
        // about 20*10/101 = 1.98 while the median tracks the honest
        // majority. Tolerances pinned from a 40-seed calibration run.
        for seed in 0..30 {
            let outcome = simulate_network(101, 0.2, 0.5, 10.0, seed).unwrap();
            assert_eq!(outcome.n_corrupt, 20);
            assert!(
                outcome.median_abs_err < 0.5,
                "seed {seed}: median err {}",
                outcome.median_abs_err
            );
            assert!(
                outcome.mean_abs_err > 1.5,
                "seed {seed}: mean err {}",
                outcome.mean_abs_err
            );
        }
    }

    #[test]
    fn majority_corruption_defeats_the_median() {
        // Beyond 50% colluders the median lands in the corrupt mass and
        // the error approaches the bias itself.
        for seed in 0..30 {
            let outcome = simulate_network(101, 0.6, 0.5, 10.0, seed).unwrap();
            assert!(
                outcome.median_abs_err > 5.0,
                "seed {seed}: median err {}",
                outcome.median_abs_err
            );
        }
    }

    /// Prints the spread used to pin the tolerances above. Run with
    /// `cargo test -p tpsc-core calibrate -- --ignored --nocapture`.
    #[test]
    #[ignore]
    fn calibrate_simulation_spread() {
        for (f, bias) in [(0.2, 10.0), (0.6, 10.0)] {
            let mut med = Vec::new();
            let mut mean = Vec::new();
            for seed in 0..40 {
                let o = simulate_network(101, f, 0.5, bias, seed).unwrap();
                med.push(o.median_abs_err);
                mean.push(o.mean_abs_err);
            }
            let stats = |xs: &[f64]| {
                let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let avg = xs.iter().sum::<f64>() / xs.len() as f64;
                (lo, avg, hi)
            };
            println!(
                "f={f} bias={bias}: median_abs_err (min,avg,max)={:?} mean_abs_err={:?}",
                stats(&med),
                stats(&mean)
            );
        }
    }
}

//! The ASCII line protocol: one sample per line,
//! `<sensor_id> <timestamp_us> <value>` with an optional trailing flags
//! column, `#` comment lines and blank lines ignored.
//!
//! Replay files, the live feed, and the crash-recovery journal all
//! share this grammar. The flags column is written only when non-zero,
//! so hand-written feeds stay three columns while journaled samples
//! keep their suspect bit across a restart.

use thiserror::Error;

use crate::types::{Sample, FLAG_RESERVED_MASK};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LineError {
    #[error("expected 3 or 4 fields, found {0}")]
    FieldCount(usize),
    #[error("bad sensor_id {0:?}")]
    BadSensorId(String),
    #[error("bad timestamp_us {0:?}")]
    BadTimestamp(String),
    #[error("bad value {0:?}")]
    BadValue(String),
    #[error("non-finite value {0:?}")]
    NonFinite(String),
    #[error("bad flags {0:?}")]
    BadFlags(String),
    #[error("reserved flag bits set in {0:?}")]
    ReservedFlags(String),
}

/// Parse one line. `Ok(None)` for comments and blank lines.
pub fn parse_sample_line(line: &str) -> Result<Option<Sample>, LineError> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = trimmed.split_whitespace().collect();
    if fields.len() != 3 && fields.len() != 4 {
        return Err(LineError::FieldCount(fields.len()));
    }
    let sensor_id: u16 = fields[0]
        .parse()
        .map_err(|_| LineError::BadSensorId(fields[0].to_string()))?;
    let timestamp_us: u64 = fields[1]
        .parse()
        .map_err(|_| LineError::BadTimestamp(fields[1].to_string()))?;
    let value: f64 = fields[2]
        .parse()
        .map_err(|_| LineError::BadValue(fields[2].to_string()))?;
    if !value.is_finite() {
        return Err(LineError::NonFinite(fields[2].to_string()));
    }
    let flags: u8 = if fields.len() == 4 {
        let f = fields[3]
            .parse()
            .map_err(|_| LineError::BadFlags(fields[3].to_string()))?;
        if f & FLAG_RESERVED_MASK != 0 {
            return Err(LineError::ReservedFlags(fields[3].to_string()));
        }
        f
    } else {
        0
    };
    Ok(Some(Sample {
        sensor_id,
        timestamp_us,
        value,
        flags,
    }))
}

/// Inverse of [`parse_sample_line`] for valid samples, newline not
/// included. Rust's float formatting is shortest-round-trip, so the
/// value survives a write/read cycle bit-exactly.
pub fn format_sample_line(s: &Sample) -> String {
    if s.flags == 0 {
        format!("{} {} {}", s.sensor_id, s.timestamp_us, s.value)
    } else {
        format!("{} {} {} {}", s.sensor_id, s.timestamp_us, s.value, s.flags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FLAG_SUSPECT;

    #[test]
    fn parses_the_documented_example() {
        let s = parse_sample_line("3 1700000000000000 21.5").unwrap().unwrap();
        assert_eq!(s.sensor_id, 3);
        assert_eq!(s.timestamp_us, 1_700_000_000_000_000);
        assert_eq!(s.value, 21.5);
        assert_eq!(s.flags, 0);
    }

    #[test]
    fn comments_and_blanks_yield_nothing() {
        assert_eq!(parse_sample_line("# header").unwrap(), None);
        assert_eq!(parse_sample_line("   ").unwrap(), None);
        assert_eq!(parse_sample_line("").unwrap(), None);
    }

    #[test]
    fn flags_column_round_trips() {
        let s = Sample {
            sensor_id: 9,
            timestamp_us: 42,
            value: -0.0,
            flags: FLAG_SUSPECT,
        };
        let line = format_sample_line(&s);
        assert_eq!(line, "9 42 -0 1");
        let back = parse_sample_line(&line).unwrap().unwrap();
        assert_eq!(back, s);
        assert_eq!(back.value.to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn three_column_form_omits_zero_flags() {
        let s = Sample {
            sensor_id: 1,
            timestamp_us: 7,
            value: 2.25,
            flags: 0,
        };
        assert_eq!(format_sample_line(&s), "1 7 2.25");
    }

    #[test]
    fn rejects_malformed_fields() {
        assert!(matches!(parse_sample_line("1 2"), Err(LineError::FieldCount(2))));
        assert!(matches!(
            parse_sample_line("x 2 3.0"),
            Err(LineError::BadSensorId(_))
        ));
        assert!(matches!(
            parse_sample_line("1 -5 3.0"),
            Err(LineError::BadTimestamp(_))
        ));
        assert!(matches!(
            parse_sample_line("1 2 notanumber"),
            Err(LineError::BadValue(_))
        ));
        assert!(matches!(
            parse_sample_line("1 2 inf"),
            Err(LineError::NonFinite(_))
        ));
        assert!(matches!(
            parse_sample_line("1 2 3.0 listed"),
            Err(LineError::BadFlags(_))
        ));
        assert!(matches!(
            parse_sample_line("1 2 3.0 2"),
            Err(LineError::ReservedFlags(_))
        ));
    }

    #[test]
    fn extreme_values_survive_round_trip() {
        for v in [f64::MIN_POSITIVE, 1.0 / 3.0, -1e-12, 4.9e-324, f64::MAX] {
            let s = Sample {
                sensor_id: 0,
                timestamp_us: 0,
                value: v,
                flags: 0,
            };
            let back = parse_sample_line(&format_sample_line(&s)).unwrap().unwrap();
            assert_eq!(back.value.to_bits(), v.to_bits());
        }
    }
}

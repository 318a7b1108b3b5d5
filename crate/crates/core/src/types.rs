//! Sensor and sample domain types shared across the pipeline.

use serde::{Deserialize, Serialize};

use crate::chunk::ChunkError;

/// Bit 0 of [`Sample::flags`]: the producer considers this reading suspect
/// (for example a timestamp that had to be clamped forward).
pub const FLAG_SUSPECT: u8 = 0b0000_0001;

/// Bits 1-7 of [`Sample::flags`] are reserved and must be zero.
pub const FLAG_RESERVED_MASK: u8 = 0b1111_1110;

/// What a sensor measures. `Other` covers anything beyond the three
/// kinds the stock hardware profile ships with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Temperature,
    Current,
    Vibration,
    Other,
}

impl SensorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SensorKind::Temperature => "temperature",
            SensorKind::Current => "current",
            SensorKind::Vibration => "vibration",
            SensorKind::Other => "other",
        }
    }
}

/// Static description of one sensor contributing to a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorDescriptor {
    /// Unique within a dataset.
    pub sensor_id: u16,
    pub kind: SensorKind,
    /// Unit of the recorded value, e.g. "degC", "A", "bool".
    pub unit: String,
    /// Hardware model name, e.g. "DHT11", "WCS1800", "SW-420".
    pub model: String,
    /// Intended sampling period in microseconds; must be > 0.
    pub nominal_interval_us: u64,
}

impl SensorDescriptor {
    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.nominal_interval_us == 0 {
            return Err(ChunkError::invariant(
                "nominal_interval_us",
                "must be > 0".to_string(),
            ));
        }
        Ok(())
    }
}

/// One measurement: which sensor, when, what value.
///
/// `timestamp_us` is microseconds since the Unix epoch, UTC. `value` must
/// be finite; NaN and infinities are rejected before a sample can enter
/// a chunk, so the canonical byte format never carries them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub sensor_id: u16,
    pub timestamp_us: u64,
    pub value: f64,
    pub flags: u8,
}

impl Sample {
    /// Build a sample, enforcing the finite-value and reserved-flag rules.
    pub fn new(sensor_id: u16, timestamp_us: u64, value: f64, flags: u8) -> Result<Self, ChunkError> {
        let sample = Sample {
            sensor_id,
            timestamp_us,
            value,
            flags,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if !self.value.is_finite() {
            return Err(ChunkError::invariant(
                "value",
                format!("must be finite, got {}", self.value),
            ));
        }
        if self.flags & FLAG_RESERVED_MASK != 0 {
            return Err(ChunkError::invariant(
                "flags",
                format!("reserved bits 1-7 must be zero, got {:#010b}", self.flags),
            ));
        }
        Ok(())
    }

    pub fn is_suspect(&self) -> bool {
        self.flags & FLAG_SUSPECT != 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_values() {
        assert!(Sample::new(1, 0, f64::NAN, 0).is_err());
        assert!(Sample::new(1, 0, f64::INFINITY, 0).is_err());
        assert!(Sample::new(1, 0, f64::NEG_INFINITY, 0).is_err());
        assert!(Sample::new(1, 0, 21.5, 0).is_ok());
    }

    #[test]
    fn rejects_reserved_flag_bits() {
        assert!(Sample::new(1, 0, 1.0, 0b0000_0010).is_err());
        assert!(Sample::new(1, 0, 1.0, 0b1000_0000).is_err());
        assert!(Sample::new(1, 0, 1.0, FLAG_SUSPECT).is_ok());
    }

    #[test]
    fn descriptor_needs_positive_interval() {
        let d = SensorDescriptor {
            sensor_id: 1,
            kind: SensorKind::Temperature,
            unit: "degC".to_string(),
            model: "DHT11".to_string(),
            nominal_interval_us: 0,
        };
        assert!(d.validate().is_err());
    }
}

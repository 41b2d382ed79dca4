//! Unit-suffixed literals used by the sequence and config formats.
//!
//! Internally every frequency is angular (rad/s), time is seconds, angles are
//! radians and pump power is dBm. Ordinary-frequency literals (`8.70GHz`) are
//! converted to angular frequency here and nowhere else.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Ordinary frequency (Hz) to angular frequency (rad/s).
#[inline]
pub fn hz_to_angular(f_hz: f64) -> f64 {
    TWO_PI * f_hz
}

/// Angular frequency (rad/s) to ordinary frequency (Hz).
#[inline]
pub fn angular_to_hz(omega: f64) -> f64 {
    omega / TWO_PI
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    /// Stored as rad/s, written in Hz multiples.
    Frequency,
    Time,
    Angle,
    /// dBm, stored as-is.
    Power,
    /// Bare number, no unit allowed.
    Scalar,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dimension::Frequency => "frequency (GHz, MHz, kHz, Hz)",
            Dimension::Time => "time (s, ms, us, ns)",
            Dimension::Angle => "angle (deg, rad)",
            Dimension::Power => "power (dBm)",
            Dimension::Scalar => "dimensionless number",
        };
        f.write_str(s)
    }
}

// Longest suffixes first so that "ms" is not read as "s".
const UNITS: &[(&str, Dimension, f64)] = &[
    ("GHz", Dimension::Frequency, 1e9),
    ("MHz", Dimension::Frequency, 1e6),
    ("kHz", Dimension::Frequency, 1e3),
    ("Hz", Dimension::Frequency, 1.0),
    ("dBm", Dimension::Power, 1.0),
    ("deg", Dimension::Angle, PI / 180.0),
    ("rad", Dimension::Angle, 1.0),
    ("ms", Dimension::Time, 1e-3),
    ("us", Dimension::Time, 1e-6),
    ("µs", Dimension::Time, 1e-6),
    ("ns", Dimension::Time, 1e-9),
    ("s", Dimension::Time, 1.0),
];

/// A parsed numeric literal, remembering its source text so that emitters can
/// reproduce it byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub dimension: Dimension,
    literal: String,
}

impl Quantity {
    pub fn parse(text: &str, expected: Dimension) -> std::result::Result<Self, String> {
        let text = text.trim();
        if text.is_empty() {
            return Err("empty value".into());
        }
        let (number, scale) = match UNITS.iter().find(|(u, _, _)| text.ends_with(u)) {
            Some((unit, dim, scale)) => {
                if *dim != expected {
                    return Err(format!("unit `{unit}` given where {expected} expected"));
                }
                (&text[..text.len() - unit.len()], *scale)
            }
            None => {
                if expected != Dimension::Scalar {
                    return Err(format!("missing unit on `{text}`, expected {expected}"));
                }
                (text, 1.0)
            }
        };
        let number: f64 = number
            .parse()
            .map_err(|_| format!("`{text}` is not a number"))?;
        if number.is_nan() {
            return Err("NaN is not a valid value".into());
        }
        let value = match expected {
            Dimension::Frequency => hz_to_angular(number * scale),
            _ => number * scale,
        };
        Ok(Self {
            value,
            dimension: expected,
            literal: text.to_string(),
        })
    }

    /// Build a quantity from an internal value, rendering it in `unit`.
    pub fn from_value(value: f64, dimension: Dimension, unit: &str) -> Self {
        let scale = UNITS
            .iter()
            .find(|(u, d, _)| *u == unit && *d == dimension)
            .map(|(_, _, s)| *s)
            .unwrap_or(1.0);
        let shown = match dimension {
            Dimension::Frequency => angular_to_hz(value) / scale,
            _ => value / scale,
        };
        let unit = if dimension == Dimension::Scalar { "" } else { unit };
        Self {
            value,
            dimension,
            literal: format!("{shown}{unit}"),
        }
    }

    pub fn literal(&self) -> &str {
        &self.literal
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.literal)
    }
}

/// Parse a literal, mapping failures to a validation error that names the key.
pub fn parse_quantity(key: &str, text: &str, expected: Dimension) -> Result<Quantity> {
    Quantity::parse(text, expected).map_err(|m| Error::validation(format!("{key}: {m}")))
}

/// dBm to milliwatts.
#[inline]
pub fn dbm_to_mw(p_dbm: f64) -> f64 {
    10f64.powf(p_dbm / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn megahertz_boundary_conversion() {
        let q = Quantity::parse("2.4MHz", Dimension::Frequency).unwrap();
        assert_eq!(q.value, 2.0 * PI * 2.4e6);
        assert_eq!(angular_to_hz(q.value), 2.4e6);
        assert_eq!(q.literal(), "2.4MHz");
    }

    #[test]
    fn time_and_angle_units() {
        assert_eq!(Quantity::parse("0.6us", Dimension::Time).unwrap().value, 0.6e-6);
        assert_eq!(Quantity::parse("20ms", Dimension::Time).unwrap().value, 20e-3);
        assert_eq!(Quantity::parse("5s", Dimension::Time).unwrap().value, 5.0);
        let a = Quantity::parse("90deg", Dimension::Angle).unwrap().value;
        assert!((a - PI / 2.0).abs() < 1e-15);
        assert_eq!(Quantity::parse("-52dBm", Dimension::Power).unwrap().value, -52.0);
        assert_eq!(
            Quantity::parse("-infdBm", Dimension::Power).unwrap().value,
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn missing_or_wrong_unit_rejected() {
        assert!(Quantity::parse("8.7", Dimension::Frequency).is_err());
        assert!(Quantity::parse("8.7us", Dimension::Frequency).is_err());
        assert!(Quantity::parse("3Hz", Dimension::Scalar).is_err());
        assert!(Quantity::parse("abcHz", Dimension::Frequency).is_err());
        assert_eq!(Quantity::parse("900e3", Dimension::Scalar).unwrap().value, 900e3);
    }

    #[test]
    fn rendered_quantity_reparses() {
        let q = Quantity::from_value(hz_to_angular(1.25e6), Dimension::Frequency, "MHz");
        assert_eq!(q.literal(), "1.25MHz");
        let back = Quantity::parse(q.literal(), Dimension::Frequency).unwrap();
        assert!((back.value - q.value).abs() <= 1e-9);
    }
}

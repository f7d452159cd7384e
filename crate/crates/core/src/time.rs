use serde::{Deserialize, Serialize};
use std::fmt;

/// A point in time, held as whole nanoseconds since the Unix epoch.
///
/// Integer nanoseconds avoid the floating-point drift that creeps in when
/// month-long spans of second-resolution timestamps are accumulated as
/// doubles. On disk timestamps are decimal seconds; parsing and formatting
/// round-trip exactly for up to nine fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

const NANOS_PER_SEC: i64 = 1_000_000_000;

impl Timestamp {
    pub fn from_nanos(nanos: i64) -> Self {
        Timestamp(nanos)
    }

    pub fn as_nanos(self) -> i64 {
        self.0
    }

    /// Nearest-nanosecond conversion from fractional seconds.
    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * NANOS_PER_SEC as f64).round() as i64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    /// Shift by a (possibly fractional, possibly negative) number of seconds.
    pub fn offset_secs(self, secs: f64) -> Self {
        Timestamp(self.0 + (secs * NANOS_PER_SEC as f64).round() as i64)
    }

    /// Parse decimal seconds, e.g. `"12"`, `"12.5"`, `"-0.25"`.
    ///
    /// At most nine fractional digits are accepted; more would lose
    /// precision silently, so they are rejected instead.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        let (neg, body) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text.strip_prefix('+').unwrap_or(text)),
        };
        if body.is_empty() {
            return None;
        }
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if frac_part.len() > 9 {
            return None;
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return None;
        }
        let secs: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().ok()?
        };
        let mut frac: i64 = 0;
        if !frac_part.is_empty() {
            frac = frac_part.parse().ok()?;
            for _ in 0..(9 - frac_part.len()) {
                frac *= 10;
            }
        }
        let magnitude = secs.checked_mul(NANOS_PER_SEC)?.checked_add(frac)?;
        Some(Timestamp(if neg { -magnitude } else { magnitude }))
    }
}

impl fmt::Display for Timestamp {
    /// Decimal seconds with trailing zeros trimmed: `12`, `12.5`, `-0.25`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let neg = self.0 < 0;
        let magnitude = self.0.unsigned_abs();
        let secs = magnitude / NANOS_PER_SEC as u64;
        let nanos = magnitude % NANOS_PER_SEC as u64;
        if neg {
            write!(f, "-")?;
        }
        if nanos == 0 {
            write!(f, "{secs}")
        } else {
            let frac = format!("{nanos:09}");
            write!(f, "{secs}.{}", frac.trim_end_matches('0'))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_round_trip() {
        for text in ["0", "12", "12.5", "0.000000001", "1234567.890123456"] {
            let ts = Timestamp::parse(text).unwrap();
            assert_eq!(ts.to_string(), text);
        }
    }

    #[test]
    fn negative_fractional_seconds() {
        let ts = Timestamp::parse("-0.25").unwrap();
        assert_eq!(ts.as_nanos(), -250_000_000);
        assert_eq!(ts.to_string(), "-0.25");
    }

    #[test]
    fn rejects_garbage_and_excess_precision() {
        assert!(Timestamp::parse("").is_none());
        assert!(Timestamp::parse("abc").is_none());
        assert!(Timestamp::parse("1.2.3").is_none());
        assert!(Timestamp::parse("0.0000000001").is_none());
        assert!(Timestamp::parse(".").is_none());
    }

    #[test]
    fn fractional_without_integer_part() {
        assert_eq!(Timestamp::parse(".5").unwrap().as_nanos(), 500_000_000);
    }
}

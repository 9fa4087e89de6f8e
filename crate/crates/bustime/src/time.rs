//! Civil time handling for GPS timestamps.
//!
//! Timestamps are local civil time at second resolution, stored as seconds
//! since 1970-01-01T00:00:00. No time zone arithmetic is performed; the data
//! is recorded in one local clock and analyzed in the same clock.

use std::fmt;

use thiserror::Error;

pub const SECS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimeError {
    #[error("invalid timestamp '{0}': expected YYYY-MM-DD[T ]HH:MM:SS")]
    Format(String),
    #[error("timestamp field out of range in '{0}'")]
    Range(String),
}

/// An absolute instant in local civil time, second resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_ymd_hms(y: i32, m: u32, d: u32, hh: u32, mm: u32, ss: u32) -> Self {
        let days = days_from_civil(y, m, d);
        Timestamp(days * SECS_PER_DAY + i64::from(hh) * 3600 + i64::from(mm) * 60 + i64::from(ss))
    }

    /// Day number since 1970-01-01 (floor for pre-epoch instants).
    pub fn day(self) -> i64 {
        self.0.div_euclid(SECS_PER_DAY)
    }

    pub fn second_of_day(self) -> i64 {
        self.0.rem_euclid(SECS_PER_DAY)
    }

    /// Time of day in fractional hours, in [0, 24).
    pub fn hour_of_day(self) -> f64 {
        self.second_of_day() as f64 / 3600.0
    }

    /// Day of week, 0 = Sunday .. 6 = Saturday.
    pub fn weekday(self) -> u8 {
        // 1970-01-01 was a Thursday.
        ((self.day() + 4).rem_euclid(7)) as u8
    }

    pub fn is_weekend(self) -> bool {
        let w = self.weekday();
        w == 0 || w == 6
    }

    /// Minutes elapsed since `earlier` (negative if `self` is before it).
    pub fn minutes_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / 60.0
    }

    /// Offset by a (possibly fractional) number of minutes, rounded to the
    /// nearest second.
    pub fn plus_minutes(self, minutes: f64) -> Timestamp {
        Timestamp(self.0 + (minutes * 60.0).round() as i64)
    }

    pub fn parse(s: &str) -> Result<Self, TimeError> {
        let s = s.trim();
        let bytes = s.as_bytes();
        if bytes.len() != 19 || (bytes[10] != b'T' && bytes[10] != b' ') {
            return Err(TimeError::Format(s.to_string()));
        }
        let num = |range: std::ops::Range<usize>| -> Result<i64, TimeError> {
            s[range].parse::<i64>().map_err(|_| TimeError::Format(s.to_string()))
        };
        if bytes[4] != b'-' || bytes[7] != b'-' || bytes[13] != b':' || bytes[16] != b':' {
            return Err(TimeError::Format(s.to_string()));
        }
        let (y, m, d) = (num(0..4)?, num(5..7)?, num(8..10)?);
        let (hh, mm, ss) = (num(11..13)?, num(14..16)?, num(17..19)?);
        if !(1..=12).contains(&m)
            || !(1..=31).contains(&d)
            || !(0..=23).contains(&hh)
            || !(0..=59).contains(&mm)
            || !(0..=59).contains(&ss)
        {
            return Err(TimeError::Range(s.to_string()));
        }
        Ok(Timestamp::from_ymd_hms(y as i32, m as u32, d as u32, hh as u32, mm as u32, ss as u32))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (y, m, d) = civil_from_days(self.day());
        let sod = self.second_of_day();
        write!(
            f,
            "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}",
            y,
            m,
            d,
            sod / 3600,
            (sod / 60) % 60,
            sod % 60
        )
    }
}

/// Days since 1970-01-01 for a proleptic Gregorian civil date.
pub fn days_from_civil(y: i32, m: u32, d: u32) -> i64 {
    let y = i64::from(y) - i64::from(m <= 2);
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = i64::from((m + 9) % 12);
    let doy = (153 * mp + 2) / 5 + i64::from(d) - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Inverse of [`days_from_civil`].
pub fn civil_from_days(days: i64) -> (i32, u32, u32) {
    let z = days + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    ((y + i64::from(m <= 2)) as i32, m, d)
}

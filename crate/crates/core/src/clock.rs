//! Simulated time.
//!
//! The control plane never reads the wall clock. Every instant is a whole
//! number of one-minute ticks since a fixed epoch, which keeps seeded runs
//! byte-for-byte reproducible.

use std::fmt;
use std::ops::{Add, Sub};

use chrono::{DateTime, Duration, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Epoch of tick 0: 2025-07-25T00:00:00Z.
const EPOCH_SECS: i64 = 1_753_401_600;

pub const MINUTES_PER_HOUR: u64 = 60;
pub const MINUTES_PER_DAY: u64 = 24 * MINUTES_PER_HOUR;

/// A simulated instant, measured in one-minute ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_minutes(m: u64) -> Self {
        SimTime(m)
    }

    pub fn from_hours(h: u64) -> Self {
        SimTime(h * MINUTES_PER_HOUR)
    }

    pub fn minutes(self) -> u64 {
        self.0
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_opt(EPOCH_SECS, 0).unwrap() + Duration::minutes(self.0 as i64)
    }

    pub fn to_iso8601(self) -> String {
        self.to_datetime().format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }

    /// Parses an ISO-8601 UTC instant. Sub-minute precision is rejected so
    /// that parse and format are inverse.
    pub fn parse_iso8601(s: &str) -> Option<Self> {
        let naive = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%SZ").ok()?;
        let secs = naive.and_utc().timestamp() - EPOCH_SECS;
        if secs < 0 || secs % 60 != 0 {
            return None;
        }
        Some(SimTime((secs / 60) as u64))
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: u64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl Sub for SimTime {
    type Output = u64;
    fn sub(self, rhs: SimTime) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso8601())
    }
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_iso8601())
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SimTime::parse_iso8601(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid simulated instant `{s}`")))
    }
}

//! Simulated UTC time.

use std::fmt;
use std::ops::{Add, Sub};

use chrono::{DateTime, NaiveDate, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Milliseconds since the Unix epoch, UTC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub i64);

impl SimTime {
    pub const MS_PER_DAY: i64 = 86_400_000;

    pub fn from_secs(s: i64) -> Self {
        SimTime(s * 1000)
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        SimTime(dt.timestamp_millis())
    }

    pub fn parse_rfc3339(s: &str) -> Result<Self, chrono::ParseError> {
        Ok(Self::from_datetime(DateTime::parse_from_rfc3339(s)?.with_timezone(&Utc)))
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.0).single().expect("timestamp in chrono range")
    }

    pub fn date(self) -> NaiveDate {
        self.to_datetime().date_naive()
    }

    /// Midnight UTC at the start of `date`.
    pub fn start_of(date: NaiveDate) -> Self {
        let dt = date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc();
        Self::from_datetime(dt)
    }

    /// Seconds elapsed since `earlier` (negative if `earlier` is later).
    pub fn secs_since(self, earlier: SimTime) -> f64 {
        (self.0 - earlier.0) as f64 / 1000.0
    }

    pub fn plus_secs(self, s: i64) -> Self {
        SimTime(self.0 + s * 1000)
    }

    pub fn plus_secs_f64(self, s: f64) -> Self {
        SimTime(self.0 + (s * 1000.0).round() as i64)
    }

    pub fn iso8601(self) -> String {
        self.to_datetime().to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.iso8601())
    }
}

impl Add<i64> for SimTime {
    type Output = SimTime;
    fn add(self, ms: i64) -> SimTime {
        SimTime(self.0 + ms)
    }
}

impl Sub for SimTime {
    type Output = i64;
    fn sub(self, rhs: SimTime) -> i64 {
        self.0 - rhs.0
    }
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.iso8601())
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SimTime::parse_rfc3339(&s).map_err(serde::de::Error::custom)
    }
}

//! Circular sun-synchronous orbit, radiation zones, eclipse phase and
//! ground-station contact windows.
//!
//! The ground track is analytic: the argument of latitude advances linearly
//! from the ascending node at `epoch`, and the Earth turns underneath at the
//! sidereal rate. No perturbations are modelled.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::time::SimTime;

pub const EARTH_RADIUS_KM: f64 = 6378.137;
pub const MU_EARTH_KM3_S2: f64 = 398_600.441_8;
pub const SIDEREAL_DAY_S: f64 = 86_164.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrbitError {
    #[error("invalid orbit config: {0}")]
    InvalidConfig(String),
    #[error("time {t} precedes orbit epoch {epoch}")]
    BeforeEpoch { t: SimTime, epoch: SimTime },
    #[error("invalid zone policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    #[default]
    Scheduled,
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields, default)]
pub struct OrbitConfig<T> {
    pub altitude_km: T,
    pub inclination_deg: T,
    pub epoch: SimTime,
    /// Geographic longitude of the ascending node at `epoch`.
    pub raan_deg: T,
    pub eclipse_fraction: T,
    pub window_mode: WindowMode,
    pub mu_km3_s2: T,
}

impl<T: Real> Default for OrbitConfig<T> {
    fn default() -> Self {
        OrbitConfig {
            altitude_km: T::lit(550.0),
            inclination_deg: T::lit(97.6),
            epoch: SimTime::parse_rfc3339("2024-01-01T00:00:00Z").expect("valid literal"),
            raan_deg: T::zero(),
            eclipse_fraction: T::lit(0.35),
            window_mode: WindowMode::Scheduled,
            mu_km3_s2: T::lit(MU_EARTH_KM3_S2),
        }
    }
}

impl<T: Real> OrbitConfig<T> {
    pub fn validate(&self) -> Result<(), OrbitError> {
        if !(self.altitude_km > T::zero()) {
            return Err(OrbitError::InvalidConfig(format!("altitude_km must be > 0, got {}", self.altitude_km)));
        }
        if !(self.eclipse_fraction >= T::zero() && self.eclipse_fraction < T::one()) {
            return Err(OrbitError::InvalidConfig(format!(
                "eclipse_fraction must be in [0,1), got {}",
                self.eclipse_fraction
            )));
        }
        if !(self.mu_km3_s2 > T::zero()) {
            return Err(OrbitError::InvalidConfig("mu_km3_s2 must be > 0".into()));
        }
        if !(self.inclination_deg >= T::zero() && self.inclination_deg <= T::lit(180.0)) {
            return Err(OrbitError::InvalidConfig("inclination_deg must be in [0,180]".into()));
        }
        Ok(())
    }

    fn elapsed_s(&self, t: SimTime) -> Result<T, OrbitError> {
        if t < self.epoch {
            return Err(OrbitError::BeforeEpoch { t, epoch: self.epoch });
        }
        Ok(T::lit(t.secs_since(self.epoch)))
    }

    /// Orbit phase in [0, 1), zero at the ascending node.
    pub fn phase(&self, t: SimTime) -> Result<T, OrbitError> {
        let p = orbital_period(self)?;
        let x = self.elapsed_s(t)? / p;
        Ok(x - x.floor())
    }

    /// Whole orbits completed since epoch.
    pub fn orbit_number(&self, t: SimTime) -> Result<u64, OrbitError> {
        let p = orbital_period(self)?;
        Ok((self.elapsed_s(t)? / p).floor().to_u64().unwrap_or(0))
    }
}

/// Geodetic position. Longitude is kept in [-180, 180).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GeodeticPoint<T> {
    pub lat_deg: T,
    pub lon_deg: T,
    #[serde(default)]
    pub alt_km: T,
}

impl<T: Real> GeodeticPoint<T> {
    pub fn new(lat_deg: T, lon_deg: T, alt_km: T) -> Self {
        GeodeticPoint { lat_deg, lon_deg: normalize_lon(lon_deg), alt_km }
    }

    pub fn surface(lat_deg: T, lon_deg: T) -> Self {
        Self::new(lat_deg, lon_deg, T::zero())
    }

    /// Earth-centred Earth-fixed position on a spherical Earth, km.
    pub fn to_ecef(&self) -> [T; 3] {
        let r = T::lit(EARTH_RADIUS_KM) + self.alt_km;
        let (lat, lon) = (self.lat_deg.to_radians(), self.lon_deg.to_radians());
        [r * lat.cos() * lon.cos(), r * lat.cos() * lon.sin(), r * lat.sin()]
    }
}

pub fn normalize_lon<T: Real>(lon: T) -> T {
    let full = T::lit(360.0);
    let half = T::lit(180.0);
    let mut x = (lon + half) % full;
    if x < T::zero() {
        x = x + full;
    }
    // `%` can round up to exactly 360 for tiny negative inputs.
    if x >= full {
        x = x - full;
    }
    x - half
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Nominal,
    Polar,
    Saa,
}

impl Zone {
    pub fn as_str(self) -> &'static str {
        match self {
            Zone::Nominal => "nominal",
            Zone::Polar => "polar",
            Zone::Saa => "saa",
        }
    }

    pub fn parse(s: &str) -> Option<Zone> {
        match s {
            "nominal" => Some(Zone::Nominal),
            "polar" => Some(Zone::Polar),
            "saa" => Some(Zone::Saa),
            _ => None,
        }
    }
}

impl std::fmt::Display for Zone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Regions where the payload is kept powered down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields, default)]
pub struct ZonePolicy<T> {
    pub polar_lat_deg: T,
    pub saa_polygon: Vec<GeodeticPoint<T>>,
}

impl<T: Real> Default for ZonePolicy<T> {
    fn default() -> Self {
        let v = |lat: f64, lon: f64| GeodeticPoint::surface(T::lit(lat), T::lit(lon));
        ZonePolicy {
            polar_lat_deg: T::lit(60.0),
            saa_polygon: vec![v(-50.0, -90.0), v(-50.0, 40.0), v(0.0, 40.0), v(0.0, -90.0)],
        }
    }
}

impl<T: Real> ZonePolicy<T> {
    pub fn validate(&self) -> Result<(), OrbitError> {
        if !(self.polar_lat_deg > T::zero() && self.polar_lat_deg < T::lit(90.0)) {
            return Err(OrbitError::InvalidPolicy("polar_lat_deg must be in (0,90)".into()));
        }
        let n = self.saa_polygon.len();
        if n < 3 {
            return Err(OrbitError::InvalidPolicy("saa_polygon needs at least 3 vertices".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let a = (&self.saa_polygon[i], &self.saa_polygon[(i + 1) % n]);
                let b = (&self.saa_polygon[j], &self.saa_polygon[(j + 1) % n]);
                if segments_intersect(a, b) {
                    return Err(OrbitError::InvalidPolicy(format!("saa_polygon edges {i} and {j} intersect")));
                }
            }
        }
        Ok(())
    }

    /// Even-odd ray casting in the (lon, lat) plane. The polygon must not
    /// straddle the antimeridian.
    pub fn in_saa(&self, p: &GeodeticPoint<T>) -> bool {
        let poly = &self.saa_polygon;
        let (x, y) = (p.lon_deg, p.lat_deg);
        let mut inside = false;
        let mut j = poly.len() - 1;
        for i in 0..poly.len() {
            let (xi, yi) = (poly[i].lon_deg, poly[i].lat_deg);
            let (xj, yj) = (poly[j].lon_deg, poly[j].lat_deg);
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

fn orient<T: Real>(a: &GeodeticPoint<T>, b: &GeodeticPoint<T>, c: &GeodeticPoint<T>) -> T {
    (b.lon_deg - a.lon_deg) * (c.lat_deg - a.lat_deg) - (b.lat_deg - a.lat_deg) * (c.lon_deg - a.lon_deg)
}

fn segments_intersect<T: Real>(
    (p1, p2): (&GeodeticPoint<T>, &GeodeticPoint<T>),
    (q1, q2): (&GeodeticPoint<T>, &GeodeticPoint<T>),
) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    let z = T::zero();
    ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z))
}

pub fn orbital_period<T: Real>(config: &OrbitConfig<T>) -> Result<T, OrbitError> {
    if !(config.altitude_km > T::zero()) {
        return Err(OrbitError::InvalidConfig(format!("altitude_km must be > 0, got {}", config.altitude_km)));
    }
    let a = T::lit(EARTH_RADIUS_KM) + config.altitude_km;
    Ok(T::lit(2.0) * T::PI() * (a * a * a / config.mu_km3_s2).sqrt())
}

/// Sub-satellite point at `t`.
pub fn propagate<T: Real>(config: &OrbitConfig<T>, t: SimTime) -> Result<GeodeticPoint<T>, OrbitError> {
    let period = orbital_period(config)?;
    let elapsed = config.elapsed_s(t)?;
    let u = T::lit(2.0) * T::PI() * elapsed / period;
    let inc = config.inclination_deg.to_radians();
    let lat = (inc.sin() * u.sin()).asin();
    // Longitude of the satellite relative to the node, in the inertial frame.
    let dlon = (inc.cos() * u.sin()).atan2(u.cos());
    let earth_turn = elapsed * T::lit(360.0) / T::lit(SIDEREAL_DAY_S);
    let lon = config.raan_deg + dlon.to_degrees() - earth_turn;
    Ok(GeodeticPoint::new(lat.to_degrees(), lon, config.altitude_km))
}

pub fn classify_zone<T: Real>(policy: &ZonePolicy<T>, p: &GeodeticPoint<T>) -> Zone {
    if p.lat_deg.abs() > policy.polar_lat_deg {
        Zone::Polar
    } else if policy.in_saa(p) {
        Zone::Saa
    } else {
        Zone::Nominal
    }
}

/// Eclipse is the arc of length `eclipse_fraction` centred on orbit phase 0.5.
pub fn in_eclipse<T: Real>(config: &OrbitConfig<T>, t: SimTime) -> Result<bool, OrbitError> {
    let phase = config.phase(t)?;
    let half = config.eclipse_fraction / T::lit(2.0);
    Ok((phase - T::lit(0.5)).abs() < half)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Uhf,
    Sband,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Uhf => "uhf",
            Channel::Sband => "sband",
        }
    }
}

/// A scheduled contact: offset from UTC midnight and duration, both seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSlot {
    pub start_s: u32,
    pub duration_s: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct GroundStation<T> {
    pub id: String,
    pub channel: Channel,
    pub lat_deg: T,
    pub lon_deg: T,
    #[serde(default)]
    pub alt_km: T,
    #[serde(default = "default_min_elevation")]
    pub min_elevation_deg: T,
    /// Passes shorter than this are not usable for a contact (geometric mode).
    #[serde(default = "default_min_pass")]
    pub min_pass_s: u32,
    /// Daily contacts used in scheduled mode.
    #[serde(default)]
    pub schedule: Vec<ContactSlot>,
}

fn default_min_elevation<T: Real>() -> T {
    T::lit(10.0)
}

fn default_min_pass() -> u32 {
    120
}

impl<T: Real> GroundStation<T> {
    pub fn location(&self) -> GeodeticPoint<T> {
        GeodeticPoint::new(self.lat_deg, self.lon_deg, self.alt_km)
    }

    /// Duplex UHF station with four 10-minute contacts per day.
    pub fn default_uhf() -> Self {
        GroundStation {
            id: "uhf-gs".into(),
            channel: Channel::Uhf,
            lat_deg: T::lit(-37.8),
            lon_deg: T::lit(144.96),
            alt_km: T::zero(),
            min_elevation_deg: default_min_elevation(),
            min_pass_s: default_min_pass(),
            schedule: [2, 8, 14, 20].iter().map(|h| ContactSlot { start_s: h * 3600, duration_s: 600 }).collect(),
        }
    }

    /// Simplex S-band station with two 8-minute contacts per day.
    pub fn default_sband() -> Self {
        GroundStation {
            id: "sband-gs".into(),
            channel: Channel::Sband,
            lat_deg: T::lit(-31.8),
            lon_deg: T::lit(115.9),
            alt_km: T::zero(),
            min_elevation_deg: default_min_elevation(),
            min_pass_s: default_min_pass(),
            schedule: [5, 17].iter().map(|h| ContactSlot { start_s: h * 3600, duration_s: 480 }).collect(),
        }
    }

    pub fn defaults() -> Vec<Self> {
        vec![Self::default_uhf(), Self::default_sband()]
    }

    /// Elevation of a satellite above this station's local horizon, degrees.
    pub fn elevation_deg(&self, sat: &GeodeticPoint<T>) -> T {
        let s = sat.to_ecef();
        let g = self.location().to_ecef();
        let d = [s[0] - g[0], s[1] - g[1], s[2] - g[2]];
        let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        let dn = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let dot = (d[0] * g[0] + d[1] * g[1] + d[2] * g[2]) / (gn * dn);
        dot.max(-T::one()).min(T::one()).asin().to_degrees()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassWindow {
    pub station_id: String,
    pub channel: Channel,
    pub start: SimTime,
    pub end: SimTime,
}

impl PassWindow {
    pub fn duration_s(&self) -> i64 {
        (self.end - self.start) / 1000
    }

    pub fn contains(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }
}

const COARSE_STEP_S: i64 = 10;

/// Contact windows for one UTC day, sorted by start time.
pub fn pass_windows<T: Real>(
    config: &OrbitConfig<T>,
    stations: &[GroundStation<T>],
    day: NaiveDate,
) -> Result<Vec<PassWindow>, OrbitError> {
    let day_start = SimTime::start_of(day);
    let mut out = Vec::new();
    for st in stations {
        let mut mine = match config.window_mode {
            WindowMode::Scheduled => st
                .schedule
                .iter()
                .filter(|s| s.duration_s > 0)
                .map(|s| PassWindow {
                    station_id: st.id.clone(),
                    channel: st.channel,
                    start: day_start.plus_secs(i64::from(s.start_s)),
                    end: day_start.plus_secs(i64::from(s.start_s) + i64::from(s.duration_s)),
                })
                .collect::<Vec<_>>(),
            WindowMode::Geometric => geometric_windows(config, st, day_start)?,
        };
        mine.sort_by_key(|w| w.start);
        // Merge overlapping slots from a hand-written schedule.
        let mut merged: Vec<PassWindow> = Vec::with_capacity(mine.len());
        for w in mine {
            match merged.last_mut() {
                Some(prev) if w.start <= prev.end => prev.end = prev.end.max(w.end),
                _ => merged.push(w),
            }
        }
        out.extend(merged);
    }
    out.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.station_id.cmp(&b.station_id)));
    Ok(out)
}

fn geometric_windows<T: Real>(
    config: &OrbitConfig<T>,
    st: &GroundStation<T>,
    day_start: SimTime,
) -> Result<Vec<PassWindow>, OrbitError> {
    let visible = |s: i64| -> Result<bool, OrbitError> {
        let t = day_start.plus_secs(s);
        if t < config.epoch {
            return Ok(false);
        }
        let p = propagate(config, t)?;
        Ok(st.elevation_deg(&p) > st.min_elevation_deg)
    };
    // First visible second in (lo, hi], given lo and hi straddle a transition.
    let refine = |mut lo: i64, mut hi: i64, rising: bool| -> Result<i64, OrbitError> {
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if visible(mid)? == rising {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    };

    let mut windows = Vec::new();
    let mut open: Option<i64> = if visible(0)? { Some(0) } else { None };
    let mut prev = 0;
    let mut s = COARSE_STEP_S;
    while s <= 86_400 {
        let v = if s < 86_400 { visible(s)? } else { false };
        match (open, v) {
            (None, true) => open = Some(refine(prev, s, true)?),
            (Some(start), false) => {
                let end = if s == 86_400 { 86_400 } else { refine(prev, s, false)? };
                if end - start >= i64::from(st.min_pass_s) {
                    windows.push(PassWindow {
                        station_id: st.id.clone(),
                        channel: st.channel,
                        start: day_start.plus_secs(start),
                        end: day_start.plus_secs(end),
                    });
                }
                open = None;
            }
            _ => {}
        }
        prev = s;
        s += COARSE_STEP_S;
    }
    Ok(windows)
}

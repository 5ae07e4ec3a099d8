//! Read-only views of a running mission for the operator endpoint.

use serde::Serialize;
use thiserror::Error;

use super::{decode_prefix, Mission};
use crate::codec::{segment_ends, CodecError};
use crate::link::TransferSession;
use crate::orbitsim::{PassWindow, Zone};
use crate::raster::Image;
use crate::store::{AssetFilter, AssetRecord};
use crate::thermal::{gate, GateDecision};
use crate::time::SimTime;

#[derive(Clone, Debug, Serialize)]
pub struct OrbitView {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_km: f64,
    pub orbit_number: u64,
    pub zone: Zone,
    pub eclipse: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThermalView {
    pub t_nano_c: f64,
    pub t_frame_c: f64,
    pub payload_active: bool,
    pub gate: GateDecision,
    pub op_min_c: f64,
    pub op_max_c: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BudgetView {
    pub day: String,
    pub downlink_used: u64,
    pub downlink_cap: u64,
    pub uplink_used: u64,
    pub uplink_cap: u64,
    pub reserve_used: u64,
    pub reserve_cap: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssetRow {
    #[serde(flatten)]
    pub record: AssetRecord,
    pub ground_bytes: u64,
    pub segment_ends: Vec<usize>,
    pub segments_on_ground: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CatalogView {
    pub used_bytes: u64,
    pub capacity_bytes: u64,
    pub watermark_bytes: u64,
    pub assets: Vec<AssetRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IntegrityView {
    pub files: usize,
    pub scans: u64,
    pub last_scan: Option<SimTime>,
    pub unrecoverable: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelView {
    pub version: u32,
    pub trained_on: u64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StateSnapshot {
    pub time: SimTime,
    pub finished: bool,
    pub orbit: OrbitView,
    pub thermal: ThermalView,
    pub budget: BudgetView,
    pub catalog: CatalogView,
    pub sessions: Vec<TransferSession>,
    pub windows_today: Vec<PassWindow>,
    pub integrity: IntegrityView,
    pub model: ModelView,
    pub events: usize,
}

pub(super) fn build(m: &Mission) -> StateSnapshot {
    let sc = &m.scenario;
    let requested = m.zone == Zone::Nominal;
    let assets = m
        .catalog
        .list_assets(&AssetFilter::default())
        .into_iter()
        .map(|record| {
            let got = m.ground.received(record.asset_id);
            let ends = m.catalog.get(record.asset_id).and_then(|a| segment_ends(&a.stream).ok()).unwrap_or_default();
            let on_ground = ends.iter().filter(|e| **e <= got.len()).count();
            AssetRow { ground_bytes: got.len() as u64, segment_ends: ends, segments_on_ground: on_ground, record }
        })
        .collect();
    StateSnapshot {
        time: m.time,
        finished: m.finished,
        orbit: OrbitView {
            lat_deg: m.position.lat_deg,
            lon_deg: m.position.lon_deg,
            alt_km: m.position.alt_km,
            orbit_number: sc.orbit.orbit_number(m.time).unwrap_or(0),
            zone: m.zone,
            eclipse: m.eclipse,
        },
        thermal: ThermalView {
            t_nano_c: m.thermal.t_nano_c,
            t_frame_c: m.thermal.t_frame_c,
            payload_active: m.active,
            gate: gate(&sc.limits, &m.thermal, requested),
            op_min_c: sc.limits.op_min_c,
            op_max_c: sc.limits.op_max_c,
        },
        budget: BudgetView {
            day: m.budget.day.to_string(),
            downlink_used: m.budget.downlink_used,
            downlink_cap: m.budget.config.downlink_cap_bytes,
            uplink_used: m.budget.uplink_used,
            uplink_cap: m.budget.config.uplink_cap_bytes,
            reserve_used: m.budget.reserve_used,
            reserve_cap: m.budget.config.command_reserve_bytes,
        },
        catalog: CatalogView {
            used_bytes: m.catalog.used(),
            capacity_bytes: m.catalog.quota().capacity_bytes,
            watermark_bytes: m.catalog.quota().watermark_bytes(),
            assets,
        },
        sessions: m.sessions.clone(),
        windows_today: m.windows.clone(),
        integrity: IntegrityView {
            files: m.manifest.len(),
            scans: m.integrity.scans,
            last_scan: m.last_scan,
            unrecoverable: m.manifest.unrecoverable().iter().cloned().collect(),
        },
        model: ModelView {
            version: m.model.version,
            trained_on: m.model.trained_on,
            accuracy: m.accuracy_trace.last().map(|p| p.accuracy),
        },
        events: m.events.len(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preview {
    pub image: Image,
    pub segments_used: usize,
    pub segment_count: usize,
    pub ground_bytes: usize,
}

#[derive(Debug, Error)]
pub enum PreviewError {
    #[error("unknown asset {0}")]
    UnknownAsset(u64),
    #[error("segment count must be at least 1")]
    InvalidSegments,
    #[error("no complete segment on the ground yet")]
    NoData,
    #[error(transparent)]
    Codec(CodecError),
}

pub(super) fn preview(m: &Mission, asset_id: u64, k: usize) -> Result<Preview, PreviewError> {
    if k == 0 {
        return Err(PreviewError::InvalidSegments);
    }
    let got = m.ground.received(asset_id);
    if got.is_empty() {
        return if m.catalog.get(asset_id).is_some() || m.ground_meta.contains_key(&asset_id) {
            Err(PreviewError::NoData)
        } else {
            Err(PreviewError::UnknownAsset(asset_id))
        };
    }
    let (image, segments_used, segment_count) = decode_prefix(got, k)?;
    Ok(Preview { image, segments_used, segment_count, ground_bytes: got.len() })
}

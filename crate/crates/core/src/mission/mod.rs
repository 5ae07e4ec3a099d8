//! Discrete-time mission loop tying the flight modules together.
//!
//! Each fixed step: propagate, eclipse and zone, gate, scheduled captures,
//! integrity scan, thermal sub-steps, fault injection, pass-window
//! transfers, and the daily ground-truth cycle. All randomness derives from
//! the scenario seeds, so a scenario always produces the same event log.

pub mod command;
pub mod events;
pub mod report;
pub mod scenario;
pub mod snapshot;

use std::collections::{BTreeMap, BTreeSet};

use base64::Engine as _;
use chrono::NaiveDate;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ai::{
    accuracy, decode_labels, encode_labels, extract_features, finetune, gt_factory, is_cloudy, join_labels, predict,
    CloudModel, FeatureVector, GtLabel, GtRequest, CLOUDY_FRACTION,
};
use crate::codec::{self, segment_ends};
use crate::faults::Injector;
use crate::fs::SimFs;
use crate::integrity::{Manifest, ScanSchedule};
use crate::link::{
    decode_frames, frame_payload, plan_day, transmit_step, uplink_submit, Frame, FrameType, GroundReceiver, LinkBudget,
    SessionState, TransferSession, TransferTarget, UplinkCharge, UplinkKind,
};
use crate::orbitsim::{
    classify_zone, in_eclipse, orbital_period, pass_windows, propagate, Channel, GeodeticPoint, PassWindow, Zone,
};
use crate::raster::Image;
use crate::scenegen::{
    capture, generate_scene, select_channel, CaptureMeta, MuxState, SceneTruth, SensorKind, SensorSpec,
};
use crate::store::{Catalog, Label, LabelSource, NewAsset};
use crate::thermal::{self, gate, GateDecision, ThermalState};
use crate::time::SimTime;

pub use command::{Command, CommandError, CommandOutcome};
pub use events::{log_hash, log_text, Category, EventRecord};
pub use report::{AccuracyPoint, DayLedger, IntegrityStats, LogSummary, MissionReport, ThermalEnvelope};
pub use scenario::{Scenario, ScenarioError};
pub use snapshot::{Preview, PreviewError, StateSnapshot};

pub const MODEL_FILE: &str = "model/cloud.cmdl";
pub const JOURNAL_FILE: &str = "catalog/journal.log";
pub const TELEMETRY_HEADER: &str = "time,t_nano_c,t_frame_c,active,eclipse";
/// Labelled feature vectors kept onboard for re-training.
pub const LABELED_SET_MAX: usize = 512;

#[derive(Debug, Error)]
pub enum MissionError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("mission setup failed: {0}")]
    Setup(String),
    #[error("runtime failure at {time}: {reason}")]
    Runtime { time: SimTime, reason: String },
}

impl MissionError {
    pub fn is_config(&self) -> bool {
        matches!(self, MissionError::Scenario(_))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for one subsystem.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    tag.bytes().fold(splitmix(master), |h, b| splitmix(h ^ u64::from(b)))
}

/// Synthetic labelled feature set: random scenes at `divisor` scale,
/// labelled cloudy when the true cloud fraction exceeds `threshold`.
pub fn synthetic_feature_set(
    n: usize,
    seed: u64,
    divisor: u32,
    threshold: f64,
    scene: &crate::scenegen::SceneConfig,
) -> Result<Vec<(FeatureVector<f64>, bool)>, crate::scenegen::SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = SensorSpec { scale_divisor: divisor, ..SensorSpec::rgb() };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let s = rng.next_u64();
        let at = GeodeticPoint::surface(rng.random_range(-60.0..60.0), rng.random_range(-180.0..180.0));
        let (img, truth) = generate_scene::<f64>(s, &at, &spec, scene)?;
        out.push((extract_features(&img), truth.cloud_fraction > threshold));
    }
    Ok(out)
}

fn protected_content(master: u64, name: &str, len: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, name));
    let mut v = vec![0u8; len];
    rng.fill_bytes(&mut v);
    v
}

pub struct Mission {
    scenario: Scenario,
    start: SimTime,
    end: SimTime,
    time: SimTime,
    step_ms: i64,
    period_s: f64,
    finished: bool,

    position: GeodeticPoint<f64>,
    zone: Zone,
    eclipse: bool,
    thermal: ThermalState<f64>,
    active: bool,
    last_denial: Option<GateDecision>,

    mux: MuxState,
    catalog: Catalog,
    fs: SimFs,
    manifest: Manifest,
    scans: ScanSchedule,
    last_scan: Option<SimTime>,
    injector: Injector<f64>,
    rule_last_orbit: Vec<Option<u64>>,

    budget: LinkBudget,
    windows: Vec<PassWindow>,
    next_window: usize,
    gt_done: Option<NaiveDate>,
    sessions: Vec<TransferSession>,
    next_session: u64,
    seq_down: u16,
    seq_up: u16,
    journal_text: String,

    ground: GroundReceiver,
    ground_meta: BTreeMap<u64, CaptureMeta>,
    truths: BTreeMap<u64, SceneTruth>,
    gt_requested: BTreeSet<u64>,
    pending_labels: Vec<GtLabel>,
    known_good: BTreeMap<String, Vec<u8>>,

    model: CloudModel<f64>,
    features: BTreeMap<u64, FeatureVector<f64>>,
    labeled: Vec<(FeatureVector<f64>, bool)>,
    eval_set: Vec<(FeatureVector<f64>, bool)>,

    events: Vec<EventRecord>,
    telemetry: Option<String>,
    step_count: u64,
    days: Vec<DayLedger>,
    today: DayLedger,
    envelope: ThermalEnvelope,
    integrity: IntegrityStats,
    accuracy_trace: Vec<AccuracyPoint>,
    captures: u64,
}

fn setup<E: std::fmt::Display>(e: E) -> MissionError {
    MissionError::Setup(e.to_string())
}

impl Mission {
    /// Validates the scenario and builds the initial state; nothing is
    /// stepped.
    pub fn new(scenario: Scenario) -> Result<Self, MissionError> {
        scenario.validate()?;
        let sc = &scenario;
        let start = sc.orbit.epoch;
        let end = start.plus_secs(i64::from(sc.duration_days) * 86_400);
        let period_s = orbital_period(&sc.orbit).map_err(setup)?;

        let mut mux = MuxState::default();
        mux.set_divisor(SensorKind::Rgb, sc.sensors.rgb_divisor);
        mux.set_divisor(SensorKind::Ir, sc.sensors.ir_divisor);

        let mut fs = SimFs::new();
        let mut manifest = Manifest::new();
        let mut known_good = BTreeMap::new();
        for f in &sc.integrity.files {
            let content = protected_content(sc.master_seed, &f.name, f.size_bytes);
            manifest.register(&mut fs, &f.name, &content, sc.integrity.backups).map_err(setup)?;
            known_good.insert(f.name.clone(), content);
        }

        let pre = &sc.ai.pretrain;
        let shifted = synthetic_feature_set(pre.samples, pre.seed, pre.scale_divisor, pre.label_threshold, &sc.scene)
            .map_err(setup)?;
        let mut model = CloudModel::zeros();
        if !shifted.is_empty() {
            model = finetune(&model, &shifted, &pre.train).map_err(setup)?;
        }
        model.version = 1;
        let model_bytes = model.to_bytes().map_err(setup)?;
        manifest.register(&mut fs, MODEL_FILE, &model_bytes, sc.integrity.backups).map_err(setup)?;
        manifest.register(&mut fs, JOURNAL_FILE, b"", sc.integrity.backups).map_err(setup)?;

        let eval_set = synthetic_feature_set(
            sc.ai.eval_samples,
            derive_seed(sc.master_seed, "eval"),
            pre.scale_divisor,
            CLOUDY_FRACTION,
            &sc.scene,
        )
        .map_err(setup)?;

        let see = crate::faults::SeeModel {
            rng_seed: sc.see.rng_seed ^ derive_seed(sc.master_seed, "see"),
            ..sc.see.clone()
        };
        let budget = LinkBudget::new(sc.link.clone(), start.date()).map_err(setup)?;
        let windows = pass_windows(&sc.orbit, &sc.stations, start.date()).map_err(setup)?;
        let next_window = windows.iter().take_while(|w| w.start < start).count();
        let position = propagate(&sc.orbit, start).map_err(setup)?;
        let zone = classify_zone(&sc.zones, &position);
        let eclipse = in_eclipse(&sc.orbit, start).map_err(setup)?;

        let mut m = Mission {
            start,
            end,
            time: start,
            step_ms: (sc.step_s * 1000.0).round() as i64,
            period_s,
            finished: false,
            position,
            zone,
            eclipse,
            thermal: ThermalState::uniform(sc.initial_temp_c, start),
            active: false,
            last_denial: None,
            mux,
            catalog: Catalog::new(sc.quota).map_err(setup)?,
            fs,
            manifest,
            scans: ScanSchedule::default(),
            last_scan: None,
            injector: Injector::new(see),
            rule_last_orbit: vec![None; sc.captures.len()],
            budget,
            windows,
            next_window,
            gt_done: None,
            sessions: Vec::new(),
            next_session: 1,
            seq_down: 0,
            seq_up: 0,
            journal_text: String::new(),
            ground: GroundReceiver::new(),
            ground_meta: BTreeMap::new(),
            truths: BTreeMap::new(),
            gt_requested: BTreeSet::new(),
            pending_labels: Vec::new(),
            known_good,
            model,
            features: BTreeMap::new(),
            labeled: Vec::new(),
            eval_set,
            events: Vec::new(),
            telemetry: None,
            step_count: 0,
            days: Vec::new(),
            today: DayLedger { date: start.date().to_string(), ..DayLedger::default() },
            envelope: ThermalEnvelope::default(),
            integrity: IntegrityStats::default(),
            accuracy_trace: Vec::new(),
            captures: 0,
            scenario,
        };
        m.record_accuracy(start);
        Ok(m)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn time(&self) -> SimTime {
        self.time
    }

    pub fn start(&self) -> SimTime {
        self.start
    }

    pub fn end(&self) -> SimTime {
        self.end
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn ground(&self) -> &GroundReceiver {
        &self.ground
    }

    pub fn budget(&self) -> &LinkBudget {
        &self.budget
    }

    pub fn sessions(&self) -> &[TransferSession] {
        &self.sessions
    }

    pub fn model(&self) -> &CloudModel<f64> {
        &self.model
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn fs(&self) -> &SimFs {
        &self.fs
    }

    /// Mutable file store for demo corruption; the integrity monitor sees
    /// the result at its next scan.
    pub fn fs_mut(&mut self) -> &mut SimFs {
        &mut self.fs
    }

    pub fn thermal_state(&self) -> &ThermalState<f64> {
        &self.thermal
    }

    pub fn windows_today(&self) -> &[PassWindow] {
        &self.windows
    }

    /// Ground-held reference copy of a protected file.
    pub fn known_good(&self, name: &str) -> Option<&[u8]> {
        self.known_good.get(name).map(Vec::as_slice)
    }

    /// Starts collecting one CSV telemetry row per `telemetry_every` steps.
    pub fn record_telemetry(&mut self) {
        if self.telemetry.is_none() {
            self.telemetry = Some(format!("{TELEMETRY_HEADER}\n"));
        }
    }

    pub fn telemetry_csv(&self) -> Option<&str> {
        self.telemetry.as_deref()
    }

    pub fn manifest_text(&self) -> String {
        self.manifest.to_text()
    }

    fn emit(&mut self, e: EventRecord) {
        self.events.push(e);
    }

    fn ev(&self, c: Category) -> EventRecord {
        EventRecord::new(self.time, c)
    }

    fn runtime<E: std::fmt::Display>(&self, e: E) -> MissionError {
        MissionError::Runtime { time: self.time, reason: e.to_string() }
    }

    /// Runs to the end of the scenario and returns the report.
    pub fn run(&mut self) -> Result<MissionReport, MissionError> {
        while !self.finished {
            self.step()?;
        }
        Ok(self.report())
    }

    /// Steps until simulated time reaches `t` or the mission ends.
    pub fn run_until(&mut self, t: SimTime) -> Result<(), MissionError> {
        while !self.finished && self.time < t {
            self.step()?;
        }
        Ok(())
    }

    /// Advances one fixed step.
    pub fn step(&mut self) -> Result<(), MissionError> {
        if self.finished {
            return Ok(());
        }
        let t = self.time;
        let dt = self.step_ms as f64 / 1000.0;
        let t_next = SimTime(t.0 + self.step_ms);
        if t.date() != self.budget.day {
            self.roll_day(t.date())?;
        }

        self.position = propagate(&self.scenario.orbit, t).map_err(|e| self.runtime(e))?;
        self.zone = classify_zone(&self.scenario.zones, &self.position);
        self.eclipse = in_eclipse(&self.scenario.orbit, t).map_err(|e| self.runtime(e))?;
        let requested = self.zone == Zone::Nominal;
        let decision = gate(&self.scenario.limits, &self.thermal, requested);
        let active = requested && decision == GateDecision::Allow;
        if requested && decision != GateDecision::Allow {
            if self.last_denial != Some(decision) {
                let e = self
                    .ev(Category::GateDeny)
                    .with("reason", format!("{decision:?}").to_lowercase())
                    .with("t_nano_c", format!("{:.2}", self.thermal.t_nano_c))
                    .with("zone", self.zone);
                self.emit(e);
            }
            self.last_denial = Some(decision);
        } else {
            self.last_denial = None;
        }
        if active != self.active {
            let e = self
                .ev(Category::Payload)
                .with("state", if active { "on" } else { "off" })
                .with("zone", self.zone)
                .with("t_nano_c", format!("{:.2}", self.thermal.t_nano_c));
            self.emit(e);
            self.active = active;
        }
        self.observe_thermal(active);

        if active {
            self.scheduled_captures(t)?;
            if self.scans.due(t, true) {
                self.scan(t);
            }
        }

        let sub = dt / f64::from(self.scenario.thermal_substeps);
        for _ in 0..self.scenario.thermal_substeps {
            self.thermal = thermal::step(&self.scenario.thermal, &self.thermal, sub, active, self.eclipse)
                .map_err(|e| self.runtime(e))?;
        }
        self.thermal.time = t_next;

        let flips = self.injector.inject(&mut self.fs, t, dt, self.zone, self.period_s).map_err(|e| self.runtime(e))?;
        for f in flips {
            self.integrity.faults_injected += 1;
            self.today.faults += 1;
            let e = self
                .ev(Category::Fault)
                .with("path", &f.file_path)
                .with("offset", f.byte_offset)
                .with("bit", f.bit_index)
                .with("zone", f.zone);
            self.emit(e);
        }

        while self.next_window < self.windows.len() && self.windows[self.next_window].start < t_next {
            let w = self.windows[self.next_window].clone();
            self.next_window += 1;
            self.run_window(&w)?;
        }
        self.maybe_ground_cycle(t_next);
        self.sync_journal()?;

        self.step_count += 1;
        self.time = t_next;
        if self.time >= self.end {
            self.close_day();
            self.finished = true;
        }
        Ok(())
    }

    fn observe_thermal(&mut self, active: bool) {
        let s = self.thermal;
        let env = &mut self.envelope;
        env.total_steps += 1;
        env.nano_min_c = env.nano_min_c.min(s.t_nano_c);
        env.nano_max_c = env.nano_max_c.max(s.t_nano_c);
        env.frame_min_c = env.frame_min_c.min(s.t_frame_c);
        env.frame_max_c = env.frame_max_c.max(s.t_frame_c);
        if active {
            env.active_steps += 1;
            env.nano_max_active_c = env.nano_max_active_c.max(s.t_nano_c);
            let lim = &self.scenario.limits;
            if s.t_nano_c < lim.op_min_c || s.t_nano_c > lim.op_max_c {
                env.active_limit_violations += 1;
            }
        }
        if let Some(csv) = &mut self.telemetry {
            if self.step_count.is_multiple_of(u64::from(self.scenario.telemetry_every)) {
                csv.push_str(&format!(
                    "{},{:.4},{:.4},{},{}\n",
                    self.time.iso8601(),
                    s.t_nano_c,
                    s.t_frame_c,
                    u8::from(active),
                    u8::from(self.eclipse)
                ));
            }
        }
    }

    fn roll_day(&mut self, day: NaiveDate) -> Result<(), MissionError> {
        self.close_day();
        self.budget.roll_to(day);
        let catalog = &self.catalog;
        self.sessions.retain(|s| s.is_schedulable() || catalog.get(s.asset_id).is_some());
        self.today = DayLedger { date: day.to_string(), ..DayLedger::default() };
        self.windows = pass_windows(&self.scenario.orbit, &self.scenario.stations, day).map_err(|e| self.runtime(e))?;
        self.next_window = 0;
        Ok(())
    }

    fn close_day(&mut self) {
        let mut d = std::mem::take(&mut self.today);
        d.downlink_used = self.budget.downlink_used;
        d.uplink_used = self.budget.uplink_used;
        d.reserve_used = self.budget.reserve_used;
        let e = self
            .ev(Category::Day)
            .with("date", &d.date)
            .with("downlink_used", d.downlink_used)
            .with("uplink_used", d.uplink_used)
            .with("reserve_used", d.reserve_used)
            .with("captures", d.captures)
            .with("thumbnails", d.thumbnails_completed);
        self.emit(e);
        self.days.push(d);
    }

    fn scheduled_captures(&mut self, t: SimTime) -> Result<(), MissionError> {
        let orbit = &self.scenario.orbit;
        let n = orbit.orbit_number(t).map_err(|e| self.runtime(e))?;
        let phase = orbit.phase(t).map_err(|e| self.runtime(e))?;
        for i in 0..self.scenario.captures.len() {
            let rule = &self.scenario.captures[i];
            if n % u64::from(rule.every_n_orbits) != 0 || self.rule_last_orbit[i] == Some(n) || phase < rule.phase {
                continue;
            }
            self.rule_last_orbit[i] = Some(n);
            let channel = rule.channel;
            if let Err(reason) = self.capture_on(channel, "plan") {
                let e = self.ev(Category::Error).with("op", "capture").with("channel", channel).with("reason", reason);
                self.emit(e);
            }
        }
        Ok(())
    }

    /// Captures, encodes, labels and stores one frame at the current time.
    fn capture_on(&mut self, channel: u8, origin: &str) -> Result<u64, String> {
        let t = self.time;
        let position = propagate(&self.scenario.orbit, t).map_err(|e| e.to_string())?;
        let zone = classify_zone(&self.scenario.zones, &position);
        let decision = gate(&self.scenario.limits, &self.thermal, zone == Zone::Nominal);
        let mux = select_channel(&self.mux, channel).map_err(|e| e.to_string())?;
        let (meta, image, truth) = capture::<f64>(
            &mux,
            t,
            &self.scenario.orbit,
            &self.scenario.zones,
            decision,
            self.scenario.master_seed,
            &self.scenario.scene,
        )
        .map_err(|e| e.to_string())?;
        self.mux = mux;
        let codec = &self.scenario.codec;
        let stream = codec::encode(&image, codec.quality, codec.lossless, &codec.plan).map_err(|e| e.to_string())?;
        let raw_bytes = image.raw_size();
        let feats = (meta.kind == SensorKind::Rgb).then(|| extract_features::<f64>(&image));
        let label = match &feats {
            Some(f) => {
                let p = predict(&self.model, f).map_err(|e| e.to_string())?;
                Some(Label { cloudy: is_cloudy(p), probability: p })
            }
            None => None,
        };
        let priority = self.priority_for(label.as_ref());
        let stream_len = stream.len();
        let new = NewAsset {
            meta: meta.clone(),
            stream,
            priority,
            label,
            label_source: if label.is_some() { LabelSource::OnboardModel } else { LabelSource::None },
        };
        let id = match self.catalog.put(new.clone()) {
            Ok(id) => id,
            Err(_) => {
                self.evict();
                self.catalog.put(new).map_err(|e| e.to_string())?
            }
        };
        self.captures += 1;
        self.today.captures += 1;
        if let Some(f) = feats {
            self.features.insert(id, f);
        }
        self.truths.insert(
            meta.seed,
            SceneTruth { cloud_mask: Vec::new(), cloud_fraction: truth.cloud_fraction, seed: meta.seed },
        );
        let mut e = self
            .ev(Category::Capture)
            .with("asset", id)
            .with("origin", origin)
            .with("channel", channel)
            .with("kind", meta.kind.as_str())
            .with("zone", zone)
            .with("gate", format!("{decision:?}").to_lowercase())
            .with("lat", format!("{:.3}", meta.lat_deg))
            .with("lon", format!("{:.3}", meta.lon_deg))
            .with("seed", meta.seed)
            .with("raw_bytes", raw_bytes)
            .with("bytes", stream_len);
        if let Some(l) = label {
            e = e.with("cloudy", l.cloudy).with("p", format!("{:.4}", l.probability));
        }
        self.emit(e);
        if let Some(l) = label {
            let e = self
                .ev(Category::Label)
                .with("asset", id)
                .with("source", "onboard_model")
                .with("cloudy", l.cloudy)
                .with("p", format!("{:.4}", l.probability));
            self.emit(e);
        }
        let target = self.scenario.transfer.default_target;
        let pr = self.session_priority(target, priority);
        self.open_session(id, target, pr);
        if self.catalog.over_watermark() {
            self.evict();
        }
        Ok(id)
    }

    fn priority_for(&self, label: Option<&Label>) -> i32 {
        let p = &self.scenario.transfer;
        match label {
            Some(l) if l.cloudy => p.cloudy_priority,
            Some(_) => p.clear_priority,
            None => p.unlabeled_priority,
        }
    }

    fn session_priority(&self, target: TransferTarget, asset_priority: i32) -> i32 {
        if target == TransferTarget::Thumbnail {
            self.scenario.transfer.thumbnail_priority
        } else {
            asset_priority
        }
    }

    fn evict(&mut self) {
        for id in self.catalog.auto_evict() {
            self.forget(id, "watermark");
        }
    }

    /// Onboard bookkeeping after an asset leaves the catalog.
    fn forget(&mut self, id: u64, reason: &str) {
        self.features.remove(&id);
        for s in self.sessions.iter_mut().filter(|s| s.asset_id == id) {
            s.abort();
        }
        self.today.evictions += 1;
        let e = self.ev(Category::Evict).with("asset", id).with("reason", reason).with("used", self.catalog.used());
        self.emit(e);
    }

    fn thumbnail_on_ground(&self, asset_id: u64) -> bool {
        self.catalog.get(asset_id).is_some_and(|a| {
            let ends = segment_ends(&a.stream).unwrap_or_default();
            a.record.downlinked_bytes >= TransferTarget::Thumbnail.boundary(&ends, a.stream.len())
        })
    }

    fn has_live_session(&self, asset_id: u64) -> bool {
        self.sessions.iter().any(|s| s.asset_id == asset_id && s.is_schedulable())
    }

    /// Continues a thumbnail-complete asset to the full stream when policy
    /// and label allow.
    fn follow_up(&mut self, asset_id: u64) {
        let policy = &self.scenario.transfer;
        let Some(a) = self.catalog.get(asset_id) else { return };
        let cloudy = a.record.label.is_some_and(|l| l.cloudy);
        if !policy.full_after_thumbnail || cloudy || a.record.fully_downlinked() || self.has_live_session(asset_id) {
            return;
        }
        let pr = a.record.priority;
        self.open_session(asset_id, TransferTarget::Full, pr);
    }

    /// Opens a session for `target`, replacing any live one for the asset.
    fn open_session(&mut self, asset_id: u64, target: TransferTarget, priority: i32) -> Option<u64> {
        let asset = self.catalog.get(asset_id)?;
        let ends = segment_ends(&asset.stream).unwrap_or_default();
        let end = target.boundary(&ends, asset.stream.len());
        let start = asset.record.downlinked_bytes;
        for s in self.sessions.iter_mut().filter(|s| s.asset_id == asset_id) {
            s.abort();
        }
        let id = self.next_session;
        self.next_session += 1;
        self.sessions.push(TransferSession::new(id, asset_id, target, end, start, priority));
        Some(id)
    }

    fn scan(&mut self, t: SimTime) {
        let report = self.manifest.scan_once(&mut self.fs, t);
        self.integrity.scans += 1;
        self.today.scans += 1;
        self.integrity.copies_corrupted += report.copies_corrupted as u64;
        self.integrity.copies_restored += report.copies_restored as u64;
        self.integrity.unrecoverable_reports += report.unrecoverable.len() as u64;
        let e = self
            .ev(Category::Scan)
            .with("files", report.files_checked)
            .with("corrupted", report.copies_corrupted)
            .with("restored", report.copies_restored)
            .with("unrecoverable", report.unrecoverable.len());
        self.emit(e);
        for name in &report.unrecoverable {
            let e =
                self.ev(Category::Error).with("op", "scan").with("file", name).with("reason", "all copies corrupted");
            self.emit(e);
        }
        self.last_scan = Some(t);
    }

    fn run_window(&mut self, w: &PassWindow) -> Result<(), MissionError> {
        if w.channel == Channel::Uhf && !self.pending_labels.is_empty() {
            let _ = self.deliver_labels();
        }
        let plan = plan_day(&self.budget, std::slice::from_ref(w), &self.sessions);
        for g in plan.grants {
            let Some(si) = self.sessions.iter().position(|s| s.session_id == g.session_id) else { continue };
            let Some(asset) = self.catalog.get(g.asset_id) else {
                self.sessions[si].abort();
                continue;
            };
            let before = self.sessions[si].next_offset;
            let (frames, after) = transmit_step(&self.sessions[si], g.bytes, &asset.stream, &mut self.seq_down);
            let sent = after.next_offset - before;
            if !self.budget.charge_downlink(sent) {
                let e =
                    self.ev(Category::Error).with("op", "grant").with("asset", g.asset_id).with("reason", "daily cap");
                self.emit(e);
                break;
            }
            let meta = asset.record.meta.clone();
            for f in &frames {
                let wire = f.encode().map_err(|e| self.runtime(e))?;
                self.ground.accept_bytes(&wire);
                let offset = crate::link::parse_chunk(&f.payload).map_or(0, |(_, o, _)| o);
                let e = self
                    .ev(Category::Chunk)
                    .with("asset", g.asset_id)
                    .with("seq", f.sequence)
                    .with("offset", offset)
                    .with("bytes", f.payload.len() - crate::link::CHUNK_HEADER_LEN)
                    .with("wire", wire.len());
                self.emit(e);
            }
            self.ground_meta.entry(g.asset_id).or_insert(meta);
            self.catalog.record_downlink(g.asset_id, after.next_offset).map_err(|e| self.runtime(e))?;
            self.today.grants += 1;
            let thumb_done = after.state == SessionState::Complete && after.target == TransferTarget::Thumbnail;
            let e = self
                .ev(Category::Grant)
                .with("station", &w.station_id)
                .with("channel", w.channel.as_str())
                .with("session", g.session_id)
                .with("asset", g.asset_id)
                .with("offset", before)
                .with("bytes", sent)
                .with("state", format!("{:?}", after.state).to_lowercase());
            self.emit(e);
            self.sessions[si] = after;
            if thumb_done {
                self.today.thumbnails_completed += 1;
                self.follow_up(g.asset_id);
            }
        }
        Ok(())
    }

    fn maybe_ground_cycle(&mut self, t_next: SimTime) {
        let cadence = self.scenario.ai.gt_cadence_days;
        let day = self.budget.day;
        if cadence == 0 || self.gt_done == Some(day) || self.windows.is_empty() {
            return;
        }
        let day_index = (SimTime::start_of(day).secs_since(SimTime::start_of(self.start.date())) / 86_400.0) as u32;
        if !day_index.is_multiple_of(cadence) {
            return;
        }
        let last_end = self.windows.iter().map(|w| w.end).max().expect("non-empty");
        if t_next >= last_end {
            self.gt_done = Some(day);
            self.ground_truth_cycle();
        }
    }

    /// Ground side: labels every downlinked RGB capture not yet labelled and
    /// queues the batch for the next uplink.
    fn ground_truth_cycle(&mut self) -> usize {
        let requests: Vec<GtRequest> = self
            .ground_meta
            .iter()
            .filter(|(id, m)| m.kind == SensorKind::Rgb && !self.gt_requested.contains(id))
            .map(|(id, m)| GtRequest { asset_id: *id, seed: m.seed })
            .collect();
        if requests.is_empty() {
            return 0;
        }
        let seed = derive_seed(self.scenario.master_seed, &format!("gt{}", self.time.0));
        let (labels, _missing) = gt_factory(&requests, &self.truths, self.scenario.ai.gt_noise_rate, seed);
        self.gt_requested.extend(requests.iter().map(|r| r.asset_id));
        let n = labels.len();
        self.pending_labels.extend(labels);
        n
    }

    /// Uplinks the pending label batch and fine-tunes on it. Returns the
    /// number of labels applied, or the budget error.
    fn deliver_labels(&mut self) -> Result<usize, crate::link::LinkError> {
        let payload = encode_labels(&self.pending_labels);
        let mut seq = self.seq_up;
        let frames = frame_payload(FrameType::Command, &mut seq, &payload);
        let size: u64 = frames.iter().map(|f| f.encoded_len() as u64).sum();
        let charge = match uplink_submit(&mut self.budget, UplinkKind::LabelBatch, size) {
            Ok(c) => c,
            Err(err) => {
                let e = self.ev(Category::Reject).with("kind", "label_batch").with("bytes", size).with("reason", &err);
                self.emit(e);
                return Err(err);
            }
        };
        self.seq_up = seq;
        self.log_uplink("label_batch", size, charge);
        let received = match reassemble(&frames) {
            Ok(b) => b,
            Err(reason) => {
                let e = self.ev(Category::Error).with("op", "label_uplink").with("reason", reason);
                self.emit(e);
                return Ok(0);
            }
        };
        self.pending_labels.clear();
        let labels = match decode_labels(&received) {
            Ok(l) => l,
            Err(err) => {
                let e = self.ev(Category::Error).with("op", "label_uplink").with("reason", err);
                self.emit(e);
                return Ok(0);
            }
        };
        let (batch, unknown) = join_labels(&labels, &self.features);
        for id in unknown {
            let e =
                self.ev(Category::Error).with("op", "label").with("asset", id).with("reason", "no onboard features");
            self.emit(e);
        }
        for l in &labels {
            if !self.features.contains_key(&l.asset_id) {
                continue;
            }
            let label = Label { cloudy: l.cloudy, probability: l.confidence };
            if self.catalog.set_label(l.asset_id, label, LabelSource::GtFactory).is_err() {
                continue;
            }
            let pr = self.priority_for(Some(&label));
            let _ = self.catalog.set_priority(l.asset_id, pr);
            for s in
                self.sessions.iter_mut().filter(|s| s.asset_id == l.asset_id && s.target != TransferTarget::Thumbnail)
            {
                s.priority = pr;
            }
            let src = format!("{:?}", l.source);
            let e = self
                .ev(Category::Label)
                .with("asset", l.asset_id)
                .with("source", "gt_factory")
                .with("origin", src.to_lowercase())
                .with("cloudy", l.cloudy)
                .with("confidence", format!("{:.3}", l.confidence));
            self.emit(e);
            if !self.thumbnail_on_ground(l.asset_id) {
                continue;
            }
            if l.cloudy && self.scenario.transfer.discard_ground_cloudy {
                if self.catalog.delete(l.asset_id).is_ok() {
                    self.forget(l.asset_id, "ground_cloudy");
                }
            } else if l.cloudy {
                for s in
                    self.sessions.iter_mut().filter(|s| s.asset_id == l.asset_id && s.target == TransferTarget::Full)
                {
                    s.abort();
                }
            } else {
                self.follow_up(l.asset_id);
            }
        }
        if batch.is_empty() {
            return Ok(0);
        }
        let applied = batch.len();
        self.labeled.extend(batch);
        if self.labeled.len() > LABELED_SET_MAX {
            let drop = self.labeled.len() - LABELED_SET_MAX;
            self.labeled.drain(..drop);
        }
        self.retrain();
        Ok(applied)
    }

    fn retrain(&mut self) {
        let mut cfg = self.scenario.ai.train.clone();
        cfg.seed ^= u64::from(self.model.version);
        match finetune(&self.model, &self.labeled, &cfg) {
            Ok(m) => {
                self.model = m;
                let bytes = self.model.to_bytes().expect("model fits its budget");
                if let Err(err) = self.manifest.reregister(&mut self.fs, MODEL_FILE, &bytes) {
                    let e = self.ev(Category::Error).with("op", "model_write").with("reason", err);
                    self.emit(e);
                }
                let acc = self.record_accuracy(self.time);
                let e = self
                    .ev(Category::ModelUpdate)
                    .with("version", self.model.version)
                    .with("trained_on", self.model.trained_on)
                    .with("set", self.labeled.len())
                    .with("accuracy", format!("{acc:.4}"));
                self.emit(e);
            }
            Err(err) => {
                let e = self.ev(Category::Error).with("op", "finetune").with("reason", err);
                self.emit(e);
            }
        }
    }

    fn record_accuracy(&mut self, t: SimTime) -> f64 {
        let acc = accuracy(&self.model, &self.eval_set).unwrap_or(0.0);
        self.accuracy_trace.push(AccuracyPoint {
            time: t,
            model_version: self.model.version,
            trained_on: self.model.trained_on,
            accuracy: acc,
        });
        acc
    }

    fn log_uplink(&mut self, kind: &str, bytes: u64, charge: UplinkCharge) {
        let e = self
            .ev(Category::Uplink)
            .with("kind", kind)
            .with("bytes", bytes)
            .with("from_cap", charge.from_cap)
            .with("from_reserve", charge.from_reserve);
        self.emit(e);
    }

    /// Appends new catalog journal records to the protected journal file.
    fn sync_journal(&mut self) -> Result<(), MissionError> {
        let records = self.catalog.drain_journal();
        if records.is_empty() {
            return Ok(());
        }
        for r in records {
            self.journal_text.push_str(&r.to_line());
            self.journal_text.push('\n');
        }
        if self.journal_text.len() > self.scenario.integrity.journal_compact_bytes {
            self.journal_text = self.catalog.compact_journal();
        }
        self.manifest
            .reregister(&mut self.fs, JOURNAL_FILE, self.journal_text.as_bytes())
            .map_err(|e| self.runtime(e))?;
        Ok(())
    }

    /// Frames a command, charges it to the uplink budget and executes it
    /// onboard. Budget failures send nothing; onboard refusals are charged.
    pub fn submit(&mut self, cmd: &Command) -> Result<CommandOutcome, CommandError> {
        if self.finished {
            return Err(CommandError::Ended);
        }
        let wire = cmd.to_wire();
        let mut seq = self.seq_up;
        let frames = frame_payload(FrameType::Command, &mut seq, &wire);
        let size: u64 = frames.iter().map(|f| f.encoded_len() as u64).sum();
        let charge = match uplink_submit(&mut self.budget, cmd.uplink_kind(), size) {
            Ok(c) => c,
            Err(err) => {
                let e = self.ev(Category::Reject).with("command", cmd.name()).with("bytes", size).with("reason", &err);
                self.emit(e);
                return Err(CommandError::Budget(err));
            }
        };
        self.seq_up = seq;
        self.log_uplink(cmd.name(), size, charge);
        let onboard = reassemble(&frames).and_then(|b| {
            Command::from_json(std::str::from_utf8(&b).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
        });
        let result = match onboard {
            Ok(c) => self.execute(&c),
            Err(reason) => Err(CommandError::Rejected(reason)),
        };
        let _ = self.sync_journal();
        match result {
            Ok(detail) => {
                let ack_sequence = self.seq_down;
                self.seq_down = self.seq_down.wrapping_add(1);
                let e = self
                    .ev(Category::Ack)
                    .with("command", cmd.name())
                    .with("seq", ack_sequence)
                    .with("detail", &detail);
                self.emit(e);
                Ok(CommandOutcome { command: cmd.name().into(), ack_sequence, framed_bytes: size, charge, detail })
            }
            Err(err) => {
                let e = self.ev(Category::Reject).with("command", cmd.name()).with("bytes", size).with("reason", &err);
                self.emit(e);
                Err(err)
            }
        }
    }

    fn execute(&mut self, cmd: &Command) -> Result<serde_json::Value, CommandError> {
        use serde_json::json;
        let rejected = |s: String| CommandError::Rejected(s);
        match cmd {
            Command::Capture { channel } => {
                let id = self.capture_on(*channel, "command").map_err(rejected)?;
                Ok(json!({ "asset_id": id }))
            }
            Command::SetPriority { asset_id, priority } => {
                self.catalog.set_priority(*asset_id, *priority).map_err(|_| CommandError::UnknownAsset(*asset_id))?;
                for s in self.sessions.iter_mut().filter(|s| s.asset_id == *asset_id) {
                    s.priority = *priority;
                }
                Ok(json!({ "asset_id": asset_id, "priority": priority }))
            }
            Command::StartTransfer { asset_id, target } => {
                let pr = self.catalog.get(*asset_id).ok_or(CommandError::UnknownAsset(*asset_id))?.record.priority;
                let id = self.open_session(*asset_id, *target, pr).ok_or(CommandError::UnknownAsset(*asset_id))?;
                let s = self.sessions.last().expect("just opened");
                Ok(
                    json!({ "session_id": id, "next_offset": s.next_offset, "target_end": s.target_end, "state": s.state }),
                )
            }
            Command::AbortTransfer { asset_id } => {
                if self.catalog.get(*asset_id).is_none() {
                    return Err(CommandError::UnknownAsset(*asset_id));
                }
                let mut aborted = Vec::new();
                for s in self.sessions.iter_mut().filter(|s| s.asset_id == *asset_id && s.is_schedulable()) {
                    s.abort();
                    aborted.push(s.session_id);
                }
                Ok(json!({ "aborted_sessions": aborted }))
            }
            Command::DeleteAsset { asset_id } => {
                let gone = self.catalog.delete(*asset_id).map_err(|_| CommandError::UnknownAsset(*asset_id))?;
                self.features.remove(asset_id);
                for s in self.sessions.iter_mut().filter(|s| s.asset_id == *asset_id) {
                    s.abort();
                }
                Ok(json!({ "asset_id": asset_id, "freed_bytes": gone.record.stream_length }))
            }
            Command::RepairUpload { logical_name, content_base64 } => {
                let content = base64::engine::general_purpose::STANDARD
                    .decode(content_base64)
                    .map_err(|e| rejected(format!("bad base64: {e}")))?;
                self.manifest
                    .repair_from_uplink(&mut self.fs, logical_name, &content)
                    .map_err(|e| rejected(e.to_string()))?;
                self.integrity.repairs_uploaded += 1;
                Ok(json!({ "file": logical_name, "bytes": content.len() }))
            }
            Command::SetZonePolicy { policy } => {
                policy.validate().map_err(|e| rejected(e.to_string()))?;
                self.scenario.zones = policy.clone();
                Ok(json!({ "polar_lat_deg": policy.polar_lat_deg, "saa_vertices": policy.saa_polygon.len() }))
            }
            Command::TriggerFinetune => {
                self.ground_truth_cycle();
                if self.pending_labels.is_empty() {
                    return Err(rejected("no downlinked captures awaiting labels".into()));
                }
                let applied = self.deliver_labels().map_err(CommandError::Budget)?;
                Ok(json!({ "labels_applied": applied, "model_version": self.model.version }))
            }
        }
    }

    pub fn report(&self) -> MissionReport {
        let mut days = self.days.clone();
        if !self.finished {
            let mut d = self.today.clone();
            d.downlink_used = self.budget.downlink_used;
            d.uplink_used = self.budget.uplink_used;
            d.reserve_used = self.budget.reserve_used;
            days.push(d);
        }
        let summary = LogSummary::from_events(&self.events);
        let mut integrity = self.integrity.clone();
        integrity.unrecoverable_now = self.manifest.unrecoverable().iter().cloned().collect();
        MissionReport {
            scenario: self.scenario.name.clone(),
            master_seed: self.scenario.master_seed,
            start: self.start,
            end: self.time,
            captures: self.captures,
            days,
            thermal: self.envelope.clone(),
            integrity,
            accuracy_trace: self.accuracy_trace.clone(),
            catalog_assets: self.catalog.len(),
            catalog_used_bytes: self.catalog.used(),
            ground_bytes_received: self.ground.assets().map(|(_, b)| b.len() as u64).sum(),
            event_counts: summary.counts,
            event_log_sha256: log_hash(&self.events),
        }
    }

    pub fn snapshot(&self) -> StateSnapshot {
        snapshot::build(self)
    }

    /// Decodes the ground copy of an asset from at most `k` complete
    /// segments.
    pub fn preview(&self, asset_id: u64, k: usize) -> Result<Preview, PreviewError> {
        snapshot::preview(self, asset_id, k)
    }

    /// Corrupts one random bit of `path` (all copies when `all_copies`).
    pub fn inject_manual(&mut self, path: &str, all_copies: bool, seed: u64) -> Vec<crate::faults::CorruptionEvent> {
        let copies: Vec<String> = match (all_copies, self.manifest.get(path)) {
            (true, Some(entry)) => entry.copies.clone(),
            _ => vec![path.to_string()],
        };
        let mut inj = Injector::new(crate::faults::SeeModel { rng_seed: seed, ..self.scenario.see.clone() });
        let mut out = Vec::new();
        for c in copies {
            if let Some(f) = inj.flip_in(&mut self.fs, &c, self.time, self.zone) {
                self.integrity.faults_injected += 1;
                let e = self
                    .ev(Category::Fault)
                    .with("path", &f.file_path)
                    .with("offset", f.byte_offset)
                    .with("bit", f.bit_index)
                    .with("zone", f.zone)
                    .with("origin", "manual");
                self.emit(e);
                out.push(f);
            }
        }
        out
    }

    /// Runs an integrity scan now, regardless of cadence.
    pub fn scan_now(&mut self) {
        self.scan(self.time);
    }
}

fn reassemble(frames: &[Frame]) -> Result<Vec<u8>, String> {
    let mut wire = Vec::new();
    for f in frames {
        wire.extend(f.encode().map_err(|e| e.to_string())?);
    }
    let decoded = decode_frames(&wire).map_err(|e| e.to_string())?;
    Ok(decoded.into_iter().flat_map(|f| f.payload).collect())
}

/// Decoded ground copy helper shared with the snapshot module.
fn decode_prefix(received: &[u8], k: usize) -> Result<(Image, usize, usize), PreviewError> {
    let ends = segment_ends(received).map_err(|_| PreviewError::NoData)?;
    let complete = ends.iter().filter(|e| **e <= received.len()).count();
    if complete == 0 {
        return Err(PreviewError::NoData);
    }
    let used = k.min(complete);
    let d = codec::decode(&received[..ends[used - 1]]).map_err(PreviewError::Codec)?;
    Ok((d.image, d.segments_used, ends.len()))
}

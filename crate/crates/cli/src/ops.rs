//! Batch subcommands. Each returns the text destined for stdout.

use std::fs;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use nanosat_core::codec::{self, segment_ends, CodecError, SegmentPlan};
use nanosat_core::mission::{log_text, Command, LogSummary, Mission, Scenario};
use nanosat_core::orbitsim::pass_windows;
use serde::Serialize;

use crate::args::ScenarioArgs;
use crate::raster_io::{load_any, to_png};
use crate::CliError;

pub fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let mut sc = match &args.scenario {
        Some(p) => Scenario::load(p)?,
        None => Scenario::default(),
    };
    if let Some(seed) = args.seed {
        sc.master_seed = seed;
    }
    if let Some(days) = args.days {
        sc.duration_days = days;
    }
    sc.validate()?;
    Ok(sc)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn run(args: &ScenarioArgs, out: Option<&Path>, json: bool) -> Result<String, CliError> {
    let sc = load_scenario(args)?;
    let mut m = Mission::new(sc.clone())?;
    if out.is_some() {
        m.record_telemetry();
    }
    let report = m.run()?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write(dir.join("events.log"), log_text(m.events()))?;
        write(dir.join("telemetry.csv"), m.telemetry_csv().unwrap_or_default())?;
        write(dir.join("report.json"), report.to_json())?;
        write(dir.join("report.txt"), report.to_text())?;
        write(dir.join("manifest.txt"), m.manifest_text())?;
        write(dir.join("scenario.toml"), sc.to_toml())?;
    }
    Ok(if json { report.to_json() } else { report.to_text() })
}

pub fn report(log: &Path, out: Option<&Path>, json: bool) -> Result<String, CliError> {
    let path = if log.is_dir() { log.join("events.log") } else { log.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let summary = LogSummary::from_text(&text);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write(dir.join("summary.json"), summary.to_json())?;
        write(dir.join("summary.txt"), summary.to_text())?;
    }
    Ok(if json { summary.to_json() } else { summary.to_text() })
}

#[derive(Serialize)]
struct WindowRow {
    station_id: String,
    channel: &'static str,
    start: String,
    end: String,
    duration_s: i64,
    capacity_bytes: u64,
}

pub fn passgen(args: &ScenarioArgs, json: bool) -> Result<String, CliError> {
    let sc = load_scenario(args)?;
    let first = sc.orbit.epoch.date();
    let mut rows = Vec::new();
    for day in first.iter_days().take(sc.duration_days as usize) {
        for w in pass_windows(&sc.orbit, &sc.stations, day).map_err(CliError::runtime)? {
            rows.push(WindowRow {
                station_id: w.station_id.clone(),
                channel: w.channel.as_str(),
                start: w.start.iso8601(),
                end: w.end.iso8601(),
                duration_s: w.duration_s(),
                capacity_bytes: sc.link.window_capacity(&w),
            });
        }
    }
    if json {
        return serde_json::to_string_pretty(&rows).map_err(CliError::runtime);
    }
    let mut s = String::from("station\tchannel\tstart\tend\tduration_s\tcapacity_bytes\n");
    for r in &rows {
        s += &format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.station_id, r.channel, r.start, r.end, r.duration_s, r.capacity_bytes
        );
    }
    Ok(s)
}

/// Corrupts `file`, scans, and when no good copy survives uploads the
/// known-good content through a budget-charged repair command.
pub fn inject(
    args: &ScenarioArgs,
    file: &str,
    all_copies: bool,
    flip_seed: u64,
    out: Option<&Path>,
) -> Result<String, CliError> {
    let sc = load_scenario(args)?;
    let mut m = Mission::new(sc)?;
    if m.manifest().get(file).is_none() {
        let known: Vec<_> = m.manifest().entries().map(|e| e.logical_name.clone()).collect();
        return Err(CliError::Config(format!("unknown protected file {file:?}; known: {}", known.join(", "))));
    }
    let flips = m.inject_manual(file, all_copies, flip_seed);
    if flips.is_empty() {
        return Err(CliError::Runtime(format!("no bit could be flipped in {file}")));
    }
    m.scan_now();
    if m.manifest().unrecoverable().contains(file) {
        let content = m.known_good(file).map(<[u8]>::to_vec).unwrap_or_default();
        let cmd = Command::RepairUpload {
            logical_name: file.to_string(),
            content_base64: base64::engine::general_purpose::STANDARD.encode(content),
        };
        m.submit(&cmd).map_err(CliError::runtime)?;
        m.scan_now();
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write(dir.join("events.log"), log_text(m.events()))?;
        write(dir.join("manifest.txt"), m.manifest_text())?;
    }
    let mut s = log_text(m.events());
    let left = m.manifest().unrecoverable();
    s += &if left.is_empty() {
        "all protected files verified\n".to_string()
    } else {
        format!("unrecoverable: {left:?}\n")
    };
    Ok(s)
}

fn codec_err(e: CodecError) -> CliError {
    match e {
        CodecError::InvalidQuality(_) | CodecError::InvalidPlan(_) => CliError::Config(e.to_string()),
        other => CliError::runtime(other),
    }
}

pub fn encode(input: &Path, output: &Path, quality: u8, lossless: bool) -> Result<String, CliError> {
    let img = load_any(&read(input)?).map_err(|e| CliError::Runtime(format!("{}: {e}", input.display())))?;
    let stream = codec::encode(&img, quality, lossless, &SegmentPlan::default()).map_err(codec_err)?;
    let ends = segment_ends(&stream).map_err(codec_err)?;
    write(output.to_path_buf(), &stream)?;
    Ok(format!(
        "{}x{}x{} -> {} bytes (raw {}, ratio {:.2}), segment ends {:?}\n",
        img.width,
        img.height,
        img.channels,
        stream.len(),
        img.raw_size(),
        img.raw_size() as f64 / stream.len() as f64,
        ends
    ))
}

pub fn decode(input: &Path, output: &Path, segments: Option<usize>) -> Result<String, CliError> {
    let stream = read(input)?;
    let prefix = match segments {
        Some(0) => return Err(CliError::Config("--segments must be at least 1".into())),
        Some(k) => {
            let ends = segment_ends(&stream).map_err(codec_err)?;
            let cut = ends.get(k - 1).or(ends.last()).copied().unwrap_or(stream.len());
            &stream[..cut.min(stream.len())]
        }
        None => &stream[..],
    };
    let decoded = codec::decode(prefix).map_err(codec_err)?;
    let png = to_png(&decoded.image).map_err(CliError::runtime)?;
    write(output.to_path_buf(), png)?;
    Ok(format!(
        "{}x{}x{} from {} bytes, {} segment(s)\n",
        decoded.image.width,
        decoded.image.height,
        decoded.image.channels,
        prefix.len(),
        decoded.segments_used
    ))
}

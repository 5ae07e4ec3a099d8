use std::path::Path;
use std::process::{Command, Output};

use nanosat_core::mission::{Category, EventRecord, LogSummary, MissionReport};
use nanosat_core::raster::Image;
use nanosat_core::time::SimTime;

fn missioncli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_missioncli")).args(args).output().expect("spawn missioncli")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = missioncli(&["run", "--days", "1", "--seed", "5", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["events.log", "telemetry.csv", "report.json", "report.txt", "manifest.txt", "scenario.toml"] {
        assert!(a.join(f).is_file(), "{f}");
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }
    let report: MissionReport = serde_json::from_str(&std::fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.master_seed, 5);
    assert_eq!(report.days.len(), 1);
    let telemetry = std::fs::read_to_string(a.join("telemetry.csv")).unwrap();
    assert_eq!(telemetry.lines().next().unwrap(), "time,t_nano_c,t_frame_c,active,eclipse");
    assert_eq!(telemetry.lines().count(), 1 + 8640);

    // The echoed scenario reproduces the run.
    let c = dir.path().join("c");
    let o = missioncli(&["run", "--scenario", s(&a.join("scenario.toml")), "--out", s(&c)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(a.join("events.log")).unwrap(), std::fs::read(c.join("events.log")).unwrap());
}

#[test]
fn report_summarises_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&missioncli(&["run", "--days", "1", "--out", s(&run)])), 0);
    let o = missioncli(&["report", s(&run), "--json", "--out", s(&run)]);
    assert_eq!(code(&o), 0);
    let summary: LogSummary = serde_json::from_slice(&o.stdout).unwrap();
    let report: MissionReport =
        serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(summary.counts, report.event_counts);
    assert_eq!(summary.downlink_bytes, report.days[0].downlink_used);
    assert!(summary.warnings.is_empty());
    assert!(run.join("summary.json").is_file() && run.join("summary.txt").is_file());
}

#[test]
fn report_warns_on_bad_lines_and_counts_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.log");
    let line =
        |secs| EventRecord::new(SimTime::from_secs(secs), Category::GateDeny).with("reason", "deny_hot").to_line();
    std::fs::write(&log, format!("{}\nthis is not an event\n{}\n{}\n", line(0), line(10), line(20))).unwrap();
    let o = missioncli(&["report", s(&log), "--json"]);
    assert_eq!(code(&o), 0);
    let summary: LogSummary = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary.count(Category::GateDeny), 3);
    assert_eq!(summary.warnings.len(), 1);

    std::fs::write(&log, "").unwrap();
    let summary: LogSummary = serde_json::from_slice(&missioncli(&["report", s(&log), "--json"]).stdout).unwrap();
    assert!(summary.counts.values().all(|v| *v == 0));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "duration_days = 3\nwarp_drive = true\n").unwrap();
    assert_eq!(code(&missioncli(&["run", "--scenario", s(&bad)])), 2);
    std::fs::write(&bad, "step_s = 30.0\n").unwrap();
    assert_eq!(code(&missioncli(&["run", "--scenario", s(&bad)])), 2);
    assert_eq!(code(&missioncli(&["run", "--days", "0"])), 2);
    assert_eq!(code(&missioncli(&["run", "--scenario", s(&dir.path().join("missing.toml"))])), 2);
    assert_eq!(code(&missioncli(&["inject", "--file", "no/such.bin"])), 2);
    assert_eq!(code(&missioncli(&["frobnicate"])), 2);
}

#[test]
fn runtime_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&missioncli(&["report", s(&dir.path().join("absent.log"))])), 3);
    let junk = dir.path().join("junk.lpc");
    std::fs::write(&junk, b"definitely not a stream").unwrap();
    assert_eq!(code(&missioncli(&["decode", s(&junk), s(&dir.path().join("o.png"))])), 3);
}

#[test]
fn passgen_lists_the_default_schedule() {
    let o = missioncli(&["passgen", "--days", "2"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows[0].starts_with("uhf-gs\tuhf\t2024-01-01T02:00:00.000Z\t2024-01-01T02:10:00.000Z\t600\t"));
}

#[test]
fn inject_all_copies_is_repaired_over_uplink() {
    let o = missioncli(&["inject", "--file", "flight/app.bin", "--all-copies"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("reason=all copies corrupted"));
    assert!(text.contains("kind=repair_upload"));
    assert!(text.ends_with("all protected files verified\n"));
}

#[test]
fn encode_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<u8> = (0..40 * 24 * 3).map(|i| ((i * 37) % 256) as u8).collect();
    let img = Image::new(40, 24, 3, data).unwrap();
    let raw = dir.path().join("in.raw");
    std::fs::write(&raw, img.to_raw()).unwrap();
    let lpc = dir.path().join("out.lpc");
    let png = dir.path().join("out.png");
    assert_eq!(code(&missioncli(&["encode", s(&raw), s(&lpc), "--lossless"])), 0);
    assert_eq!(code(&missioncli(&["decode", s(&lpc), s(&png)])), 0);
    let back = nanosat_cli::raster_io::load_any(&std::fs::read(&png).unwrap()).unwrap();
    assert_eq!(back, img);

    let thumb = dir.path().join("thumb.png");
    assert_eq!(code(&missioncli(&["decode", s(&lpc), s(&thumb), "--segments", "1"])), 0);
    let t = image::open(&thumb).unwrap();
    assert_eq!((t.width(), t.height()), (40, 24));
    assert_eq!(code(&missioncli(&["encode", s(&raw), s(&lpc), "--quality", "101"])), 2);
}

#[test]
fn shipped_scenario_is_the_thirty_day_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.toml");
    let sc = nanosat_core::mission::Scenario::load(&path).unwrap();
    assert_eq!(sc, nanosat_core::mission::Scenario { duration_days: 30, ..Default::default() });
}

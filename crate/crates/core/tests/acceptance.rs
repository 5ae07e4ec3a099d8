//! Acceptance runner. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nanosat_core::ai::{gradient, loss, FeatureVector, FEATURES};
use nanosat_core::codec::{decode, encode, quality_curve, segment_ends, SegmentPlan};
use nanosat_core::fs::SimFs;
use nanosat_core::integrity::{compute_digest, Manifest, SCAN_INTERVAL_S};
use nanosat_core::link::{LinkConfig, FRAME_CRC};
use nanosat_core::mission::{log_hash, Category, EventRecord, Mission, MissionReport, Scenario};
use nanosat_core::orbitsim::{classify_zone, orbital_period, propagate, OrbitConfig, Zone};
use nanosat_core::scenegen::{generate_scene, SceneConfig, SensorSpec};
use nanosat_core::thermal::{calibrated_defaults, nano_envelope, simulate, ThermalState};
use nanosat_core::time::SimTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Long {
    mission: Mission,
    report: MissionReport,
    elapsed: Duration,
}

fn of(events: &[EventRecord], c: Category) -> impl Iterator<Item = &EventRecord> {
    events.iter().filter(move |e| e.category == c)
}

fn get<'a>(e: &'a EventRecord, key: &str) -> Result<&'a str, String> {
    e.details
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| format!("{key} missing: {}", e.to_line()))
}

fn payload_spans(events: &[EventRecord], end: SimTime) -> Result<Vec<(SimTime, SimTime)>, String> {
    let mut spans = Vec::new();
    let mut on = None;
    for e in of(events, Category::Payload) {
        match (get(e, "state")?, on) {
            ("on", None) => on = Some(e.time),
            ("off", Some(t)) => {
                spans.push((t, e.time));
                on = None;
            }
            _ => return Err(format!("unbalanced payload event {}", e.to_line())),
        }
    }
    if let Some(t) = on {
        spans.push((t, end));
    }
    Ok(spans)
}

fn raw_arithmetic() -> Check {
    let spec = SensorSpec::rgb();
    let raw = spec.native_raw_bytes();
    let cap = LinkConfig::default().downlink_cap_bytes;
    ensure((spec.native_width, spec.native_height) == (3820, 2464), || {
        format!("sensor {}x{}", spec.native_width, spec.native_height)
    })?;
    ensure(raw == 28_237_440, || format!("raw {raw}"))?;
    ensure(cap == 1_000_000, || format!("cap {cap}"))?;
    // Ratio to one decimal, rounded half up, in integers.
    let tenths = (raw * 10 + cap / 2) / cap;
    ensure(tenths == 282, || format!("ratio {tenths}/10"))?;
    Ok(format!("{raw} bytes = {}.{}x the {cap}-byte cap", tenths / 10, tenths % 10))
}

fn daily_caps(run: &Long) -> Check {
    let link = &run.mission.scenario().link;
    ensure(run.report.days.len() == 30, || format!("{} days", run.report.days.len()))?;
    let violations = run
        .report
        .days
        .iter()
        .filter(|d| {
            d.downlink_used > link.downlink_cap_bytes
                || d.uplink_used > link.uplink_cap_bytes
                || d.reserve_used > link.command_reserve_bytes
        })
        .count();
    ensure(violations == 0, || format!("{violations} days over cap"))?;
    ensure(run.elapsed < Duration::from_secs(60), || format!("runtime {:.1?}", run.elapsed))?;
    let peak_down = run.report.days.iter().map(|d| d.downlink_used).max().unwrap_or(0);
    let peak_up = run.report.days.iter().map(|d| d.uplink_used + d.reserve_used).max().unwrap_or(0);
    Ok(format!("30 days, 0 violations, peak downlink {peak_down}, peak uplink {peak_up}, runtime {:.1?}", run.elapsed))
}

fn progressive() -> Check {
    let mut worst_dc: f64 = 0.0;
    let mut segments = 0;
    for (i, img) in common::corpus().iter().enumerate() {
        let stream = encode(img, 75, false, &SegmentPlan::default()).map_err(|e| e.to_string())?;
        let ends = segment_ends(&stream).map_err(|e| e.to_string())?;
        for end in &ends {
            let d = decode(&stream[..*end]).map_err(|e| format!("image {i} at {end}: {e}"))?;
            ensure((d.image.width, d.image.height) == (img.width, img.height), || {
                format!("image {i}: reduced resolution")
            })?;
        }
        let curve = quality_curve(&stream, img).map_err(|e| e.to_string())?;
        ensure(curve.windows(2).all(|w| w[1].1 >= w[0].1), || format!("image {i}: PSNR falls {curve:?}"))?;
        worst_dc = worst_dc.max(ends[0] as f64 / stream.len() as f64);
        segments += ends.len();
    }
    ensure(worst_dc <= 0.05, || format!("DC fraction {:.2}%", 100.0 * worst_dc))?;
    for (i, (img, q)) in common::lossless_cases(0xACCE_7001).into_iter().enumerate() {
        let s = encode(&img, q, true, &SegmentPlan::default()).map_err(|e| e.to_string())?;
        let back = decode(&s).map_err(|e| e.to_string())?.image;
        ensure(back == img, || format!("lossless case {i} differs"))?;
    }
    Ok(format!(
        "20 images, {segments} prefixes decoded, max DC fraction {:.2}%, 100 lossless round trips",
        100.0 * worst_dc
    ))
}

fn thumbnails(run: &Long) -> Check {
    let spec = SensorSpec::rgb();
    ensure(spec.dims() == (478, 308), || format!("desk scale {:?}", spec.dims()))?;
    let mut largest = 0;
    for seed in 0..20u64 {
        let lat = (seed * 7 % 120) as f64 - 60.0;
        let lon = (seed * 53 % 360) as f64 - 180.0;
        let point = nanosat_core::orbitsim::GeodeticPoint::surface(lat, lon);
        let (img, _) =
            generate_scene(5000 + seed, &point, &spec, &SceneConfig::default()).map_err(|e| e.to_string())?;
        let stream = encode(&img, 75, false, &SegmentPlan::default()).map_err(|e| e.to_string())?;
        largest = largest.max(segment_ends(&stream).map_err(|e| e.to_string())?[0]);
    }
    for a in run.mission.catalog().assets() {
        largest = largest.max(segment_ends(&a.stream).map_err(|e| e.to_string())?[0]);
    }
    ensure(largest <= 10_000, || format!("thumbnail of {largest} bytes"))?;
    let fewest = run.report.days.iter().map(|d| d.thumbnails_completed).min().unwrap_or(0);
    ensure(fewest >= 10, || format!("only {fewest} thumbnails on some day"))?;
    Ok(format!("largest thumbnail {largest} bytes, at least {fewest} delivered every day"))
}

fn integrity(run: &Long) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1_27E6);
    for trial in 0..1000 {
        let content: Vec<u8> = (0..rng.random_range(1..512)).map(|_| rng.random()).collect();
        let mut fs = SimFs::new();
        let mut m = Manifest::new();
        let entry =
            m.register(&mut fs, "flight/app.bin", &content, rng.random_range(1..5)).map_err(|e| e.to_string())?;
        let keep = rng.random_range(0..entry.copies.len());
        for (i, path) in entry.copies.iter().enumerate() {
            if i != keep && rng.random_bool(0.7) {
                common::apply(&mut fs, path, &common::Damage::random(&mut rng), &content);
            }
        }
        let report = m.scan_once(&mut fs, SimTime::from_secs(0));
        ensure(report.unrecoverable.is_empty(), || format!("trial {trial}: reported unrecoverable"))?;
        ensure(entry.copies.iter().all(|c| fs.read(c) == Some(&content[..])), || {
            format!("trial {trial}: not restored")
        })?;
    }
    for trial in 0..1000 {
        let content: Vec<u8> = (0..rng.random_range(1..512)).map(|_| rng.random()).collect();
        let mut fs = SimFs::new();
        let mut m = Manifest::new();
        let entry =
            m.register(&mut fs, "model/cloud.cmdl", &content, rng.random_range(1..5)).map_err(|e| e.to_string())?;
        for path in &entry.copies {
            common::apply(&mut fs, path, &common::Damage::random(&mut rng), &content);
        }
        let before: Vec<_> = entry.copies.iter().map(|c| fs.read(c).map(<[u8]>::to_vec)).collect();
        let report = m.scan_once(&mut fs, SimTime::from_secs(0));
        let after: Vec<_> = entry.copies.iter().map(|c| fs.read(c).map(<[u8]>::to_vec)).collect();
        ensure(report.unrecoverable == ["model/cloud.cmdl"], || format!("trial {trial}: loss not reported"))?;
        ensure(before == after, || format!("trial {trial}: damaged copies altered"))?;
    }

    let mut binomial = Vec::new();
    for (p, k) in [(0.3f64, 1usize), (0.5, 2), (0.6, 3)] {
        let content: Vec<u8> = (0..64u8).collect();
        let mut lost = 0u32;
        for _ in 0..10_000 {
            let mut fs = SimFs::new();
            let mut m = Manifest::new();
            let entry = m.register(&mut fs, "flight/config.bin", &content, k).map_err(|e| e.to_string())?;
            for c in &entry.copies {
                if rng.random_bool(p) {
                    fs.flip_bit(c, rng.random_range(0..content.len()), rng.random_range(0..8));
                }
            }
            if !m.scan_once(&mut fs, SimTime::from_secs(0)).unrecoverable.is_empty() {
                lost += 1;
            }
        }
        let q = p.powi(k as i32 + 1);
        let sigma = (1e4 * q * (1.0 - q)).sqrt();
        let z = (f64::from(lost) - 1e4 * q) / sigma;
        ensure(z.abs() <= 3.0, || format!("p={p} k={k}: {lost} lost, z={z:.2}"))?;
        binomial.push(format!("{z:+.2}"));
    }

    let events = run.mission.events();
    let spans = payload_spans(events, run.mission.end())?;
    let scans: Vec<SimTime> = of(events, Category::Scan).map(|e| e.time).collect();
    let mut inside = 0;
    for (on, off) in &spans {
        let here: Vec<SimTime> = scans.iter().copied().filter(|t| t >= on && t < off).collect();
        for w in here.windows(2) {
            ensure(w[1].0 - w[0].0 == SCAN_INTERVAL_S * 1000, || format!("scan gap at {:?}", w[0]))?;
        }
        inside += here.len();
    }
    ensure(inside == scans.len(), || format!("{} scans outside active spans", scans.len() - inside))?;
    Ok(format!(
        "1000/1000 restored, 1000/1000 total losses logged untouched, binomial z [{}], {} scans at 60 s",
        binomial.join(", "),
        scans.len()
    ))
}

fn see() -> Check {
    let primary = common::nominal_orbits(0x5EE, 1000);
    ensure((1..=20).contains(&primary), || format!("{primary} events"))?;
    let inside = (0..40).filter(|s| (1..=20).contains(&common::nominal_orbits(*s, 1000))).count();
    ensure(inside >= 38, || format!("{inside}/40 seeds in band"))?;
    Ok(format!("{primary} events in 1000 orbits; {inside}/40 seeds inside [1, 20]"))
}

fn thermal(run: &Long) -> Check {
    const DT: f64 = 10.0;
    let o = OrbitConfig::<f64>::default();
    let period = orbital_period(&o).map_err(|e| e.to_string())?;
    let per = (period / DT).floor() as usize;
    let sim = |active: bool| {
        simulate(&calibrated_defaults(), &o, ThermalState::uniform(-17.5, o.epoch), period * 12.0, DT, |_| active)
            .map_err(|e| e.to_string())
    };
    let idle = sim(false)?;
    let active = sim(true)?;
    let (imin, imax) = nano_envelope(&idle[10 * per..11 * per]);
    let (_, amax) = nano_envelope(&active[10 * per..11 * per]);
    ensure((-24.0..=-18.0).contains(&imin) && (-17.0..=-11.0).contains(&imax), || {
        format!("idle [{imin:.1}, {imax:.1}]")
    })?;
    ensure((19.0..=32.0).contains(&amax), || format!("active max {amax:.1}"))?;
    ensure((39.0..=47.0).contains(&(amax - imax)), || format!("difference {:.1}", amax - imax))?;
    let t = &run.report.thermal;
    let limit = run.mission.scenario().limits.op_max_c;
    ensure(t.active_limit_violations == 0 && t.nano_max_active_c <= limit, || {
        format!("{} violations, active max {:.1}", t.active_limit_violations, t.nano_max_active_c)
    })?;
    Ok(format!(
        "idle [{imin:.1}, {imax:.1}] C, active max {amax:.1} C, difference {:.1} C; mission active max {:.1} C, 0 violations",
        amax - imax,
        t.nano_max_active_c
    ))
}

fn zone_gating(run: &Long) -> Check {
    let sc = run.mission.scenario();
    let events = run.mission.events();
    let mut captures = 0;
    for e in of(events, Category::Capture) {
        let zone = classify_zone(&sc.zones, &propagate(&sc.orbit, e.time).map_err(|e| e.to_string())?);
        ensure(zone == Zone::Nominal && get(e, "zone")? == "nominal", || {
            format!("capture in {zone:?}: {}", e.to_line())
        })?;
        captures += 1;
    }
    let spans = payload_spans(events, run.mission.end())?;
    let mut steps = 0;
    for (on, off) in &spans {
        let mut t = *on;
        while t < *off {
            let zone = classify_zone(&sc.zones, &propagate(&sc.orbit, t).map_err(|e| e.to_string())?);
            ensure(zone == Zone::Nominal, || format!("payload on in {zone:?} at {t:?}"))?;
            t = SimTime(t.0 + 10_000);
            steps += 1;
        }
    }
    ensure(captures > 0 && steps > 0, || "nothing to check".into())?;
    Ok(format!("{captures} captures and {steps} active steps over {} spans, all nominal", spans.len()))
}

struct Short {
    seed: u64,
    hash: String,
    gain: f64,
}

fn two_day(seed: u64) -> Result<Short, String> {
    let mut m = Mission::new(Scenario { duration_days: 2, master_seed: seed, ..Scenario::default() })
        .map_err(|e| e.to_string())?;
    let report = m.run().map_err(|e| e.to_string())?;
    let trace = &report.accuracy_trace;
    ensure(trace.len() >= 2, || format!("seed {seed}: no GT cycle"))?;
    Ok(Short { seed, hash: log_hash(m.events()), gain: trace[1].accuracy - trace[0].accuracy })
}

fn finetune(runs: &[Short]) -> Check {
    let mut gains: Vec<f64> = runs.iter().map(|r| r.gain).collect();
    gains.sort_by(f64::total_cmp);
    let median = (gains[9] + gains[10]) / 2.0;
    ensure(median >= 0.03, || format!("median gain {median:.3}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let w: Vec<f64> = (0..FEATURES).map(|_| rng.random_range(-3.0..3.0)).collect();
        let batch: Vec<(FeatureVector<f64>, bool)> = (0..rng.random_range(1..24))
            .map(|_| {
                let mut x = [0.0; FEATURES];
                for (i, v) in x.iter_mut().enumerate() {
                    *v = if i < 8 { rng.random_range(0.0..255.0) } else { rng.random_range(-1.0..1.0) };
                }
                x[FEATURES - 1] = 1.0;
                (x, rng.random_bool(0.5))
            })
            .collect();
        let l2 = rng.random_range(0.0..0.01);
        let g = gradient(&w, &batch, l2);
        let h = 1e-5;
        for i in 0..FEATURES {
            let mut up = w.clone();
            let mut down = w.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (loss(&up, &batch, l2) - loss(&down, &batch, l2)) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1.0));
        }
    }
    ensure(worst <= 1e-6, || format!("gradient error {worst:.2e}"))?;
    Ok(format!(
        "median gain {median:.3} over 20 missions (range {:.3}..{:.3}); gradient error {worst:.1e}",
        gains[0], gains[19]
    ))
}

fn protocol() -> Check {
    let check = FRAME_CRC.checksum(b"123456789");
    ensure(check == 0x29B1 && common::crc16_bitwise(b"123456789") == 0x29B1, || format!("check value {check:#06x}"))?;
    let t = common::frame_fuzz(100_000, 0xACCE_F022);
    ensure(t.trials == 100_000 && t.silent == 0, || format!("{t:?}"))?;
    for (input, hex) in common::MD5_VECTORS {
        ensure(compute_digest(input.as_bytes()).to_hex() == hex, || format!("MD5 of {input:?}"))?;
    }
    Ok(format!("CRC {check:#06X}, {} mutations, {} silent, 7 MD5 vectors", t.trials, t.silent))
}

fn determinism(runs: &[Short]) -> Check {
    let mut checked = Vec::new();
    for r in runs.iter().take(2) {
        let again = two_day(r.seed)?;
        ensure(again.hash == r.hash, || format!("seed {}: {} vs {}", r.seed, r.hash, again.hash))?;
        checked.push(format!("seed {}", r.seed));
    }
    let sc = Scenario { duration_days: 1, master_seed: 0xD00D, step_s: 5.0, ..Scenario::default() };
    let run = || -> Result<String, String> {
        let mut m = Mission::new(sc.clone()).map_err(|e| e.to_string())?;
        Ok(m.run().map_err(|e| e.to_string())?.event_log_sha256)
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || format!("5 s step: {a} vs {b}"))?;
    checked.push("5 s step".into());
    ensure(runs.windows(2).all(|w| w[0].hash != w[1].hash), || "different seeds gave identical logs".into())?;
    Ok(format!("identical log hashes on rerun ({})", checked.join(", ")))
}

fn report(name: &str, started: Instant, outcome: std::thread::Result<Check>) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (ok, detail) = match outcome {
        Ok(Ok(d)) => (true, d),
        Ok(Err(e)) => (false, e),
        Err(p) => (false, format!("panicked: {}", p.downcast_ref::<String>().cloned().unwrap_or_default())),
    };
    println!("{} {name}: {detail} [{secs:.1}s]", if ok { "PASS" } else { "FAIL" });
    ok
}

fn run<F: FnOnce() -> Check>(name: &str, f: F) -> bool {
    let started = Instant::now();
    report(name, started, catch_unwind(AssertUnwindSafe(f)))
}

fn main() -> ExitCode {
    println!("acceptance: {} criteria", 11);
    let started = Instant::now();
    let long = (|| -> Result<Long, String> {
        let mut mission =
            Mission::new(Scenario { duration_days: 30, ..Scenario::default() }).map_err(|e| e.to_string())?;
        let report = mission.run().map_err(|e| e.to_string())?;
        Ok(Long { mission, report, elapsed: started.elapsed() })
    })();
    let shorts: Result<Vec<Short>, String> = (1..=20).map(two_day).collect();

    let (long, shorts) = (&long, &shorts);
    let with_long = |f: fn(&Long) -> Check| move || long.as_ref().map_err(Clone::clone).and_then(f);
    let with_shorts = |f: fn(&[Short]) -> Check| move || shorts.as_ref().map_err(Clone::clone).and_then(|s| f(s));

    let results = [
        run("raw-image arithmetic", raw_arithmetic),
        run("daily caps", with_long(daily_caps)),
        run("progressive decodability", progressive),
        run("thumbnail economics", with_long(thumbnails)),
        run("integrity", with_long(integrity)),
        run("SEE statistics", see),
        run("thermal envelope", with_long(thermal)),
        run("zone gating", with_long(zone_gating)),
        run("fine-tuning loop", with_shorts(finetune)),
        run("protocol", protocol),
        run("determinism", with_shorts(determinism)),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

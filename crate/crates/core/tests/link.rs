mod common;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nanosat_core::ai::{encode_labels, GtLabel, GtSource};
use nanosat_core::link::{
    decode_frames, frame_payload, framed_size, plan_day, transmit_step, uplink_submit, Frame, FrameError, FrameType,
    GroundReceiver, LinkBudget, LinkConfig, LinkError, TransferSession, TransferTarget, UplinkKind, FRAME_CRC,
    MAX_PAYLOAD,
};
use nanosat_core::orbitsim::{Channel, PassWindow};
use nanosat_core::time::SimTime;
use proptest::prelude::*;

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
}

fn window(start_s: i64, dur: i64, channel: Channel) -> PassWindow {
    PassWindow {
        station_id: "gs".into(),
        channel,
        start: SimTime::from_secs(start_s),
        end: SimTime::from_secs(start_s + dur),
    }
}

#[test]
fn crc_check_value_and_bitwise_oracle() {
    assert_eq!(common::crc16_bitwise(b"123456789"), 0x29B1);
    assert_eq!(FRAME_CRC.checksum(b"123456789"), 0x29B1);
    assert_eq!(FRAME_CRC.checksum(b""), 0xFFFF);
}

#[test]
fn hundred_thousand_mutations_are_all_rejected() {
    let t = common::frame_fuzz(100_000, 0x5EED);
    assert_eq!(t.trials, 100_000);
    assert_eq!(t.silent, 0, "{t:?}");
    assert_eq!(t.rejected, t.trials);
}

#[test]
fn wire_layout_is_big_endian_with_trailing_crc() {
    let f = Frame::new(FrameType::Command, 0x0102, vec![0xAA, 0xBB]).unwrap();
    let b = f.encode().unwrap();
    assert_eq!(&b[..8], &[0x4C, 0x52, 1, 1, 0x01, 0x02, 0x00, 0x02]);
    let crc = common::crc16_bitwise(&b[2..10]);
    assert_eq!(&b[10..], &crc.to_be_bytes());
    assert_eq!(
        Frame::new(FrameType::Ack, 0, vec![0; MAX_PAYLOAD + 1]),
        Err(FrameError::PayloadTooLarge(MAX_PAYLOAD + 1))
    );
}

#[test]
fn two_hundred_labels_fit_in_ten_kilobytes() {
    let labels: Vec<GtLabel> = (0..200)
        .map(|i| GtLabel { asset_id: 10_000 + i, cloudy: i % 3 == 0, confidence: 0.93, source: GtSource::GroundObsSim })
        .collect();
    let payload = encode_labels(&labels);
    let mut seq = 0;
    let frames = frame_payload(FrameType::Command, &mut seq, &payload);
    let wire: u64 = frames.iter().map(|f| f.encoded_len() as u64).sum();
    assert_eq!(wire, framed_size(payload.len()));
    assert!(wire <= 10_000, "{wire} bytes");
    let bytes: Vec<u8> = frames.iter().flat_map(|f| f.encode().unwrap()).collect();
    let back: Vec<u8> = decode_frames(&bytes).unwrap().into_iter().flat_map(|f| f.payload).collect();
    assert_eq!(back, payload);
}

#[test]
fn default_caps_and_window_capacity() {
    let c = LinkConfig::default();
    assert_eq!(c.downlink_cap_bytes, 1_000_000);
    assert_eq!(c.uplink_cap_bytes, 150_000);
    // 600 s at 9600 bit/s is 720000 bytes, less 5 % framing.
    assert_eq!(c.window_capacity(&window(0, 600, Channel::Uhf)), 684_000);
    assert_eq!(c.window_capacity(&window(0, 300, Channel::Sband)), 71_250_000);
    let bad = LinkConfig { uplink_cap_bytes: 99_999, ..LinkConfig::default() };
    assert!(matches!(LinkBudget::new(bad, day()), Err(LinkError::InvalidConfig(_))));
}

#[test]
fn reserve_serves_commands_only() {
    let mut b = LinkBudget::new(LinkConfig::default(), day()).unwrap();
    uplink_submit(&mut b, UplinkKind::FileRepair, 149_900).unwrap();
    let before = b.clone();
    assert!(uplink_submit(&mut b, UplinkKind::LabelBatch, 200).is_err());
    assert!(uplink_submit(&mut b, UplinkKind::FileRepair, 200).is_err());
    assert_eq!(b, before);
    let c = uplink_submit(&mut b, UplinkKind::Command, 200).unwrap();
    assert_eq!((c.from_cap, c.from_reserve), (0, 200));
    assert!(uplink_submit(&mut b, UplinkKind::Command, 2000).is_err());
    b.roll_to(day().succ_opt().unwrap());
    assert_eq!((b.uplink_used, b.reserve_used, b.downlink_used), (0, 0, 0));
}

#[derive(Clone, Debug)]
enum Up {
    Uplink(u8, u64),
    Downlink(u64),
    Roll,
}

fn up() -> impl Strategy<Value = Up> {
    prop_oneof![
        4 => (0u8..3, 1u64..40_000).prop_map(|(k, s)| Up::Uplink(k, s)),
        3 => (1u64..300_000).prop_map(Up::Downlink),
        1 => Just(Up::Roll),
    ]
}

fn sessions_for(lens: &[u64], priorities: &[i32]) -> Vec<TransferSession> {
    lens.iter()
        .zip(priorities)
        .enumerate()
        .map(|(i, (&len, &p))| TransferSession::new(i as u64 + 1, 100 + i as u64, TransferTarget::Full, len, 0, p))
        .collect()
}

proptest! {
    #[test]
    fn crc_matches_bitwise_oracle(data in proptest::collection::vec(any::<u8>(), 0..2048)) {
        prop_assert_eq!(FRAME_CRC.checksum(&data), common::crc16_bitwise(&data));
    }

    #[test]
    fn frames_round_trip(kind in 1u8..=5, seq in any::<u16>(), payload in proptest::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD)) {
        let f = Frame::new(FrameType::from_u8(kind).unwrap(), seq, payload).unwrap();
        let bytes = f.encode().unwrap();
        prop_assert_eq!(bytes.len(), f.encoded_len());
        prop_assert_eq!(Frame::decode(&bytes).unwrap(), f);
    }

    #[test]
    fn caps_are_never_exceeded(ops in proptest::collection::vec(up(), 1..200)) {
        let cfg = LinkConfig::default();
        let mut b = LinkBudget::new(cfg.clone(), day()).unwrap();
        let mut d = day();
        for op in ops {
            let before = b.clone();
            match op {
                Up::Uplink(k, size) => {
                    let kind = [UplinkKind::Command, UplinkKind::LabelBatch, UplinkKind::FileRepair][usize::from(k)];
                    match uplink_submit(&mut b, kind, size) {
                        Ok(c) => {
                            prop_assert_eq!(c.from_cap + c.from_reserve, size);
                            prop_assert!(c.from_reserve == 0 || kind == UplinkKind::Command);
                            prop_assert!(c.from_reserve == 0 || size > before.uplink_remaining());
                        }
                        Err(_) => prop_assert_eq!(&b, &before),
                    }
                }
                Up::Downlink(n) => {
                    let ok = b.charge_downlink(n);
                    prop_assert_eq!(ok, n <= before.downlink_remaining());
                    if !ok {
                        prop_assert_eq!(&b, &before);
                    }
                }
                Up::Roll => {
                    d = d.succ_opt().unwrap();
                    b.roll_to(d);
                }
            }
            prop_assert!(b.uplink_used <= cfg.uplink_cap_bytes);
            prop_assert!(b.reserve_used <= cfg.command_reserve_bytes);
            prop_assert!(b.downlink_used <= cfg.downlink_cap_bytes);
        }
    }

    #[test]
    fn plans_respect_windows_cap_and_targets(
        lens in proptest::collection::vec(1u64..400_000, 1..8),
        prio in proptest::collection::vec(-3i32..3, 8),
        used in 0u64..1_000_000,
        durs in proptest::collection::vec(60i64..900, 1..6),
    ) {
        let mut budget = LinkBudget::new(LinkConfig::default(), day()).unwrap();
        budget.downlink_used = used;
        let windows: Vec<PassWindow> = durs.iter().enumerate().map(|(i, &d)| window(i as i64 * 5000, d, Channel::Uhf)).collect();
        let sessions = sessions_for(&lens, &prio);
        let plan = plan_day(&budget, &windows, &sessions);
        prop_assert!(plan.total_bytes() <= budget.downlink_remaining());
        for (i, w) in windows.iter().enumerate() {
            prop_assert!(plan.for_window(i).map(|g| g.bytes).sum::<u64>() <= budget.config.window_capacity(w));
        }
        let mut cursor: BTreeMap<u64, u64> = BTreeMap::new();
        for g in &plan.grants {
            let s = sessions.iter().find(|s| s.session_id == g.session_id).unwrap();
            let at = cursor.entry(g.session_id).or_insert(s.next_offset);
            prop_assert_eq!(g.offset, *at, "grants for a session are contiguous");
            *at += g.bytes;
            prop_assert!(*at <= s.target_end);
        }
        // Within a window, a lower-priority session is only served once every
        // higher-priority one is satisfied.
        for (i, _) in windows.iter().enumerate() {
            let gs: Vec<_> = plan.for_window(i).collect();
            for pair in gs.windows(2) {
                let a = sessions.iter().find(|s| s.session_id == pair[0].session_id).unwrap();
                let b = sessions.iter().find(|s| s.session_id == pair[1].session_id).unwrap();
                prop_assert!(a.priority >= b.priority);
            }
        }
    }

    #[test]
    fn downlinked_bytes_are_conserved(lens in proptest::collection::vec(1usize..20_000, 1..5), dur in 30i64..200) {
        let budget = LinkBudget::new(LinkConfig::default(), day()).unwrap();
        let streams: Vec<Vec<u8>> = lens.iter().enumerate().map(|(i, &n)| (0..n).map(|j| (i * 31 + j) as u8).collect()).collect();
        let mut sessions = sessions_for(&lens.iter().map(|&n| n as u64).collect::<Vec<_>>(), &[0; 8]);
        let windows = vec![window(0, dur, Channel::Uhf), window(6000, dur, Channel::Uhf)];
        let plan = plan_day(&budget, &windows, &sessions);
        let mut rx = GroundReceiver::new();
        let mut seq = 0u16;
        for g in &plan.grants {
            let i = sessions.iter().position(|s| s.session_id == g.session_id).unwrap();
            let (frames, next) = transmit_step(&sessions[i], g.bytes, &streams[i], &mut seq);
            prop_assert!(frames.iter().all(|f| f.payload.len() <= MAX_PAYLOAD));
            prop_assert_eq!(next.next_offset - sessions[i].next_offset, g.bytes);
            for f in frames {
                prop_assert!(rx.accept_bytes(&f.encode().unwrap()).is_some());
            }
            sessions[i] = next;
        }
        let on_ground: u64 = rx.assets().map(|(_, b)| b.len() as u64).sum();
        prop_assert_eq!(on_ground, plan.total_bytes());
        for (i, s) in sessions.iter().enumerate() {
            let got = rx.received(s.asset_id);
            prop_assert_eq!(got.len() as u64, s.next_offset);
            prop_assert_eq!(got, &streams[i][..got.len()]);
        }
        prop_assert_eq!(rx.rejected_frames, 0);
        prop_assert_eq!(rx.gaps, 0);
    }
}

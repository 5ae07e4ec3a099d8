//! Oracles and harnesses shared by the integration tests and the acceptance
//! runner.
#![allow(dead_code)]

use nanosat_core::faults::{Injector, SeeModel};
use nanosat_core::fs::SimFs;
use nanosat_core::link::{Frame, FrameType, MAX_PAYLOAD};
use nanosat_core::orbitsim::GeodeticPoint;
use nanosat_core::orbitsim::{orbital_period, OrbitConfig, Zone};
use nanosat_core::raster::Image;
use nanosat_core::scenegen::{generate_scene, SceneConfig, SensorKind, SensorSpec};
use nanosat_core::time::SimTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bit-at-a-time CRC-16, polynomial 0x1021, initial value 0xFFFF, no
/// reflection, no final xor.
pub fn crc16_bitwise(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in data {
        crc ^= u16::from(byte) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
        }
    }
    crc
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzTally {
    pub trials: u64,
    pub rejected: u64,
    /// Mutated bytes that decoded to a frame different from the original.
    pub silent: u64,
}

fn flip(bytes: &mut [u8], bit: usize) {
    bytes[bit / 8] ^= 0x80 >> (bit % 8);
}

/// Applies `trials` random mutations (1-3 bit flips, bursts up to 16 bits,
/// truncation, extension) to encoded frames and decodes each result.
pub fn frame_fuzz(trials: u64, seed: u64) -> FuzzTally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = FuzzTally::default();
    let types = [FrameType::Command, FrameType::Ack, FrameType::Telemetry, FrameType::FileChunk, FrameType::Event];
    for _ in 0..trials {
        let len = if rng.random_bool(0.1) { rng.random_range(0..=MAX_PAYLOAD) } else { rng.random_range(0..64) };
        let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let frame = Frame::new(types[rng.random_range(0..types.len())], rng.random(), payload).unwrap();
        let clean = frame.encode().unwrap();
        let bits = clean.len() * 8;
        let mut m = clean.clone();
        match rng.random_range(0..4) {
            0 => {
                let n = rng.random_range(1..=3);
                let mut chosen = Vec::new();
                while chosen.len() < n {
                    let b = rng.random_range(0..bits);
                    if !chosen.contains(&b) {
                        chosen.push(b);
                    }
                }
                for b in chosen {
                    flip(&mut m, b);
                }
            }
            1 => {
                // Burst: first and last bit of the span always flip.
                let span = rng.random_range(1..=16.min(bits));
                let start = rng.random_range(0..=bits - span);
                flip(&mut m, start);
                if span > 1 {
                    flip(&mut m, start + span - 1);
                    for b in start + 1..start + span - 1 {
                        if rng.random_bool(0.5) {
                            flip(&mut m, b);
                        }
                    }
                }
            }
            2 => {
                let cut = rng.random_range(0..m.len());
                m.truncate(cut);
            }
            _ => {
                let extra = rng.random_range(1..=32);
                m.extend((0..extra).map(|_| rng.random::<u8>()));
            }
        }
        tally.trials += 1;
        match Frame::decode(&m) {
            Err(_) => tally.rejected += 1,
            Ok(f) if f == frame && m == clean => {}
            Ok(_) => tally.silent += 1,
        }
    }
    tally
}

/// 512x384 procedural scene at a seed-derived location.
pub fn scene(seed: u64, kind: SensorKind) -> Image {
    let spec = SensorSpec { kind, native_width: 512, native_height: 384, scale_divisor: 1, ..SensorSpec::rgb() };
    let lat = (seed % 120) as f64 - 60.0;
    let lon = (seed * 37 % 360) as f64 - 180.0;
    generate_scene(seed, &GeodeticPoint::surface(lat, lon), &spec, &SceneConfig::default()).unwrap().0
}

/// Twenty 512x384 RGB procedural scenes.
pub fn corpus() -> Vec<Image> {
    (0..20).map(|i| scene(1000 + i, SensorKind::Rgb)).collect()
}

pub fn noise(w: u32, h: u32, ch: u8, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * u32::from(ch)).map(|_| rng.random()).collect();
    Image::new(w, h, ch, data).unwrap()
}

#[derive(Clone, Debug)]
pub enum Damage {
    Flip { offset: usize, bit: u8 },
    Truncate(usize),
    Remove,
    Overwrite(Vec<u8>),
}

impl Damage {
    pub fn random(rng: &mut impl Rng) -> Damage {
        match rng.random_range(0..4) {
            0 => Damage::Flip { offset: rng.random::<u32>() as usize, bit: rng.random_range(0..8) },
            1 => Damage::Truncate(rng.random::<u32>() as usize),
            2 => Damage::Remove,
            _ => Damage::Overwrite((0..rng.random_range(0..64)).map(|_| rng.random()).collect()),
        }
    }
}

/// Damages `path`, whose intact content is `original`, so that it no longer
/// matches.
pub fn apply(fs: &mut SimFs, path: &str, d: &Damage, original: &[u8]) {
    match d {
        Damage::Flip { offset, bit } => {
            fs.flip_bit(path, offset % original.len(), *bit);
        }
        Damage::Truncate(n) => {
            let keep = n % original.len();
            fs.write(path, &original[..keep]).unwrap();
        }
        Damage::Remove => {
            fs.remove(path).unwrap();
        }
        Damage::Overwrite(bytes) => {
            let mut b = bytes.clone();
            if b == original {
                b.push(0);
            }
            fs.write(path, &b).unwrap();
        }
    }
}

pub const MD5_VECTORS: [(&str, &str); 7] = [
    ("", "d41d8cd98f00b204e9800998ecf8427e"),
    ("a", "0cc175b9c0f1b6a831c399e269772661"),
    ("abc", "900150983cd24fb0d6963f7d28e17f72"),
    ("message digest", "f96b697d7cb7938d525a2f31aaf161d0"),
    ("abcdefghijklmnopqrstuvwxyz", "c3fcd3d76192e4007dfb496cca67e13b"),
    ("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789", "d174ab98d277d9f5a5611c2c9f419d9f"),
    (
        "12345678901234567890123456789012345678901234567890123456789012345678901234567890",
        "57edf4a22be3c955ac49da2e2107b67a",
    ),
];

pub fn populated_fs() -> SimFs {
    let mut fs = SimFs::new();
    fs.write("flight/app.bin", &vec![0u8; 4096]).unwrap();
    fs.write("flight/app.bin.bak1", &vec![0u8; 4096]).unwrap();
    fs.write("model/cloud.cmdl", &[0u8; 80]).unwrap();
    fs.write("catalog/journal.log", b"").unwrap();
    fs
}

/// SEE count over `orbits` orbits spent entirely in the nominal zone.
pub fn nominal_orbits(seed: u64, orbits: u32) -> usize {
    const DT: f64 = 10.0;
    let period = orbital_period(&OrbitConfig::<f64>::default()).unwrap();
    let mut inj = Injector::new(SeeModel { rng_seed: seed, ..SeeModel::default() });
    let mut fs = populated_fs();
    let steps = (f64::from(orbits) * period / DT).round() as u64;
    let mut n = 0;
    for i in 0..steps {
        let t = SimTime::from_secs(i as i64 * 10);
        n += inj.inject(&mut fs, t, DT, Zone::Nominal, period).unwrap().len();
    }
    n
}

/// 100 small images (flat, extreme checkerboard, noise) with a quality each.
pub fn lossless_cases(seed: u64) -> Vec<(Image, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..100)
        .map(|i| {
            let w = rng.random_range(1..=97);
            let h = rng.random_range(1..=67);
            let ch = if rng.random_bool(0.5) { 3 } else { 1 };
            let img = match i % 4 {
                0 => Image::filled(w, h, ch, if rng.random_bool(0.5) { 0 } else { 255 }).unwrap(),
                1 => {
                    let data = (0..w * h * u32::from(ch)).map(|j| if (j + j / w) % 2 == 0 { 0 } else { 255 }).collect();
                    Image::new(w, h, ch, data).unwrap()
                }
                _ => noise(w, h, ch, rng.random()),
            };
            (img, rng.random_range(1..=100))
        })
        .collect()
}

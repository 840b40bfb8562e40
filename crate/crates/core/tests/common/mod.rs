//! Independent reference implementations shared by the integration tests.
//! None of these call into the code under test.

#![allow(dead_code)]

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

/// HMAC-SHA-256 built directly from the hash (RFC 2104), lowercase hex.
pub fn hmac_sha256_hex(key: &[u8], msg: &[u8]) -> String {
    const BLOCK: usize = 64;
    let mut k = [0u8; BLOCK];
    if key.len() > BLOCK {
        k[..32].copy_from_slice(&Sha256::digest(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let ipad: Vec<u8> = k.iter().map(|b| b ^ 0x36).collect();
    let opad: Vec<u8> = k.iter().map(|b| b ^ 0x5c).collect();
    let inner = Sha256::new().chain_update(&ipad).chain_update(msg).finalize();
    let outer = Sha256::new().chain_update(&opad).chain_update(inner).finalize();
    outer.iter().map(|b| format!("{b:02x}")).collect()
}

/// Trapezoid integral of a time-ordered trace in kWh, skipping pairs
/// further apart than `gap_limit_s`. Sums joules first and converts once.
pub fn trapezoid_kwh(trace: &[(f64, f64)], gap_limit_s: f64) -> f64 {
    let joules: f64 = trace
        .windows(2)
        .filter(|p| p[1].0 - p[0].0 <= gap_limit_s)
        .map(|p| 0.5 * (p[0].1 + p[1].1) * (p[1].0 - p[0].0))
        .sum();
    joules / 3_600_000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cf {
    Average,
    Min,
    Max,
}

impl Cf {
    pub const ALL: [Cf; 3] = [Cf::Average, Cf::Min, Cf::Max];

    fn code(self) -> u8 {
        match self {
            Cf::Average => 0,
            Cf::Min => 1,
            Cf::Max => 2,
        }
    }
}

/// Naive archive: keeps every bucket of the full history, then truncates
/// to the last `capacity` indices on read.
pub struct NaiveArchive {
    pub step: f64,
    pub capacity: u32,
    pub cf: Cf,
    /// index -> (accumulator, count)
    pub history: BTreeMap<i64, (f64, u64)>,
    pub first: Option<i64>,
    pub newest: Option<i64>,
    pub late: u64,
}

impl NaiveArchive {
    pub fn new(step: f64, capacity: u32, cf: Cf) -> Self {
        NaiveArchive {
            step,
            capacity,
            cf,
            history: BTreeMap::new(),
            first: None,
            newest: None,
            late: 0,
        }
    }

    pub fn update(&mut self, t: f64, w: f64) {
        let idx = (t / self.step).floor() as i64;
        if self.newest.is_some_and(|n| idx < n) {
            self.late += 1;
            return;
        }
        self.first.get_or_insert(idx);
        self.newest = Some(idx);
        let e = self.history.entry(idx).or_insert((f64::NAN, 0));
        e.0 = if e.1 == 0 {
            w
        } else {
            match self.cf {
                Cf::Average => e.0 + w,
                Cf::Min => e.0.min(w),
                Cf::Max => e.0.max(w),
            }
        };
        e.1 += 1;
    }

    fn window(&self) -> Option<(i64, i64)> {
        let hi = self.newest?;
        let lo = self.first?.max(hi - i64::from(self.capacity) + 1);
        Some((lo, hi))
    }

    /// Last `capacity` buckets as (start, value), absent = None.
    pub fn buckets(&self) -> Vec<(f64, Option<f64>)> {
        let Some((lo, hi)) = self.window() else {
            return Vec::new();
        };
        (lo..=hi)
            .map(|i| {
                let v = self.history.get(&i).map(|&(acc, n)| match self.cf {
                    Cf::Average => acc / n as f64,
                    _ => acc,
                });
                (i as f64 * self.step, v)
            })
            .collect()
    }

    /// The documented on-disk layout, produced from the naive state.
    pub fn to_bytes(&self) -> Vec<u8> {
        let cap = i64::from(self.capacity);
        let mut slots = vec![(i64::MIN, 0.0f64, 0u64); self.capacity as usize];
        if let Some((lo, hi)) = self.window() {
            for i in lo..=hi {
                let (acc, n) = self.history.get(&i).copied().unwrap_or((0.0, 0));
                slots[i.rem_euclid(cap) as usize] = (i, acc, n);
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(b"KWRRA\0\0\x01");
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.capacity.to_le_bytes());
        out.extend_from_slice(&[self.cf.code(), 0, 0, 0]);
        out.extend_from_slice(&self.first.unwrap_or(i64::MIN).to_le_bytes());
        out.extend_from_slice(&self.newest.unwrap_or(i64::MIN).to_le_bytes());
        let cursor = self.newest.map_or(0, |n| n.rem_euclid(cap) as u32);
        out.extend_from_slice(&cursor.to_le_bytes());
        out.extend_from_slice(&[0; 4]);
        out.extend_from_slice(&self.late.to_le_bytes());
        for (i, acc, n) in slots {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&acc.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
        }
        out
    }
}

/// Tiny deterministic generator so the oracles do not share the crate's RNG.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * (hi - lo)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }
}

/// Random archive trace: mostly increasing times with occasional jumps,
/// repeats and late samples.
pub fn random_trace(rng: &mut SplitMix, len: usize, step: f64) -> Vec<(f64, f64)> {
    let mut t = rng.uniform(-50.0, 50.0) * step;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        match rng.below(20) {
            0 => t += rng.uniform(0.0, 30.0) * step,
            1 => {
                let late = t - rng.uniform(0.0, 5.0) * step;
                out.push((late, rng.uniform(0.0, 500.0)));
                continue;
            }
            _ => t += rng.uniform(0.0, 0.8) * step,
        }
        out.push((t, rng.uniform(0.0, 500.0)));
    }
    out
}

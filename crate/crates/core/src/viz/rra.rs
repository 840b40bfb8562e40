//! Fixed-size round-robin archive of consolidated buckets.
//!
//! Bucket `i` covers `[i·step, (i+1)·step)` and lives in slot
//! `i mod capacity`. The archive retains buckets
//! `max(first, newest − capacity + 1) ..= newest`; buckets inside that
//! window that received no sample are reported as absent.
//!
//! # File layout (little-endian, version 1)
//!
//! | offset | size | field                                              |
//! |-------:|-----:|----------------------------------------------------|
//! | 0      | 8    | magic `KWRRA\0\0\x01` (last byte = version)        |
//! | 8      | 8    | step_s, f64                                        |
//! | 16     | 4    | capacity, u32                                      |
//! | 20     | 1    | consolidation: 0 average, 1 min, 2 max             |
//! | 21     | 3    | zero                                               |
//! | 24     | 8    | first bucket index ever written, i64 (MIN = empty) |
//! | 32     | 8    | newest bucket index, i64 (MIN = empty)             |
//! | 40     | 4    | cursor: slot of the newest bucket, u32             |
//! | 44     | 4    | zero                                               |
//! | 48     | 8    | late samples dropped, u64                          |
//! | 56     | 24×capacity | slots: index i64, accumulator f64, count u64 |
//!
//! The accumulator holds the running sum for `average` and the running
//! extreme for `min`/`max`. A never-written slot has index `i64::MIN`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"KWRRA\0\0\x01";
pub const HEADER_LEN: usize = 56;
pub const SLOT_LEN: usize = 24;
pub const EMPTY_INDEX: i64 = i64::MIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consolidation {
    Average,
    Min,
    Max,
}

impl Consolidation {
    pub fn code(self) -> u8 {
        match self {
            Consolidation::Average => 0,
            Consolidation::Min => 1,
            Consolidation::Max => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Consolidation::Average),
            1 => Some(Consolidation::Min),
            2 => Some(Consolidation::Max),
            _ => None,
        }
    }
}

impl FromStr for Consolidation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "average" | "avg" => Ok(Consolidation::Average),
            "min" => Ok(Consolidation::Min),
            "max" => Ok(Consolidation::Max),
            other => Err(format!("unknown consolidation {other:?}")),
        }
    }
}

impl fmt::Display for Consolidation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Consolidation::Average => "average",
            Consolidation::Min => "min",
            Consolidation::Max => "max",
        })
    }
}

/// Shape of one archive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSpec {
    pub step_s: f64,
    pub capacity: u32,
    pub consolidation: Consolidation,
}

impl ArchiveSpec {
    pub fn new(step_s: f64, capacity: u32, consolidation: Consolidation) -> Result<Self, String> {
        if !(step_s.is_finite() && step_s > 0.0) {
            return Err(format!("archive step must be > 0, got {step_s}"));
        }
        if capacity == 0 {
            return Err("archive capacity must be > 0".into());
        }
        Ok(ArchiveSpec {
            step_s,
            capacity,
            consolidation,
        })
    }

    /// 1 s × 3600, 60 s × 1440, 3600 s × 720, all averaged.
    pub fn defaults() -> Vec<ArchiveSpec> {
        vec![
            ArchiveSpec::new(1.0, 3600, Consolidation::Average).unwrap(),
            ArchiveSpec::new(60.0, 1440, Consolidation::Average).unwrap(),
            ArchiveSpec::new(3600.0, 720, Consolidation::Average).unwrap(),
        ]
    }

    /// Seconds of history the archive can hold.
    pub fn span_s(&self) -> f64 {
        self.step_s * f64::from(self.capacity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    index: i64,
    acc: f64,
    count: u64,
}

const NEVER: Slot = Slot {
    index: EMPTY_INDEX,
    acc: 0.0,
    count: 0,
};

/// What happened to a sample passed to [`RoundRobinArchive::update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Accepted,
    /// Older than the newest bucket.
    Late,
    /// Non-finite or negative value, or non-finite time.
    Invalid,
}

/// One consolidated bucket as returned by reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    pub start: f64,
    pub value: Option<f64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArchiveFormatError {
    #[error("bad magic bytes")]
    Magic,
    #[error("unsupported archive version {0}")]
    Version(u8),
    #[error("truncated archive: expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid header field {0}")]
    Header(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRobinArchive {
    spec: ArchiveSpec,
    slots: Vec<Slot>,
    first: Option<i64>,
    newest: Option<i64>,
    late_dropped: u64,
}

impl RoundRobinArchive {
    pub fn new(spec: ArchiveSpec) -> Self {
        RoundRobinArchive {
            spec,
            slots: vec![NEVER; spec.capacity as usize],
            first: None,
            newest: None,
            late_dropped: 0,
        }
    }

    pub fn spec(&self) -> &ArchiveSpec {
        &self.spec
    }

    pub fn step_s(&self) -> f64 {
        self.spec.step_s
    }

    pub fn capacity(&self) -> u32 {
        self.spec.capacity
    }

    pub fn late_dropped(&self) -> u64 {
        self.late_dropped
    }

    pub fn newest_index(&self) -> Option<i64> {
        self.newest
    }

    pub fn bucket_index(&self, t: f64) -> i64 {
        (t / self.spec.step_s).floor() as i64
    }

    fn pos(&self, index: i64) -> usize {
        index.rem_euclid(i64::from(self.spec.capacity)) as usize
    }

    /// Oldest retained bucket index.
    pub fn oldest_index(&self) -> Option<i64> {
        let newest = self.newest?;
        let window_start = newest - i64::from(self.spec.capacity) + 1;
        Some(self.first.unwrap_or(newest).max(window_start))
    }

    pub fn update(&mut self, t: f64, w: f64) -> UpdateOutcome {
        if !(t.is_finite() && w.is_finite() && w >= 0.0) {
            return UpdateOutcome::Invalid;
        }
        let idx = self.bucket_index(t);
        match self.newest {
            Some(n) if idx < n => {
                self.late_dropped += 1;
                return UpdateOutcome::Late;
            }
            Some(n) if idx > n => self.advance(n, idx),
            Some(_) => {}
            None => {
                self.first = Some(idx);
                self.newest = Some(idx);
                let p = self.pos(idx);
                self.slots[p] = Slot {
                    index: idx,
                    acc: 0.0,
                    count: 0,
                };
            }
        }
        let p = self.pos(idx);
        let consolidation = self.spec.consolidation;
        let slot = &mut self.slots[p];
        slot.acc = if slot.count == 0 {
            w
        } else {
            match consolidation {
                Consolidation::Average => slot.acc + w,
                Consolidation::Min => slot.acc.min(w),
                Consolidation::Max => slot.acc.max(w),
            }
        };
        slot.count += 1;
        UpdateOutcome::Accepted
    }

    /// Opens buckets `newest+1 ..= to`, overwriting the slots they map to.
    fn advance(&mut self, newest: i64, to: i64) {
        let cap = i64::from(self.spec.capacity);
        let from = (newest + 1).max(to - cap + 1);
        for i in from..=to {
            let p = self.pos(i);
            self.slots[p] = Slot {
                index: i,
                acc: 0.0,
                count: 0,
            };
        }
        self.newest = Some(to);
    }

    fn value_of(&self, slot: &Slot) -> Option<f64> {
        if slot.count == 0 {
            return None;
        }
        Some(match self.spec.consolidation {
            Consolidation::Average => slot.acc / slot.count as f64,
            Consolidation::Min | Consolidation::Max => slot.acc,
        })
    }

    fn bucket(&self, index: i64) -> Bucket {
        let slot = &self.slots[self.pos(index)];
        let value = if slot.index == index {
            self.value_of(slot)
        } else {
            None
        };
        Bucket {
            start: index as f64 * self.spec.step_s,
            value,
        }
    }

    /// Every retained bucket, oldest first.
    pub fn buckets(&self) -> Vec<Bucket> {
        match (self.oldest_index(), self.newest) {
            (Some(lo), Some(hi)) => (lo..=hi).map(|i| self.bucket(i)).collect(),
            _ => Vec::new(),
        }
    }

    /// Retained buckets intersecting `[t_from, t_to)`, oldest first.
    pub fn fetch(&self, t_from: f64, t_to: f64) -> Vec<Bucket> {
        let (Some(lo), Some(hi)) = (self.oldest_index(), self.newest) else {
            return Vec::new();
        };
        // also rejects NaN bounds
        if t_from.partial_cmp(&t_to) != Some(std::cmp::Ordering::Less) {
            return Vec::new();
        }
        let step = self.spec.step_s;
        // Bucket i intersects when i·step < t_to and (i+1)·step > t_from.
        let first = ((t_from / step).floor() as i64).max(lo);
        let last = (((t_to / step).ceil() as i64) - 1).min(hi);
        (first..=last)
            .map(|i| self.bucket(i))
            .filter(|b| b.start < t_to && b.start + step > t_from)
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + SLOT_LEN * self.slots.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.spec.step_s.to_le_bytes());
        out.extend_from_slice(&self.spec.capacity.to_le_bytes());
        out.push(self.spec.consolidation.code());
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&self.first.unwrap_or(EMPTY_INDEX).to_le_bytes());
        out.extend_from_slice(&self.newest.unwrap_or(EMPTY_INDEX).to_le_bytes());
        let cursor = self.newest.map(|n| self.pos(n) as u32).unwrap_or(0);
        out.extend_from_slice(&cursor.to_le_bytes());
        out.extend_from_slice(&[0; 4]);
        out.extend_from_slice(&self.late_dropped.to_le_bytes());
        for s in &self.slots {
            out.extend_from_slice(&s.index.to_le_bytes());
            out.extend_from_slice(&s.acc.to_le_bytes());
            out.extend_from_slice(&s.count.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveFormatError> {
        if bytes.len() < HEADER_LEN {
            return Err(ArchiveFormatError::Length {
                expected: HEADER_LEN,
                got: bytes.len(),
            });
        }
        if bytes[..7] != MAGIC[..7] {
            return Err(ArchiveFormatError::Magic);
        }
        if bytes[7] != MAGIC[7] {
            return Err(ArchiveFormatError::Version(bytes[7]));
        }
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let i64_at = |o: usize| i64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());

        let step_s = f64_at(8);
        let capacity = u32_at(16);
        let consolidation =
            Consolidation::from_code(bytes[20]).ok_or(ArchiveFormatError::Header("consolidation"))?;
        let spec = ArchiveSpec::new(step_s, capacity, consolidation)
            .map_err(|_| ArchiveFormatError::Header("step/capacity"))?;
        let expected = HEADER_LEN + SLOT_LEN * capacity as usize;
        if bytes.len() != expected {
            return Err(ArchiveFormatError::Length {
                expected,
                got: bytes.len(),
            });
        }
        let first = Some(i64_at(24)).filter(|&i| i != EMPTY_INDEX);
        let newest = Some(i64_at(32)).filter(|&i| i != EMPTY_INDEX);
        if first.is_some() != newest.is_some() || first.zip(newest).is_some_and(|(f, n)| f > n) {
            return Err(ArchiveFormatError::Header("first/newest"));
        }
        let slots = (0..capacity as usize)
            .map(|k| {
                let o = HEADER_LEN + k * SLOT_LEN;
                Slot {
                    index: i64_at(o),
                    acc: f64_at(o + 8),
                    count: u64_at(o + 16),
                }
            })
            .collect();
        let archive = RoundRobinArchive {
            spec,
            slots,
            first,
            newest,
            late_dropped: u64_at(48),
        };
        if newest.is_some_and(|n| archive.pos(n) as u32 != u32_at(40)) {
            return Err(ArchiveFormatError::Header("cursor"));
        }
        Ok(archive)
    }
}

//! Protocol-shaped wattmeter emulators.
//!
//! Pull devices answer a query with one reading per outlet. Push devices
//! produce a reading per outlet every refresh period into an internal
//! queue, which a poll drains.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::profile::{DeviceMode, DeviceProfile};

/// Deterministic bounded random walk.
///
/// The same seed fed the same sequence of times yields the same trace.
/// Step size scales with the square root of elapsed time; excursions past a
/// bound are reflected back inside.
#[derive(Debug, Clone)]
pub struct RandomWalk {
    rng: ChaCha8Rng,
    min: f64,
    max: f64,
    value: Option<f64>,
    last_t: f64,
}

impl RandomWalk {
    /// # Panics
    /// If `min > max` or either bound is not finite.
    pub fn new(seed: u64, min: f64, max: f64) -> Self {
        assert!(min.is_finite() && max.is_finite() && min <= max, "bad bounds [{min}, {max}]");
        RandomWalk {
            rng: ChaCha8Rng::seed_from_u64(seed),
            min,
            max,
            value: None,
            last_t: 0.0,
        }
    }

    pub fn sample(&mut self, t: f64) -> f64 {
        let span = self.max - self.min;
        let next = match self.value {
            None => self.min + span * self.rng.gen::<f64>(),
            Some(v) => {
                let dt = (t - self.last_t).clamp(0.0, 100.0);
                let step = span * 0.1 * dt.sqrt() * (2.0 * self.rng.gen::<f64>() - 1.0);
                let mut x = v + step;
                if x > self.max {
                    x = 2.0 * self.max - x;
                }
                if x < self.min {
                    x = 2.0 * self.min - x;
                }
                x.clamp(self.min, self.max)
            }
        };
        self.value = Some(next);
        self.last_t = t;
        next
    }
}

/// Stateless entry point: replays a walk over `times` from a fresh seed.
pub fn emulate_power(seed: u64, times: &[f64], bounds: (f64, f64)) -> Vec<f64> {
    let mut walk = RandomWalk::new(seed, bounds.0, bounds.1);
    times.iter().map(|&t| walk.sample(t)).collect()
}

/// Where an emulated device gets its power values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Emulation {
    RandomWalk { seed: u64, min_w: f64, max_w: f64 },
    /// Whitespace or newline separated watt values, replayed cyclically.
    Trace { path: PathBuf },
}

/// Knobs shared by every emulated device.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmulatorOptions {
    /// Nominal line voltage; when set, readings also carry volts and amps.
    pub voltage: Option<f64>,
    /// Every n-th poll times out.
    pub fail_every: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    /// Zero-based outlet index.
    pub outlet: u32,
    pub timestamp: f64,
    pub watts: f64,
    pub volts: Option<f64>,
    pub amps: Option<f64>,
}

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("device did not answer in time")]
    Timeout,
    #[error("cannot load trace {path}: {reason}")]
    Trace { path: PathBuf, reason: String },
}

/// Driver-facing device interface.
pub trait Wattmeter: Send {
    fn mode(&self) -> DeviceMode;
    fn outlets(&self) -> u32;
    /// Pull devices: read every outlet at `now`. Push devices: drain every
    /// reading produced up to `now`.
    fn poll(&mut self, now: f64) -> Result<Vec<Reading>, DeviceError>;
}

enum Source {
    Walks(Vec<RandomWalk>),
    Trace { values: Vec<f64>, next: usize },
}

impl Source {
    fn value(&mut self, outlet: u32, t: f64) -> f64 {
        match self {
            Source::Walks(w) => w[outlet as usize].sample(t),
            Source::Trace { values, next } => {
                let v = values[*next % values.len()];
                *next += 1;
                v
            }
        }
    }
}

/// Most pending pushes a device keeps before discarding the oldest.
const PUSH_BACKLOG: usize = 100_000;

pub struct EmulatedDevice {
    profile: DeviceProfile,
    options: EmulatorOptions,
    source: Source,
    polls: u64,
    // Push mode state.
    started_at: f64,
    next_push_tick: u64,
    pending: VecDeque<Reading>,
}

impl EmulatedDevice {
    /// Creates a device that starts producing at `start` (push mode ticks
    /// at `start + k·refresh` for k ≥ 1).
    pub fn new(
        profile: DeviceProfile,
        emulation: &Emulation,
        options: EmulatorOptions,
        start: f64,
    ) -> Result<Self, DeviceError> {
        let source = match emulation {
            Emulation::RandomWalk { seed, min_w, max_w } => Source::Walks(
                (0..profile.outlets)
                    .map(|o| {
                        let s = seed.wrapping_add(u64::from(o).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                        RandomWalk::new(s, *min_w, *max_w)
                    })
                    .collect(),
            ),
            Emulation::Trace { path } => Source::Trace {
                values: load_trace(path)?,
                next: 0,
            },
        };
        Ok(EmulatedDevice {
            profile,
            options,
            source,
            polls: 0,
            started_at: start,
            next_push_tick: 1,
            pending: VecDeque::new(),
        })
    }

    fn reading(&mut self, outlet: u32, t: f64) -> Reading {
        let watts = self.source.value(outlet, t);
        let (volts, amps) = match self.options.voltage {
            Some(v) if v > 0.0 => (Some(v), Some(watts / v)),
            _ => (None, None),
        };
        Reading {
            outlet,
            timestamp: t,
            watts,
            volts,
            amps,
        }
    }

    fn produce_pushes(&mut self, now: f64) {
        let period = self.profile.refresh_period_s;
        loop {
            let t = self.started_at + self.next_push_tick as f64 * period;
            if t > now + 1e-9 {
                break;
            }
            for outlet in 0..self.profile.outlets {
                let r = self.reading(outlet, t);
                if self.pending.len() >= PUSH_BACKLOG {
                    self.pending.pop_front();
                }
                self.pending.push_back(r);
            }
            self.next_push_tick += 1;
        }
    }
}

impl Wattmeter for EmulatedDevice {
    fn mode(&self) -> DeviceMode {
        self.profile.mode
    }

    fn outlets(&self) -> u32 {
        self.profile.outlets
    }

    fn poll(&mut self, now: f64) -> Result<Vec<Reading>, DeviceError> {
        self.polls += 1;
        if let Some(n) = self.options.fail_every {
            if n > 0 && self.polls.is_multiple_of(n) {
                if self.profile.mode == DeviceMode::Push {
                    // Readings keep accumulating on the device side.
                    self.produce_pushes(now);
                }
                return Err(DeviceError::Timeout);
            }
        }
        match self.profile.mode {
            DeviceMode::Pull => Ok((0..self.profile.outlets)
                .map(|o| self.reading(o, now))
                .collect()),
            DeviceMode::Push => {
                self.produce_pushes(now);
                Ok(self.pending.drain(..).collect())
            }
        }
    }
}

fn load_trace(path: &Path) -> Result<Vec<f64>, DeviceError> {
    let err = |reason: String| DeviceError::Trace {
        path: path.to_owned(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| err(format!("invalid value {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(err("trace is empty".into()));
    }
    Ok(values)
}

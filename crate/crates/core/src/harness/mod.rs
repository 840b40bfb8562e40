//! Benchmark scenarios and the pollster client.
//!
//! A scenario runs a driver fleet against a TCP bus on loopback and counts
//! what a single subscriber receives. Everything runs in one process; the
//! counting consumer is its own thread and never shares locks with the
//! drivers.
//!
//! Results are written as JSON. For each run the schema is:
//!
//! | field              | meaning                                                 |
//! |--------------------|---------------------------------------------------------|
//! | `frames_published` | frames accepted by the publisher                        |
//! | `frames_received`  | frames decoded by the consumer                          |
//! | `drops`            | `frames_published - frames_received`                    |
//! | `queue_drops`      | frames discarded by the publisher's subscriber queues   |
//! | `verified`         | frames whose signature checked (signed runs only)       |
//! | `jitter_mean_s`    | mean of `abs(inter-arrival - interval)` per probe       |
//! | `jitter_p95_s`     | 95th percentile of the same                             |
//! | `max_burst`        | most frames decoded from a single socket read           |
//! | `cpu_*_s`          | user + system CPU time                                  |

mod pollster;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pollster::{poll_once, run_pollster, PollError, Pollster, Sample};

use crate::bus::{
    BusError, Endpoint, Publisher, PublisherOptions, Subscriber, SubscriberEvent, Subscription,
};
use crate::drivers::{catalog_entry, DriverManager, DriverSpec, Emulation, ManagerOptions};
use crate::model::decode_measurement;
use crate::signing::{verify, SigningSecret};

/// Key shared by every signed benchmark run.
const BENCH_SECRET: &[u8] = b"kwapi-benchmark-shared-secret-32";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fleet {
    /// 1,000 single-outlet IPMI cards.
    Ipmi,
    /// 100 PDUs with 10 metered outlets each.
    Pdu,
}

impl Fleet {
    /// Frames per tick across the fleet.
    pub fn probes(self) -> u64 {
        1000
    }

    /// Driver specs for the fleet at `interval_s`, seeded from `seed`.
    pub fn specs(self, interval_s: f64, seed: u64) -> Vec<DriverSpec> {
        let (driver, count, outlets) = match self {
            Fleet::Ipmi => ("ipmi-emulated", 1000, 1),
            Fleet::Pdu => ("pdu-emulated", 100, 10),
        };
        let entry = catalog_entry(driver).expect("bench profiles are in the catalog");
        (0..count)
            .map(|i| DriverSpec {
                topic: format!("bench/{}{i:04}", driver.trim_end_matches("-emulated"))
                    .parse()
                    .expect("valid probe id"),
                profile: entry.profile(outlets),
                interval_s,
                emulation: Emulation::RandomWalk {
                    seed: seed.wrapping_add(i),
                    min_w: 80.0,
                    max_w: 250.0,
                },
                options: Default::default(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub fleet: Fleet,
    pub signed: bool,
    pub interval_s: f64,
    pub duration_s: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    42
}

impl Scenario {
    /// The four fleet/signing combinations at one measurement per second
    /// for a minute.
    pub fn named(name: &str) -> Option<Scenario> {
        let (fleet, signed) = match name {
            "IPMI message unsigned" => (Fleet::Ipmi, false),
            "IPMI message signed" => (Fleet::Ipmi, true),
            "PDU message unsigned" => (Fleet::Pdu, false),
            "PDU message signed" => (Fleet::Pdu, true),
            _ => return None,
        };
        Some(Scenario {
            name: name.to_owned(),
            fleet,
            signed,
            interval_s: 1.0,
            duration_s: 60.0,
            seed: default_seed(),
        })
    }

    pub const NAMES: [&'static str; 4] = [
        "IPMI message unsigned",
        "IPMI message signed",
        "PDU message unsigned",
        "PDU message signed",
    ];

    /// Ticks each driver performs.
    pub fn ticks(&self) -> u64 {
        (self.duration_s / self.interval_s).round().max(1.0) as u64
    }

    pub fn expected_frames(&self) -> u64 {
        self.ticks() * self.fleet.probes()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.interval_s.is_finite() && self.interval_s > 0.0) {
            return Err(HarnessError::Scenario(format!("bad interval {}", self.interval_s)));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(HarnessError::Scenario(format!("bad duration {}", self.duration_s)));
        }
        for spec in self.fleet.specs(self.interval_s, self.seed).iter().take(1) {
            spec.validate().map_err(HarnessError::Scenario)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("bus setup failed: {0}")]
    Bus(#[from] BusError),
    #[error("consumer never connected to {0}")]
    NoConsumer(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub frames_expected: u64,
    pub frames_published: u64,
    pub frames_received: u64,
    pub drops: u64,
    pub queue_drops: u64,
    pub malformed: u64,
    pub verified: u64,
    pub verify_failures: u64,
    pub duration_s: f64,
    pub jitter_mean_s: f64,
    pub jitter_p95_s: f64,
    pub max_burst: usize,
    pub cpu_process_s: f64,
    pub cpu_consumer_s: f64,
    /// False when the consumer died mid-run.
    pub valid: bool,
}

/// User + system CPU seconds for the calling thread or the whole process.
fn cpu_seconds(who: libc::c_int) -> f64 {
    // SAFETY: getrusage only writes into the zeroed struct we pass.
    let usage = unsafe {
        let mut u: libc::rusage = std::mem::zeroed();
        if libc::getrusage(who, &mut u) != 0 {
            return f64::NAN;
        }
        u
    };
    let tv = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 * 1e-6;
    tv(usage.ru_utime) + tv(usage.ru_stime)
}

pub fn process_cpu_seconds() -> f64 {
    cpu_seconds(libc::RUSAGE_SELF)
}

pub fn thread_cpu_seconds() -> f64 {
    cpu_seconds(libc::RUSAGE_THREAD)
}

#[derive(Default)]
struct ConsumerTally {
    received: u64,
    malformed: u64,
    verified: u64,
    verify_failures: u64,
    deviations: Vec<f64>,
    max_burst: usize,
    cpu_s: f64,
}

fn consume(
    mut sub: Subscriber,
    interval_s: f64,
    secret: Option<SigningSecret>,
    received: &AtomicU64,
    stop: &AtomicBool,
) -> ConsumerTally {
    let cpu0 = thread_cpu_seconds();
    let mut tally = ConsumerTally::default();
    let mut last: HashMap<String, Instant> = HashMap::new();
    while !stop.load(Ordering::SeqCst) {
        let Some(SubscriberEvent::Frames { frames, received_at }) =
            sub.next_event(Duration::from_millis(50))
        else {
            continue;
        };
        tally.max_burst = tally.max_burst.max(frames.len());
        for f in frames {
            match decode_measurement(&f.payload) {
                Ok(m) => {
                    if let Some(secret) = &secret {
                        if verify(&m, secret) {
                            tally.verified += 1;
                        } else {
                            tally.verify_failures += 1;
                        }
                    }
                }
                Err(_) => tally.malformed += 1,
            }
            match last.get_mut(&f.topic) {
                Some(prev) => {
                    let dt = received_at.saturating_duration_since(*prev).as_secs_f64();
                    tally.deviations.push((dt - interval_s).abs());
                    *prev = received_at;
                }
                None => {
                    last.insert(f.topic, received_at);
                }
            }
            tally.received += 1;
        }
        received.store(tally.received, Ordering::Release);
    }
    tally.cpu_s = thread_cpu_seconds() - cpu0;
    tally
}

/// Mean and 95th percentile (nearest rank) of `values`.
pub fn mean_p95(values: &mut [f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let rank = ((0.95 * values.len() as f64).ceil() as usize).clamp(1, values.len());
    (mean, values[rank - 1])
}

/// Runs one scenario end to end and reports what the consumer saw.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioResult, HarnessError> {
    s.validate()?;
    let publisher = Arc::new(Publisher::bind_with(
        &Endpoint::tcp("127.0.0.1", 0),
        PublisherOptions::default(),
    )?);
    let endpoint = publisher.endpoint().cloned().expect("socket publisher");
    let secret = s
        .signed
        .then(|| SigningSecret::new(BENCH_SECRET.to_vec()).expect("long enough"));

    let sub = Subscriber::connect(&endpoint, &Subscription::new("bench/"));
    if !publisher.wait_for_subscribers(1, Duration::from_secs(10)) {
        return Err(HarnessError::NoConsumer(endpoint.to_string()));
    }
    let received = Arc::new(AtomicU64::new(0));
    let stop = Arc::new(AtomicBool::new(false));
    let consumer = {
        let received = Arc::clone(&received);
        let stop = Arc::clone(&stop);
        let secret = secret.clone();
        let interval = s.interval_s;
        thread::Builder::new()
            .name("bench-consumer".into())
            .spawn(move || consume(sub, interval, secret, &received, &stop))
            .map_err(BusError::Io)?
    };

    let cpu0 = process_cpu_seconds();
    let started = Instant::now();
    let mut manager = DriverManager::start(
        s.fleet.specs(s.interval_s, s.seed),
        Arc::clone(&publisher),
        secret,
        ManagerOptions {
            tick_budget: Some(s.ticks()),
            ..Default::default()
        },
    );
    let budget = Duration::from_secs_f64(s.duration_s * 2.0 + 30.0);
    manager.wait_completed(budget);
    let duration_s = started.elapsed().as_secs_f64();
    let published: u64 = manager.statuses().iter().map(|st| st.published).sum();
    manager.stop();
    drop(manager);

    // Let the consumer drain: stop once everything arrived or nothing moved
    // for a second.
    publisher.flush(Duration::from_secs(10));
    let mut seen = received.load(Ordering::Acquire);
    let mut idle_since = Instant::now();
    while seen < published && idle_since.elapsed() < Duration::from_secs(1) {
        thread::sleep(Duration::from_millis(20));
        let now = received.load(Ordering::Acquire);
        if now != seen {
            seen = now;
            idle_since = Instant::now();
        }
    }
    stop.store(true, Ordering::SeqCst);
    let (mut tally, valid) = match consumer.join() {
        Ok(t) => (t, true),
        Err(_) => (ConsumerTally::default(), false),
    };
    let cpu_process_s = process_cpu_seconds() - cpu0;
    let (jitter_mean_s, jitter_p95_s) = mean_p95(&mut tally.deviations);
    let stats = publisher.stats();
    let result = ScenarioResult {
        scenario: s.clone(),
        frames_expected: s.expected_frames(),
        frames_published: published,
        frames_received: tally.received,
        drops: published.saturating_sub(tally.received),
        queue_drops: stats.frames_dropped,
        malformed: tally.malformed,
        verified: tally.verified,
        verify_failures: tally.verify_failures,
        duration_s,
        jitter_mean_s,
        jitter_p95_s,
        max_burst: tally.max_burst,
        cpu_process_s,
        cpu_consumer_s: tally.cpu_s,
        valid,
    };
    info!(
        "{} @ {} s: published {} received {} drops {} p95 jitter {:.4} s burst {}",
        s.name,
        s.interval_s,
        result.frames_published,
        result.frames_received,
        result.drops,
        result.jitter_p95_s,
        result.max_burst
    );
    Ok(result)
}

/// Interval points of the sweep, in seconds.
pub const SWEEP_INTERVALS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// Runs `base` once per interval, one result row each.
pub fn run_sweep(base: &Scenario, intervals: &[f64]) -> Result<Vec<ScenarioResult>, HarnessError> {
    intervals
        .iter()
        .map(|&interval_s| {
            run_scenario(&Scenario {
                interval_s,
                ..base.clone()
            })
        })
        .collect()
}

use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{error, info, warn};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;

use super::{poll_once, DeviceMode, DriverError, DriverSpec};
use crate::bus::{BusError, Frame, Publisher, PublisherOptions};
use crate::clock::{Clock, SystemClock};
use crate::config::FrameworkConfig;
use crate::model::encode_measurement;
use crate::signing::{sign, SigningSecret};

#[derive(Debug, Clone)]
pub struct ManagerOptions {
    pub watchdog_period: Duration,
    /// Consecutive failed restarts before a driver is quarantined.
    pub restart_limit: u32,
    /// Stop each worker after this many ticks (benchmarks).
    pub tick_budget: Option<u64>,
    /// Offset each worker's first tick by a deterministic fraction of its
    /// interval so a large fleet does not fire in lockstep.
    pub spread_phases: bool,
    /// JSON-lines status dump rewritten after every watchdog sweep.
    pub status_file: Option<PathBuf>,
}

impl Default for ManagerOptions {
    fn default() -> Self {
        ManagerOptions {
            watchdog_period: Duration::from_secs(10),
            restart_limit: 5,
            tick_budget: None,
            spread_phases: true,
            status_file: None,
        }
    }
}

/// Externally visible state of one driver worker.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriverStatus {
    pub topic: String,
    pub alive: bool,
    pub last_emit_timestamp: Option<f64>,
    pub restart_count: u64,
    pub quarantined: bool,
    pub completed: bool,
    pub ticks: u64,
    pub published: u64,
    pub lost: u64,
}

#[derive(Default)]
struct WorkerCounters {
    ticks: AtomicU64,
    published: AtomicU64,
    lost: AtomicU64,
    last_emit_bits: AtomicU64,
    has_emitted: AtomicBool,
    // Reset on every (re)start.
    ticked_since_start: AtomicBool,
    completed: AtomicBool,
}

struct WorkerSlot {
    spec: Arc<DriverSpec>,
    handle: Option<JoinHandle<()>>,
    kill: Arc<AtomicBool>,
    counters: Arc<WorkerCounters>,
    restart_count: u64,
    consecutive_failures: u32,
    quarantined: bool,
}

impl WorkerSlot {
    fn alive(&self) -> bool {
        self.handle.as_ref().is_some_and(|h| !h.is_finished())
    }

    fn status(&self) -> DriverStatus {
        let c = &self.counters;
        DriverStatus {
            topic: self.spec.topic.topic(),
            alive: self.alive(),
            last_emit_timestamp: c
                .has_emitted
                .load(Ordering::Relaxed)
                .then(|| f64::from_bits(c.last_emit_bits.load(Ordering::Relaxed))),
            restart_count: self.restart_count,
            quarantined: self.quarantined,
            completed: c.completed.load(Ordering::Relaxed),
            ticks: c.ticks.load(Ordering::Relaxed),
            published: c.published.load(Ordering::Relaxed),
            lost: c.lost.load(Ordering::Relaxed),
        }
    }
}

struct Shared {
    workers: Mutex<Vec<WorkerSlot>>,
    publisher: Arc<Publisher>,
    secret: Option<SigningSecret>,
    clock: Arc<dyn Clock>,
    options: ManagerOptions,
    stop: AtomicBool,
    started: Instant,
    snapshot: RwLock<Vec<DriverStatus>>,
}

/// Spawns one worker thread per driver and supervises them.
pub struct DriverManager {
    shared: Arc<Shared>,
    watchdog: Option<JoinHandle<()>>,
}

impl DriverManager {
    pub fn start(
        specs: Vec<DriverSpec>,
        publisher: Arc<Publisher>,
        secret: Option<SigningSecret>,
        options: ManagerOptions,
    ) -> DriverManager {
        Self::start_with_clock(specs, publisher, secret, options, Arc::new(SystemClock))
    }

    pub fn start_with_clock(
        specs: Vec<DriverSpec>,
        publisher: Arc<Publisher>,
        secret: Option<SigningSecret>,
        options: ManagerOptions,
        clock: Arc<dyn Clock>,
    ) -> DriverManager {
        let shared = Arc::new(Shared {
            workers: Mutex::new(Vec::with_capacity(specs.len())),
            publisher,
            secret,
            clock,
            options,
            stop: AtomicBool::new(false),
            started: Instant::now(),
            snapshot: RwLock::new(Vec::new()),
        });
        {
            let mut workers = shared.workers.lock();
            for spec in specs {
                let mut slot = WorkerSlot {
                    spec: Arc::new(spec),
                    handle: None,
                    kill: Arc::new(AtomicBool::new(false)),
                    counters: Arc::new(WorkerCounters::default()),
                    restart_count: 0,
                    consecutive_failures: 0,
                    quarantined: false,
                };
                spawn_worker(&shared, &mut slot);
                workers.push(slot);
            }
        }
        let watchdog = {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name("driver-watchdog".into())
                .spawn(move || watchdog_loop(shared))
                .expect("spawn watchdog")
        };
        DriverManager {
            shared,
            watchdog: Some(watchdog),
        }
    }

    pub fn statuses(&self) -> Vec<DriverStatus> {
        self.shared.workers.lock().iter().map(WorkerSlot::status).collect()
    }

    pub fn status(&self, topic: &str) -> Option<DriverStatus> {
        self.shared
            .workers
            .lock()
            .iter()
            .find(|w| w.spec.topic.topic() == topic)
            .map(WorkerSlot::status)
    }

    /// Statuses as of the last watchdog sweep.
    pub fn last_sweep(&self) -> Vec<DriverStatus> {
        self.shared.snapshot.read().clone()
    }

    /// Makes a worker exit at its next wake-up, as if it had crashed.
    /// Returns false for an unknown topic.
    pub fn kill_worker(&self, topic: &str) -> bool {
        let workers = self.shared.workers.lock();
        match workers.iter().find(|w| w.spec.topic.topic() == topic) {
            Some(w) => {
                w.kill.store(true, Ordering::SeqCst);
                if let Some(h) = &w.handle {
                    h.thread().unpark();
                }
                true
            }
            None => false,
        }
    }

    /// Runs one supervision sweep immediately.
    pub fn sweep(&self) {
        sweep(&self.shared);
    }

    /// Waits until every worker has used up its tick budget (or was
    /// quarantined). Returns false on timeout.
    pub fn wait_completed(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            let done = self.shared.workers.lock().iter().all(|w| {
                w.quarantined || w.counters.completed.load(Ordering::Relaxed)
            });
            if done {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(10));
        }
    }

    pub fn publisher(&self) -> &Arc<Publisher> {
        &self.shared.publisher
    }

    pub fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.watchdog.take() {
            h.thread().unpark();
            let _ = h.join();
        }
        let handles: Vec<JoinHandle<()>> = self
            .shared
            .workers
            .lock()
            .iter_mut()
            .filter_map(|w| w.handle.take())
            .collect();
        for h in &handles {
            h.thread().unpark();
        }
        for h in handles {
            let _ = h.join();
        }
    }
}

impl Drop for DriverManager {
    fn drop(&mut self) {
        self.stop();
    }
}

fn spawn_worker(shared: &Arc<Shared>, slot: &mut WorkerSlot) {
    slot.kill.store(false, Ordering::SeqCst);
    slot.counters.ticked_since_start.store(false, Ordering::SeqCst);
    let spec = Arc::clone(&slot.spec);
    let kill = Arc::clone(&slot.kill);
    let counters = Arc::clone(&slot.counters);
    let shared = Arc::clone(shared);
    let name = format!("driver-{}", spec.topic);
    match thread::Builder::new()
        .name(name)
        .stack_size(256 * 1024)
        .spawn(move || worker_loop(&spec, &kill, &counters, &shared))
    {
        Ok(h) => slot.handle = Some(h),
        Err(e) => {
            error!("cannot spawn worker for {}: {e}", slot.spec.topic);
            slot.handle = None;
        }
    }
}

fn phase_fraction(topic: &str) -> f64 {
    // FNV-1a, only used to spread start times.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in topic.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn worker_loop(spec: &DriverSpec, kill: &AtomicBool, counters: &WorkerCounters, shared: &Shared) {
    let mut device = match spec.build_device(shared.clock.now()) {
        Ok(d) => d,
        Err(e) => {
            warn!("{}: cannot open device: {e}", spec.topic);
            return;
        }
    };
    let interval = Duration::from_secs_f64(spec.interval_s);
    let phase = if shared.options.spread_phases {
        interval.mul_f64(phase_fraction(&spec.topic.topic()))
    } else {
        Duration::ZERO
    };
    let start = Instant::now() + phase;
    let budget = shared.options.tick_budget;
    let mut tick: u64 = 0;
    let mut done = counters.ticks.load(Ordering::Relaxed);

    loop {
        if budget.is_some_and(|b| done >= b) {
            counters.completed.store(true, Ordering::SeqCst);
            return;
        }
        let due = start + interval.mul_f64(tick as f64);
        loop {
            if kill.load(Ordering::SeqCst) || shared.stop.load(Ordering::SeqCst) {
                return;
            }
            let now = Instant::now();
            if now >= due {
                break;
            }
            thread::park_timeout(due - now);
        }

        let outlets = u64::from(spec.profile.outlets);
        match poll_once(spec, &mut device, shared.clock.now()) {
            Ok(ms) => {
                let mut sent = 0u64;
                for m in ms {
                    let m = match &shared.secret {
                        Some(secret) => sign(&m, secret),
                        None => m,
                    };
                    let frame = Frame {
                        topic: m.probe.topic(),
                        payload: encode_measurement(&m),
                    };
                    if let Err(e) = shared.publisher.publish(&frame) {
                        warn!("{}: cannot publish: {e}", spec.topic);
                        counters.lost.fetch_add(1, Ordering::Relaxed);
                        continue;
                    }
                    counters.last_emit_bits.store(m.timestamp.to_bits(), Ordering::Relaxed);
                    counters.has_emitted.store(true, Ordering::Relaxed);
                    sent += 1;
                }
                counters.published.fetch_add(sent, Ordering::Relaxed);
            }
            Err(e @ DriverError::Device { .. }) | Err(e @ DriverError::Reading { .. }) => {
                warn!("measurement lost: {e}");
                if spec.profile.mode == DeviceMode::Pull {
                    counters.lost.fetch_add(outlets, Ordering::Relaxed);
                }
            }
        }
        counters.ticks.fetch_add(1, Ordering::Relaxed);
        counters.ticked_since_start.store(true, Ordering::SeqCst);
        done += 1;

        // If the thread fell behind, skip the missed slots rather than
        // firing a burst of catch-up ticks.
        tick += 1;
        let elapsed = Instant::now().saturating_duration_since(start);
        let behind = (elapsed.as_secs_f64() / spec.interval_s).floor() as u64;
        if behind > tick {
            tick = behind;
        }
    }
}

fn watchdog_loop(shared: Arc<Shared>) {
    let period = shared.options.watchdog_period;
    let mut next = Instant::now() + period;
    while !shared.stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now < next {
            thread::park_timeout(next - now);
            continue;
        }
        sweep(&shared);
        next += period;
        if next < Instant::now() {
            next = Instant::now() + period;
        }
    }
}

fn sweep(shared: &Arc<Shared>) {
    if shared.stop.load(Ordering::SeqCst) {
        return;
    }
    let limit = shared.options.restart_limit;
    let mut workers = shared.workers.lock();
    for slot in workers.iter_mut() {
        if slot.quarantined || slot.alive() || slot.counters.completed.load(Ordering::SeqCst) {
            continue;
        }
        if let Some(h) = slot.handle.take() {
            let _ = h.join();
        }
        if slot.counters.ticked_since_start.load(Ordering::SeqCst) {
            slot.consecutive_failures = 0;
        } else {
            slot.consecutive_failures += 1;
        }
        if slot.consecutive_failures >= limit {
            slot.quarantined = true;
            error!(
                "driver {} quarantined after {} consecutive failed restarts",
                slot.spec.topic, slot.consecutive_failures
            );
            continue;
        }
        info!("restarting driver {}", slot.spec.topic);
        spawn_worker(shared, slot);
        slot.restart_count += 1;
    }
    let snapshot: Vec<DriverStatus> = workers.iter().map(WorkerSlot::status).collect();
    drop(workers);
    if let Some(path) = &shared.options.status_file {
        if let Err(e) = write_status_file(path, &snapshot) {
            warn!("cannot write status file {}: {e}", path.display());
        }
    }
    *shared.snapshot.write() = snapshot;
    log::debug!(
        "watchdog sweep done, uptime {:.0} s",
        shared.started.elapsed().as_secs_f64()
    );
}

fn write_status_file(path: &PathBuf, rows: &[DriverStatus]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for row in rows {
            serde_json::to_writer(&mut f, row)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    std::fs::rename(tmp, path)
}

/// Driver daemon: binds the bus publisher from `cfg` and supervises every
/// configured probe until the process is killed.
pub fn run_manager(cfg: &FrameworkConfig) -> Result<(), BusError> {
    let publisher = Arc::new(Publisher::bind_with(
        &cfg.bus.publish_bind,
        PublisherOptions {
            queue_capacity: cfg.bus.queue_capacity,
            ..Default::default()
        },
    )?);
    info!(
        "driver manager publishing {} probes on {}",
        cfg.probes.len(),
        cfg.bus.publish_bind
    );
    let _manager = DriverManager::start(
        cfg.probes.clone(),
        publisher,
        cfg.signing_secret.clone(),
        ManagerOptions {
            watchdog_period: Duration::from_secs_f64(cfg.drivers.watchdog_period_s),
            restart_limit: cfg.drivers.restart_limit,
            status_file: cfg.drivers.status_file.clone(),
            ..Default::default()
        },
    );
    loop {
        thread::park();
    }
}

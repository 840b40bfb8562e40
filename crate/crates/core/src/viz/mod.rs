//! Visualization consumer: per-probe round-robin archives at several
//! granularities, summary statistics with cost, and cached SVG charts.
//!
//! HTTP routes (no auth):
//!
//! * `GET /charts/<site>/<name>.svg[?from=&to=]`
//! * `GET /stats/<site>/<name>[?from=&to=]` → [`ChartStats`] as JSON

mod chart;
mod rra;
mod stats;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};
use parking_lot::{Mutex, RwLock};
use serde_json::json;

pub use chart::{read_stamp, render_svg, ChartCache, ChartError, RenderOutcome};
pub use rra::{
    ArchiveFormatError, ArchiveSpec, Bucket, Consolidation, RoundRobinArchive, UpdateOutcome,
    EMPTY_INDEX, HEADER_LEN, MAGIC, SLOT_LEN,
};
pub use stats::{compute_stats, ChartStats, StatsError};

use crate::api::respond_bytes;
use crate::bus::{Endpoint, Frame, Subscriber, Subscription};
use crate::config::FrameworkConfig;
use crate::model::{decode_measurement, Measurement, ProbeId};
use crate::signing::{verify, SigningSecret};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct VizCounters {
    pub ingested: u64,
    pub rejected: u64,
    pub late: u64,
    pub malformed: u64,
}

/// Archives for one probe, one per configured granularity.
pub type ProbeArchives = Vec<RoundRobinArchive>;

pub struct VizState {
    specs: Vec<ArchiveSpec>,
    probes: RwLock<HashMap<ProbeId, Arc<Mutex<ProbeArchives>>>>,
    secret: Option<SigningSecret>,
    price_eur_per_kwh: f64,
    cache: ChartCache,
    ingested: AtomicU64,
    rejected: AtomicU64,
    late: AtomicU64,
    malformed: AtomicU64,
}

impl VizState {
    pub fn new(
        specs: Vec<ArchiveSpec>,
        secret: Option<SigningSecret>,
        price_eur_per_kwh: f64,
        cache_dir: impl Into<PathBuf>,
    ) -> Self {
        VizState {
            specs,
            probes: RwLock::new(HashMap::new()),
            secret,
            price_eur_per_kwh,
            cache: ChartCache::new(cache_dir),
            ingested: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
            late: AtomicU64::new(0),
            malformed: AtomicU64::new(0),
        }
    }

    pub fn cache(&self) -> &ChartCache {
        &self.cache
    }

    pub fn price(&self) -> f64 {
        self.price_eur_per_kwh
    }

    fn entry(&self, probe: &ProbeId) -> Arc<Mutex<ProbeArchives>> {
        if let Some(a) = self.probes.read().get(probe) {
            return Arc::clone(a);
        }
        let mut probes = self.probes.write();
        Arc::clone(probes.entry(probe.clone()).or_insert_with(|| {
            Arc::new(Mutex::new(
                self.specs.iter().map(|s| RoundRobinArchive::new(*s)).collect(),
            ))
        }))
    }

    pub fn ingest(&self, m: &Measurement) {
        if let Some(secret) = &self.secret {
            if !verify(m, secret) {
                self.rejected.fetch_add(1, Ordering::Relaxed);
                return;
            }
        }
        let entry = self.entry(&m.probe);
        let mut archives = entry.lock();
        let mut late = false;
        for a in archives.iter_mut() {
            if a.update(m.timestamp, m.watts) == UpdateOutcome::Late {
                late = true;
            }
        }
        drop(archives);
        self.ingested.fetch_add(1, Ordering::Relaxed);
        if late {
            self.late.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn ingest_frame(&self, frame: &Frame) {
        match decode_measurement(&frame.payload) {
            Ok(m) if m.probe.topic() == frame.topic => self.ingest(&m),
            _ => {
                self.malformed.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn counters(&self) -> VizCounters {
        VizCounters {
            ingested: self.ingested.load(Ordering::Relaxed),
            rejected: self.rejected.load(Ordering::Relaxed),
            late: self.late.load(Ordering::Relaxed),
            malformed: self.malformed.load(Ordering::Relaxed),
        }
    }

    pub fn probes(&self) -> Vec<ProbeId> {
        let mut v: Vec<ProbeId> = self.probes.read().keys().cloned().collect();
        v.sort();
        v
    }

    /// Snapshot of one probe's archives.
    pub fn archives(&self, probe: &ProbeId) -> Option<ProbeArchives> {
        let entry = Arc::clone(self.probes.read().get(probe)?);
        let archives = entry.lock().clone();
        Some(archives)
    }

    /// Picks the finest archive whose retention reaches back to `from`,
    /// falling back to the coarsest one.
    fn choose(archives: &[RoundRobinArchive], from: Option<f64>) -> Option<&RoundRobinArchive> {
        let mut sorted: Vec<&RoundRobinArchive> = archives.iter().collect();
        sorted.sort_by(|a, b| a.step_s().total_cmp(&b.step_s()));
        let Some(from) = from else {
            return sorted.first().copied();
        };
        sorted
            .iter()
            .find(|a| {
                a.oldest_index()
                    .is_some_and(|o| o as f64 * a.step_s() <= from)
            })
            .or(sorted.last())
            .copied()
    }

    pub fn stats(
        &self,
        probe: &ProbeId,
        range: Option<(f64, f64)>,
    ) -> Result<ChartStats, ChartError> {
        let archives = self
            .archives(probe)
            .ok_or_else(|| ChartError::NotFound(probe.topic()))?;
        let a = Self::choose(&archives, range.map(|r| r.0))
            .ok_or_else(|| ChartError::NotFound(probe.topic()))?;
        let buckets = match range {
            Some((from, to)) => a.fetch(from, to),
            None => a.buckets(),
        };
        Ok(compute_stats(&buckets, a.step_s(), self.price_eur_per_kwh)?)
    }

    pub fn render_chart(
        &self,
        probe: &ProbeId,
        range: Option<(f64, f64)>,
    ) -> Result<RenderOutcome, ChartError> {
        let archives = self
            .archives(probe)
            .ok_or_else(|| ChartError::NotFound(probe.topic()))?;
        let a = Self::choose(&archives, range.map(|r| r.0))
            .ok_or_else(|| ChartError::NotFound(probe.topic()))?;
        self.cache.render(probe, a, range, self.price_eur_per_kwh)
    }

    /// Writes every archive to `dir/<site>/<name>/<step>s-<consolidation>.rra`.
    pub fn save_all(&self, dir: &Path) -> std::io::Result<usize> {
        let entries: Vec<(ProbeId, Arc<Mutex<ProbeArchives>>)> = self
            .probes
            .read()
            .iter()
            .map(|(p, a)| (p.clone(), Arc::clone(a)))
            .collect();
        let mut n = 0;
        for (probe, archives) in entries {
            let pdir = dir.join(probe.site()).join(probe.name());
            std::fs::create_dir_all(&pdir)?;
            for a in archives.lock().iter() {
                let path = pdir.join(archive_file_name(a.spec()));
                let tmp = path.with_extension("tmp");
                std::fs::write(&tmp, a.to_bytes())?;
                std::fs::rename(&tmp, &path)?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Loads archives written by [`VizState::save_all`]. Files whose shape
    /// no longer matches a configured archive are skipped.
    pub fn load_all(&self, dir: &Path) -> std::io::Result<usize> {
        let mut n = 0;
        let Ok(sites) = std::fs::read_dir(dir) else {
            return Ok(0);
        };
        for site in sites.flatten() {
            let Ok(names) = std::fs::read_dir(site.path()) else {
                continue;
            };
            for name in names.flatten() {
                let probe = match ProbeId::new(
                    site.file_name().to_string_lossy(),
                    name.file_name().to_string_lossy(),
                ) {
                    Ok(p) => p,
                    Err(_) => continue,
                };
                let entry = self.entry(&probe);
                let mut archives = entry.lock();
                for a in archives.iter_mut() {
                    let path = name.path().join(archive_file_name(a.spec()));
                    let Ok(bytes) = std::fs::read(&path) else {
                        continue;
                    };
                    match RoundRobinArchive::from_bytes(&bytes) {
                        Ok(loaded) if loaded.spec() == a.spec() => {
                            *a = loaded;
                            n += 1;
                        }
                        Ok(_) => warn!("{} does not match the configured shape", path.display()),
                        Err(e) => warn!("cannot load {}: {e}", path.display()),
                    }
                }
            }
        }
        Ok(n)
    }
}

fn archive_file_name(spec: &ArchiveSpec) -> String {
    format!("{}s-{}.rra", spec.step_s, spec.consolidation)
}

fn parse_range(query: &str) -> Result<Option<(f64, f64)>, String> {
    let mut from = None;
    let mut to = None;
    for (k, v) in url::form_urlencoded::parse(query.as_bytes()) {
        let parsed: f64 = v.parse().map_err(|_| format!("invalid {k}: {v:?}"))?;
        match k.as_ref() {
            "from" => from = Some(parsed),
            "to" => to = Some(parsed),
            _ => {}
        }
    }
    match (from, to) {
        (None, None) => Ok(None),
        (Some(f), Some(t)) if f <= t => Ok(Some((f, t))),
        (Some(f), None) => Ok(Some((f, f64::MAX))),
        (None, Some(t)) => Ok(Some((f64::MIN, t))),
        _ => Err("from must not exceed to".into()),
    }
}

/// HTTP result: status, content type, body.
pub type VizResponse = (u16, &'static str, Vec<u8>);

pub fn handle_viz_request(state: &VizState, method: &str, url: &str) -> VizResponse {
    let err = |status: u16, msg: &str| {
        (
            status,
            "application/json",
            serde_json::to_vec(&json!({ "error": msg })).unwrap_or_default(),
        )
    };
    if method != "GET" {
        return err(405, "only GET is supported");
    }
    let (path, query) = url.split_once('?').unwrap_or((url, ""));
    let range = match parse_range(query) {
        Ok(r) => r,
        Err(e) => return err(400, &e),
    };
    let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
    match parts.as_slice() {
        ["charts", site, file] => {
            let Some(name) = file.strip_suffix(".svg") else {
                return err(404, "charts are served as .svg");
            };
            let Ok(probe) = ProbeId::new(*site, name) else {
                return err(400, "malformed probe path");
            };
            match state.render_chart(&probe, range) {
                Ok(out) => match std::fs::read(&out.path) {
                    Ok(bytes) => (200, "image/svg+xml", bytes),
                    Err(e) => err(500, &e.to_string()),
                },
                Err(ChartError::NotFound(_)) => err(404, "unknown probe"),
                Err(ChartError::Stats(_)) => err(404, "no data in range"),
                Err(e) => err(500, &e.to_string()),
            }
        }
        ["stats", site, name] => {
            let Ok(probe) = ProbeId::new(*site, *name) else {
                return err(400, "malformed probe path");
            };
            match state.stats(&probe, range) {
                Ok(s) => (
                    200,
                    "application/json",
                    serde_json::to_vec(&s).unwrap_or_default(),
                ),
                Err(ChartError::NotFound(_)) => err(404, "unknown probe"),
                Err(ChartError::Stats(_)) => err(404, "no data in range"),
                Err(e) => err(500, &e.to_string()),
            }
        }
        ["status"] => (
            200,
            "application/json",
            serde_json::to_vec(&state.counters()).unwrap_or_default(),
        ),
        _ => err(404, "no such endpoint"),
    }
}

pub struct VizOptions {
    pub listen: String,
    pub archives: Vec<ArchiveSpec>,
    pub secret: Option<SigningSecret>,
    pub price_eur_per_kwh: f64,
    pub archive_dir: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub flush_period: Duration,
    pub subscription: Subscription,
}

impl VizOptions {
    pub fn from_config(cfg: &FrameworkConfig) -> Self {
        VizOptions {
            listen: cfg.viz.listen.clone(),
            archives: cfg.viz.archives.clone(),
            secret: cfg.signing_secret.clone(),
            price_eur_per_kwh: cfg.viz.price_eur_per_kwh,
            archive_dir: Some(cfg.viz.archive_dir.clone()),
            cache_dir: cfg.viz.cache_dir.clone(),
            flush_period: Duration::from_secs_f64(cfg.viz.flush_period_s),
            subscription: cfg.viz.subscription.clone(),
        }
    }
}

/// Bus-fed archives with an HTTP front-end. Archives are flushed to disk
/// periodically and on drop.
pub struct VizConsumer {
    state: Arc<VizState>,
    server: Arc<tiny_http::Server>,
    addr: std::net::SocketAddr,
    archive_dir: Option<PathBuf>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl VizConsumer {
    pub fn start(bus: &Endpoint, options: VizOptions) -> std::io::Result<VizConsumer> {
        let state = Arc::new(VizState::new(
            options.archives.clone(),
            options.secret.clone(),
            options.price_eur_per_kwh,
            options.cache_dir.clone(),
        ));
        if let Some(dir) = &options.archive_dir {
            let n = state.load_all(dir)?;
            if n > 0 {
                info!("loaded {n} archives from {}", dir.display());
            }
        }
        let server = tiny_http::Server::http(options.listen.as_str())
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::AddrInUse, e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();

        let mut subscriber = Subscriber::connect(bus, &options.subscription);
        threads.push({
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            thread::Builder::new().name("viz-ingest".into()).spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    if let Some(f) = subscriber.recv_timeout(Duration::from_millis(200)) {
                        state.ingest_frame(&f);
                    }
                }
            })?
        });
        threads.push({
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            let server = Arc::clone(&server);
            thread::Builder::new().name("viz-http".into()).spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    let Ok(Some(req)) = server.recv_timeout(Duration::from_millis(200)) else {
                        continue;
                    };
                    let method = req.method().as_str().to_owned();
                    let (status, ctype, body) = handle_viz_request(&state, &method, req.url());
                    respond_bytes(req, status, ctype, body);
                }
            })?
        });
        if let Some(dir) = options.archive_dir.clone() {
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            let period = options.flush_period;
            threads.push(thread::Builder::new().name("viz-flush".into()).spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    thread::park_timeout(period);
                    match state.save_all(&dir) {
                        Ok(n) => debug!("flushed {n} archives"),
                        Err(e) => warn!("archive flush failed: {e}"),
                    }
                }
            })?);
        }
        Ok(VizConsumer {
            state,
            server,
            addr,
            archive_dir: options.archive_dir,
            stop,
            threads,
        })
    }

    pub fn state(&self) -> &Arc<VizState> {
        &self.state
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for VizConsumer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        for t in self.threads.drain(..) {
            t.thread().unpark();
            let _ = t.join();
        }
        if let Some(dir) = &self.archive_dir {
            if let Err(e) = self.state.save_all(dir) {
                warn!("final archive flush failed: {e}");
            }
        }
    }
}

/// Visualization daemon entry point; runs until the process is killed.
pub fn run_viz(cfg: &FrameworkConfig) -> std::io::Result<()> {
    let consumer = VizConsumer::start(&cfg.bus.subscribe, VizOptions::from_config(cfg))?;
    info!("viz serving on {} (bus {})", consumer.url(), cfg.bus.subscribe);
    loop {
        thread::park();
    }
}

//! REST consumer: integrates power samples into per-probe energy totals and
//! serves them over HTTP.
//!
//! Routes (all GET, all require an `X-Auth-Token` header):
//!
//! | path                          | body                                              |
//! |-------------------------------|---------------------------------------------------|
//! | `/v1/probes/`                 | `{"probes": {"site/name": {"w","kwh","timestamp"}}}` |
//! | `/v1/probes/<site>/<name>/`   | one record, plus `"probe"`                         |
//! | `/v1/status/`                 | ingest counters                                    |

mod energy;
mod http;
mod state;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::info;

pub use energy::{integrate_energy, EnergyStep, OutOfOrderError, JOULES_PER_KWH};
pub(crate) use http::respond_bytes;
pub use http::{handle_request, ApiResponse, ApiServer, StaticTokens, TokenValidator, TOKEN_HEADER};
pub use state::{ApiCounters, ApiState, IngestOutcome, ProbeRecord};

use crate::bus::{Endpoint, Frame, Subscriber, Subscription};
use crate::clock::unix_now;
use crate::config::FrameworkConfig;
use crate::model::{decode_measurement, ProbeId};
use crate::signing::SigningSecret;

/// Gap limit is this many driver intervals.
pub const GAP_INTERVALS: f64 = 10.0;

pub struct ApiOptions {
    pub listen: String,
    pub validator: Arc<dyn TokenValidator>,
    pub secret: Option<SigningSecret>,
    pub stale_timeout_s: f64,
    pub default_gap_limit_s: f64,
    pub gap_limits: HashMap<ProbeId, f64>,
    pub subscription: Subscription,
    pub eviction_period: Duration,
}

impl ApiOptions {
    pub fn from_config(cfg: &FrameworkConfig) -> Self {
        let gap_limits = cfg
            .probes
            .iter()
            .flat_map(|spec| {
                let limit = GAP_INTERVALS * spec.interval_s;
                spec.outlet_topics().into_iter().map(move |t| (t, limit))
            })
            .collect();
        ApiOptions {
            listen: cfg.api.listen.clone(),
            validator: Arc::new(StaticTokens::new(&cfg.api.tokens)),
            secret: cfg.signing_secret.clone(),
            stale_timeout_s: cfg.api.stale_timeout_s,
            default_gap_limit_s: cfg.api.gap_limit_s,
            gap_limits,
            subscription: cfg.api.subscription.clone(),
            eviction_period: eviction_period(cfg.api.stale_timeout_s),
        }
    }
}

fn eviction_period(timeout_s: f64) -> Duration {
    Duration::from_secs_f64((timeout_s / 4.0).clamp(0.05, 10.0))
}

/// Bus-fed state plus its HTTP server. Dropping it stops everything.
pub struct ApiConsumer {
    state: Arc<ApiState>,
    server: Option<ApiServer>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ApiConsumer {
    pub fn start(bus: &Endpoint, options: ApiOptions) -> std::io::Result<ApiConsumer> {
        let state = Arc::new(
            ApiState::new(options.secret.clone(), options.default_gap_limit_s)
                .with_gap_limits(options.gap_limits.clone()),
        );
        let server = ApiServer::start(&options.listen, Arc::clone(&state), options.validator)?;
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();

        let subscriber = Subscriber::connect(bus, &options.subscription);
        threads.push({
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            thread::Builder::new()
                .name("api-ingest".into())
                .spawn(move || ingest_loop(subscriber, &state, &stop))?
        });
        threads.push({
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            let timeout = options.stale_timeout_s;
            let period = options.eviction_period;
            thread::Builder::new()
                .name("api-evict".into())
                .spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        thread::park_timeout(period);
                        let evicted = state.evict_stale(unix_now(), timeout);
                        if !evicted.is_empty() {
                            info!("evicted {} stale probes", evicted.len());
                        }
                    }
                })?
        });
        Ok(ApiConsumer {
            state,
            server: Some(server),
            stop,
            threads,
        })
    }

    pub fn state(&self) -> &Arc<ApiState> {
        &self.state
    }

    pub fn url(&self) -> String {
        self.server.as_ref().map(ApiServer::url).unwrap_or_default()
    }
}

impl Drop for ApiConsumer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.take();
        for t in self.threads.drain(..) {
            t.thread().unpark();
            let _ = t.join();
        }
    }
}

/// Decodes a bus frame and applies it; frames whose payload does not decode
/// or names a different probe than the topic count as malformed.
pub fn ingest_frame(state: &ApiState, frame: &Frame, received_at: f64) -> Option<IngestOutcome> {
    match decode_measurement(&frame.payload) {
        Ok(m) if m.probe.topic() == frame.topic => Some(state.ingest(&m, received_at)),
        _ => {
            state.note_malformed();
            None
        }
    }
}

fn ingest_loop(mut subscriber: Subscriber, state: &ApiState, stop: &AtomicBool) {
    while !stop.load(Ordering::SeqCst) {
        if let Some(frame) = subscriber.recv_timeout(Duration::from_millis(200)) {
            ingest_frame(state, &frame, unix_now());
        }
    }
}

/// API daemon entry point; runs until the process is killed.
pub fn run_api(cfg: &FrameworkConfig) -> std::io::Result<()> {
    let consumer = ApiConsumer::start(&cfg.bus.subscribe, ApiOptions::from_config(cfg))?;
    info!(
        "api serving on {} (bus {})",
        consumer.url(),
        cfg.bus.subscribe
    );
    loop {
        thread::park();
    }
}

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::RwLock;
use serde::Serialize;

use super::energy::integrate_energy;
use crate::model::{Measurement, ProbeId};
use crate::signing::{verify, SigningSecret};

/// Per-probe consumer state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub probe: ProbeId,
    pub last_w: f64,
    pub kwh_total: f64,
    pub last_sample_timestamp: f64,
    /// Consumer clock at the last accepted sample.
    pub received_at: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ApiCounters {
    pub ingested: u64,
    pub rejected: u64,
    pub out_of_order: u64,
    pub gaps: u64,
    pub evictions: u64,
    pub malformed: u64,
}

#[derive(Default)]
struct AtomicCounters {
    ingested: AtomicU64,
    rejected: AtomicU64,
    out_of_order: AtomicU64,
    gaps: AtomicU64,
    evictions: AtomicU64,
    malformed: AtomicU64,
}

/// Outcome of one [`ApiState::ingest`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Created,
    Updated,
    /// Updated, but the pair straddled a gap and added no energy.
    Gap,
    Rejected,
    OutOfOrder,
}

/// Energy accounting state shared by the ingest loop and HTTP handlers.
pub struct ApiState {
    records: RwLock<BTreeMap<ProbeId, ProbeRecord>>,
    counters: AtomicCounters,
    secret: Option<SigningSecret>,
    default_gap_limit_s: f64,
    gap_limits: HashMap<ProbeId, f64>,
}

impl ApiState {
    pub fn new(secret: Option<SigningSecret>, default_gap_limit_s: f64) -> Self {
        ApiState {
            records: RwLock::new(BTreeMap::new()),
            counters: AtomicCounters::default(),
            secret,
            default_gap_limit_s,
            gap_limits: HashMap::new(),
        }
    }

    /// Per-probe gap limits, usually ten times the driver interval.
    pub fn with_gap_limits(mut self, limits: HashMap<ProbeId, f64>) -> Self {
        self.gap_limits = limits;
        self
    }

    pub fn gap_limit(&self, probe: &ProbeId) -> f64 {
        self.gap_limits
            .get(probe)
            .copied()
            .unwrap_or(self.default_gap_limit_s)
    }

    /// Verifies (when a secret is configured) and folds one sample into the
    /// probe's record. Anomalies only move counters.
    pub fn ingest(&self, m: &Measurement, received_at: f64) -> IngestOutcome {
        if let Some(secret) = &self.secret {
            if !verify(m, secret) {
                self.counters.rejected.fetch_add(1, Ordering::Relaxed);
                return IngestOutcome::Rejected;
            }
        }
        let gap_limit = self.gap_limit(&m.probe);
        let mut records = self.records.write();
        let outcome = match records.get_mut(&m.probe) {
            None => {
                records.insert(
                    m.probe.clone(),
                    ProbeRecord {
                        probe: m.probe.clone(),
                        last_w: m.watts,
                        kwh_total: 0.0,
                        last_sample_timestamp: m.timestamp,
                        received_at,
                    },
                );
                IngestOutcome::Created
            }
            Some(rec) => match integrate_energy(
                rec.last_w,
                rec.last_sample_timestamp,
                m.watts,
                m.timestamp,
                gap_limit,
            ) {
                Err(_) => {
                    drop(records);
                    self.counters.out_of_order.fetch_add(1, Ordering::Relaxed);
                    return IngestOutcome::OutOfOrder;
                }
                Ok(step) => {
                    rec.kwh_total += step.kwh;
                    rec.last_w = m.watts;
                    rec.last_sample_timestamp = m.timestamp;
                    rec.received_at = received_at;
                    if step.gap {
                        IngestOutcome::Gap
                    } else {
                        IngestOutcome::Updated
                    }
                }
            },
        };
        drop(records);
        self.counters.ingested.fetch_add(1, Ordering::Relaxed);
        if outcome == IngestOutcome::Gap {
            self.counters.gaps.fetch_add(1, Ordering::Relaxed);
        }
        outcome
    }

    pub fn note_malformed(&self) {
        self.counters.malformed.fetch_add(1, Ordering::Relaxed);
    }

    /// Removes records not updated for more than `timeout_s` (consumer
    /// clock). A later sample recreates the probe with a zero total.
    pub fn evict_stale(&self, now: f64, timeout_s: f64) -> Vec<ProbeId> {
        let mut records = self.records.write();
        let stale: Vec<ProbeId> = records
            .values()
            .filter(|r| now - r.received_at > timeout_s)
            .map(|r| r.probe.clone())
            .collect();
        for p in &stale {
            records.remove(p);
        }
        drop(records);
        self.counters
            .evictions
            .fetch_add(stale.len() as u64, Ordering::Relaxed);
        stale
    }

    pub fn record(&self, probe: &ProbeId) -> Option<ProbeRecord> {
        self.records.read().get(probe).cloned()
    }

    /// Consistent copy of every record.
    pub fn snapshot(&self) -> Vec<ProbeRecord> {
        self.records.read().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.records.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counters(&self) -> ApiCounters {
        let c = &self.counters;
        ApiCounters {
            ingested: c.ingested.load(Ordering::Relaxed),
            rejected: c.rejected.load(Ordering::Relaxed),
            out_of_order: c.out_of_order.load(Ordering::Relaxed),
            gaps: c.gaps.load(Ordering::Relaxed),
            evictions: c.evictions.load(Ordering::Relaxed),
            malformed: c.malformed.load(Ordering::Relaxed),
        }
    }
}

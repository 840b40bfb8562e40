use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::api::TOKEN_HEADER;

/// One metric sample, written as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub probe: String,
    /// `cumulative` or `gauge`.
    #[serde(rename = "type")]
    pub kind: String,
    pub unit: String,
    pub value: f64,
    /// Timestamp of the underlying power sample.
    pub timestamp: f64,
}

#[derive(Debug, Error)]
pub enum PollError {
    #[error("token rejected by the API")]
    Unauthorized,
    #[error("API unreachable: {0}")]
    Unreachable(String),
    #[error("unexpected API response: {0}")]
    Protocol(String),
}

/// Fetches `/v1/probes/` once and turns every probe into a gauge (W) and
/// a cumulative (kWh) sample, sorted by probe.
pub fn poll_once(agent: &ureq::Agent, api_url: &str, token: &str) -> Result<Vec<Sample>, PollError> {
    let url = format!("{}/v1/probes/", api_url.trim_end_matches('/'));
    let body = match agent.get(&url).set(TOKEN_HEADER, token).call() {
        Ok(resp) => resp
            .into_string()
            .map_err(|e| PollError::Unreachable(e.to_string()))?,
        Err(ureq::Error::Status(401, _)) => return Err(PollError::Unauthorized),
        Err(ureq::Error::Status(code, _)) => {
            return Err(PollError::Protocol(format!("HTTP {code}")))
        }
        Err(e) => return Err(PollError::Unreachable(e.to_string())),
    };
    let doc: Value = serde_json::from_str(&body).map_err(|e| PollError::Protocol(e.to_string()))?;
    let probes = doc["probes"]
        .as_object()
        .ok_or_else(|| PollError::Protocol("missing `probes` object".into()))?;
    let mut out = Vec::with_capacity(probes.len() * 2);
    for (probe, rec) in probes {
        let field = |k: &str| {
            rec[k]
                .as_f64()
                .ok_or_else(|| PollError::Protocol(format!("{probe}: missing `{k}`")))
        };
        let timestamp = field("timestamp")?;
        out.push(Sample {
            probe: probe.clone(),
            kind: "gauge".into(),
            unit: "W".into(),
            value: field("w")?,
            timestamp,
        });
        out.push(Sample {
            probe: probe.clone(),
            kind: "cumulative".into(),
            unit: "kWh".into(),
            value: field("kwh")?,
            timestamp,
        });
    }
    Ok(out)
}

/// Polling client that appends samples to a JSON-lines sink.
pub struct Pollster {
    agent: ureq::Agent,
    api_url: String,
    token: String,
    period: Duration,
    max_backoff: Duration,
}

impl Pollster {
    pub fn new(api_url: impl Into<String>, token: impl Into<String>, period: Duration) -> Self {
        Pollster {
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(5))
                .build(),
            api_url: api_url.into(),
            token: token.into(),
            period,
            max_backoff: Duration::from_secs(60),
        }
    }

    /// Polls `polls` times (forever when `None`). Unreachable APIs are
    /// retried with doubling backoff; a rejected token ends the loop.
    pub fn run(&self, sink: &Path, polls: Option<u64>) -> Result<u64, PollError> {
        let mut done = 0;
        let mut backoff = self.period;
        while polls.is_none_or(|n| done < n) {
            match poll_once(&self.agent, &self.api_url, &self.token) {
                Ok(samples) => {
                    append(sink, &samples).map_err(|e| PollError::Protocol(e.to_string()))?;
                    backoff = self.period;
                    done += 1;
                    if polls.is_none_or(|n| done < n) {
                        thread::sleep(self.period);
                    }
                }
                Err(PollError::Unauthorized) => return Err(PollError::Unauthorized),
                Err(e) => {
                    warn!("poll failed, retrying in {backoff:?}: {e}");
                    thread::sleep(backoff);
                    backoff = (backoff * 2).min(self.max_backoff);
                }
            }
        }
        Ok(done)
    }
}

fn append(sink: &Path, samples: &[Sample]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut buf, s)?;
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(sink)?;
    f.write_all(&buf)
}

/// Pollster daemon loop. Only returns on a fatal error.
pub fn run_pollster(
    api_url: &str,
    token: &str,
    period: Duration,
    sink: &Path,
) -> Result<(), PollError> {
    Pollster::new(api_url, token, period).run(sink, None).map(|_| ())
}

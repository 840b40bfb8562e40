use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};
use serde_json::{json, Value};
use subtle::ConstantTimeEq;

use super::state::{ApiState, ProbeRecord};
use crate::model::ProbeId;

/// Header carrying the client token.
pub const TOKEN_HEADER: &str = "X-Auth-Token";

/// Pluggable token check.
pub trait TokenValidator: Send + Sync {
    fn validate(&self, token: &str) -> bool;
}

/// Fixed list of accepted tokens.
#[derive(Debug, Clone, Default)]
pub struct StaticTokens {
    tokens: Vec<Vec<u8>>,
}

impl StaticTokens {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        StaticTokens {
            tokens: tokens
                .into_iter()
                .map(|t| t.as_ref().as_bytes().to_vec())
                .collect(),
        }
    }
}

impl TokenValidator for StaticTokens {
    fn validate(&self, token: &str) -> bool {
        // Compare against every entry so timing does not reveal which matched.
        let mut ok = subtle::Choice::from(0);
        for t in &self.tokens {
            ok |= t.as_slice().ct_eq(token.as_bytes());
        }
        !token.is_empty() && bool::from(ok)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: Value) -> Self {
        ApiResponse { status: 200, body }
    }

    fn error(status: u16, message: &str) -> Self {
        ApiResponse {
            status,
            body: json!({ "error": message }),
        }
    }
}

fn record_json(r: &ProbeRecord) -> Value {
    json!({
        "w": r.last_w,
        "kwh": r.kwh_total,
        "timestamp": r.last_sample_timestamp,
        "received_at": r.received_at,
    })
}

/// Routes one request. The token is checked before any state is read.
pub fn handle_request(
    state: &ApiState,
    validator: &dyn TokenValidator,
    method: &str,
    path: &str,
    token: Option<&str>,
) -> ApiResponse {
    if !token.is_some_and(|t| validator.validate(t)) {
        return ApiResponse::error(401, "invalid or missing token");
    }
    if method != "GET" {
        return ApiResponse::error(405, "only GET is supported");
    }
    let path = path.split('?').next().unwrap_or(path);
    let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
    match parts.as_slice() {
        ["v1", "probes"] => {
            let probes: serde_json::Map<String, Value> = state
                .snapshot()
                .iter()
                .map(|r| (r.probe.topic(), record_json(r)))
                .collect();
            ApiResponse::ok(json!({ "probes": probes }))
        }
        ["v1", "probes", site, name] => match ProbeId::new(*site, *name) {
            Err(_) => ApiResponse::error(400, "malformed probe path"),
            Ok(probe) => match state.record(&probe) {
                Some(r) => {
                    let mut body = record_json(&r);
                    body["probe"] = json!(probe.topic());
                    ApiResponse::ok(body)
                }
                None => ApiResponse::error(404, "unknown probe"),
            },
        },
        ["v1", "probes", ..] => ApiResponse::error(400, "malformed probe path"),
        ["v1", "status"] => {
            let mut body = serde_json::to_value(state.counters()).expect("counters serialize");
            body["probes"] = json!(state.len());
            ApiResponse::ok(body)
        }
        _ => ApiResponse::error(404, "no such endpoint"),
    }
}

/// Running HTTP front-end. Dropping it stops the listener.
pub struct ApiServer {
    server: Arc<tiny_http::Server>,
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ApiServer {
    pub fn start(
        listen: &str,
        state: Arc<ApiState>,
        validator: Arc<dyn TokenValidator>,
    ) -> std::io::Result<ApiServer> {
        let server = tiny_http::Server::http(listen)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::AddrInUse, e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let server = Arc::clone(&server);
            let stop = Arc::clone(&stop);
            thread::Builder::new()
                .name("api-http".into())
                .spawn(move || serve(&server, &state, validator.as_ref(), &stop))?
        };
        debug!("api listening on {addr}");
        Ok(ApiServer {
            server,
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve(
    server: &tiny_http::Server,
    state: &ApiState,
    validator: &dyn TokenValidator,
    stop: &AtomicBool,
) {
    while !stop.load(Ordering::SeqCst) {
        let request = match server.recv_timeout(Duration::from_millis(200)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(e) => {
                warn!("api accept error: {e}");
                continue;
            }
        };
        let token = request
            .headers()
            .iter()
            .find(|h| h.field.equiv(TOKEN_HEADER))
            .map(|h| h.value.as_str().to_owned());
        let method = request.method().as_str().to_owned();
        let resp = handle_request(state, validator, &method, request.url(), token.as_deref());
        respond_json(request, resp.status, &resp.body);
    }
}

pub(crate) fn respond_json(request: tiny_http::Request, status: u16, body: &Value) {
    let bytes = serde_json::to_vec(body).unwrap_or_default();
    respond_bytes(request, status, "application/json", bytes);
}

pub(crate) fn respond_bytes(
    request: tiny_http::Request,
    status: u16,
    content_type: &str,
    bytes: Vec<u8>,
) {
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], content_type.as_bytes())
        .expect("valid header");
    let response = tiny_http::Response::from_data(bytes)
        .with_status_code(status)
        .with_header(header);
    if let Err(e) = request.respond(response) {
        debug!("client went away: {e}");
    }
}

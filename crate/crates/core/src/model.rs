//! Shared domain types and the JSON measurement payload.
//!
//! A payload is a flat JSON object with keys sorted alphabetically and no
//! insignificant whitespace:
//!
//! ```text
//! {"a":0.95,"probe":"siteA/p1","signature":"…","timestamp":1000.0,"v":241.2,"w":230.0}
//! ```
//!
//! `a`, `v` and `signature` are omitted when absent. Because the key order
//! is fixed, the encoding of a measurement without its signature is the
//! canonical signing input.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of one metered point, written `site/name` on the bus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProbeId {
    site: String,
    name: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProbeIdError {
    #[error("probe id must have the form site/name, got {0:?}")]
    Malformed(String),
}

impl ProbeId {
    pub fn new(site: impl Into<String>, name: impl Into<String>) -> Result<Self, ProbeIdError> {
        let site = site.into();
        let name = name.into();
        if !valid_part(&site) || !valid_part(&name) {
            return Err(ProbeIdError::Malformed(format!("{site}/{name}")));
        }
        Ok(ProbeId { site, name })
    }

    pub fn site(&self) -> &str {
        &self.site
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Canonical topic form, `site/name`.
    pub fn topic(&self) -> String {
        format!("{}/{}", self.site, self.name)
    }
}

fn valid_part(s: &str) -> bool {
    !s.is_empty() && !s.contains('/') && !s.contains('\0')
}

impl FromStr for ProbeId {
    type Err = ProbeIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((site, name)) => {
                ProbeId::new(site, name).map_err(|_| ProbeIdError::Malformed(s.to_owned()))
            }
            None => Err(ProbeIdError::Malformed(s.to_owned())),
        }
    }
}

impl fmt::Display for ProbeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.site, self.name)
    }
}

impl Serialize for ProbeId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProbeId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One timestamped power sample from one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub probe: ProbeId,
    /// Seconds since the Unix epoch, producer clock.
    pub timestamp: f64,
    pub watts: f64,
    pub volts: Option<f64>,
    pub amps: Option<f64>,
    /// Lowercase hex HMAC, see [`crate::signing`].
    pub signature: Option<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MeasurementError {
    #[error("timestamp must be a positive finite number, got {0}")]
    Timestamp(f64),
    #[error("field {field} must be a non-negative finite number, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("signature must be lowercase hex")]
    Signature,
}

impl Measurement {
    pub fn new(probe: ProbeId, timestamp: f64, watts: f64) -> Result<Self, MeasurementError> {
        let m = Measurement {
            probe,
            timestamp,
            watts,
            volts: None,
            amps: None,
            signature: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_volts(mut self, volts: f64) -> Result<Self, MeasurementError> {
        self.volts = Some(volts);
        self.validate()?;
        Ok(self)
    }

    pub fn with_amps(mut self, amps: f64) -> Result<Self, MeasurementError> {
        self.amps = Some(amps);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        if !(self.timestamp.is_finite() && self.timestamp > 0.0) {
            return Err(MeasurementError::Timestamp(self.timestamp));
        }
        check_non_negative("w", self.watts)?;
        if let Some(v) = self.volts {
            check_non_negative("v", v)?;
        }
        if let Some(a) = self.amps {
            check_non_negative("a", a)?;
        }
        if let Some(sig) = &self.signature {
            if !is_lower_hex(sig) {
                return Err(MeasurementError::Signature);
            }
        }
        Ok(())
    }

    /// Copy of this measurement with the signature removed.
    pub fn unsigned(&self) -> Measurement {
        Measurement {
            signature: None,
            ..self.clone()
        }
    }
}

fn check_non_negative(field: &'static str, value: f64) -> Result<(), MeasurementError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(MeasurementError::Negative { field, value })
    }
}

fn is_lower_hex(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

// Field order here is the wire order: alphabetical.
#[derive(Serialize)]
struct WireOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    probe: &'a ProbeId,
    #[serde(skip_serializing_if = "Option::is_none")]
    signature: Option<&'a str>,
    timestamp: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v: Option<f64>,
    w: f64,
}

#[derive(Deserialize)]
struct WireIn {
    a: Option<serde_json::Value>,
    probe: Option<serde_json::Value>,
    signature: Option<serde_json::Value>,
    timestamp: Option<serde_json::Value>,
    v: Option<serde_json::Value>,
    w: Option<serde_json::Value>,
}

/// Serializes a measurement to its canonical JSON payload.
pub fn encode_measurement(m: &Measurement) -> Vec<u8> {
    let wire = WireOut {
        a: m.amps,
        probe: &m.probe,
        signature: m.signature.as_deref(),
        timestamp: m.timestamp,
        v: m.volts,
        w: m.watts,
    };
    // Only finite floats and strings are involved, serialization cannot fail.
    serde_json::to_vec(&wire).expect("measurement serialization")
}

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("payload is not a JSON object: {0}")]
    NotJson(String),
    #[error("missing mandatory field {0}")]
    Missing(&'static str),
    #[error("field {field} is invalid: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl DecodeError {
    /// Name of the offending field, if the error concerns one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            DecodeError::NotJson(_) => None,
            DecodeError::Missing(f) => Some(f),
            DecodeError::Invalid { field, .. } => Some(field),
        }
    }
}

/// Parses a JSON payload. Unknown keys are ignored.
pub fn decode_measurement(bytes: &[u8]) -> Result<Measurement, DecodeError> {
    let wire: WireIn =
        serde_json::from_slice(bytes).map_err(|e| DecodeError::NotJson(e.to_string()))?;

    let probe = match wire.probe {
        None => return Err(DecodeError::Missing("probe")),
        Some(serde_json::Value::String(s)) => {
            s.parse::<ProbeId>().map_err(|e| DecodeError::Invalid {
                field: "probe",
                reason: e.to_string(),
            })?
        }
        Some(other) => {
            return Err(DecodeError::Invalid {
                field: "probe",
                reason: format!("expected string, got {other}"),
            })
        }
    };
    let timestamp = required_number("timestamp", wire.timestamp)?;
    let watts = required_number("w", wire.w)?;
    let volts = optional_number("v", wire.v)?;
    let amps = optional_number("a", wire.a)?;
    let signature = match wire.signature {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) => Some(s),
        Some(other) => {
            return Err(DecodeError::Invalid {
                field: "signature",
                reason: format!("expected string, got {other}"),
            })
        }
    };

    let m = Measurement {
        probe,
        timestamp,
        watts,
        volts,
        amps,
        signature,
    };
    m.validate().map_err(|e| {
        let field = match &e {
            MeasurementError::Timestamp(_) => "timestamp",
            MeasurementError::Negative { field, .. } => field,
            MeasurementError::Signature => "signature",
        };
        DecodeError::Invalid {
            field,
            reason: e.to_string(),
        }
    })?;
    Ok(m)
}

fn required_number(
    field: &'static str,
    value: Option<serde_json::Value>,
) -> Result<f64, DecodeError> {
    optional_number(field, value)?.ok_or(DecodeError::Missing(field))
}

fn optional_number(
    field: &'static str,
    value: Option<serde_json::Value>,
) -> Result<Option<f64>, DecodeError> {
    match value {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::Number(n)) => n.as_f64().map(Some).ok_or(DecodeError::Invalid {
            field,
            reason: "not representable as f64".into(),
        }),
        Some(other) => Err(DecodeError::Invalid {
            field,
            reason: format!("expected number, got {other}"),
        }),
    }
}

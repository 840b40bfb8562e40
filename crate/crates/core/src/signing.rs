//! HMAC-SHA-256 signing of measurement payloads.
//!
//! The signature covers the canonical payload of the measurement with the
//! `signature` key removed. The topic is not covered; the probe id inside
//! the payload already binds identity.

use std::fmt;

use hmac::{Hmac, Mac};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::model::{encode_measurement, Measurement};

type HmacSha256 = Hmac<Sha256>;

pub const MIN_SECRET_LEN: usize = 16;

/// Shared secret. Its bytes never appear in `Debug` output.
#[derive(Clone, PartialEq, Eq)]
pub struct SigningSecret(Vec<u8>);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("signing secret must be at least {MIN_SECRET_LEN} bytes, got {0}")]
    TooShort(usize),
}

impl SigningSecret {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, KeyError> {
        let bytes = bytes.into();
        if bytes.len() < MIN_SECRET_LEN {
            return Err(KeyError::TooShort(bytes.len()));
        }
        Ok(SigningSecret(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for SigningSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningSecret(<{} bytes>)", self.0.len())
    }
}

/// Lowercase hex HMAC-SHA-256 of `message`.
pub fn hmac_hex(secret: &SigningSecret, message: &[u8]) -> String {
    let mut mac = HmacSha256::new_from_slice(secret.as_bytes()).expect("HMAC accepts any key size");
    mac.update(message);
    hex::encode(mac.finalize().into_bytes())
}

/// Returns `m` with its signature set. Any existing signature is replaced.
pub fn sign(m: &Measurement, secret: &SigningSecret) -> Measurement {
    let mut unsigned = m.unsigned();
    let sig = hmac_hex(secret, &encode_measurement(&unsigned));
    unsigned.signature = Some(sig);
    unsigned
}

/// Checks a signature with a constant-time comparison. A missing signature
/// fails verification.
pub fn verify(m: &Measurement, secret: &SigningSecret) -> bool {
    let Some(sig) = m.signature.as_deref() else {
        return false;
    };
    let expected = hmac_hex(secret, &encode_measurement(&m.unsigned()));
    expected.as_bytes().ct_eq(sig.as_bytes()).into()
}

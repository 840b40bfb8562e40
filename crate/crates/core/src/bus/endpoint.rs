use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

/// Where a publisher binds or a subscriber connects.
///
/// Written `tcp://host:port` or `ipc:///path/to/socket`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Tcp { host: String, port: u16 },
    Ipc(PathBuf),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EndpointError {
    #[error("unknown endpoint scheme in {0:?} (expected tcp:// or ipc://)")]
    Scheme(String),
    #[error("invalid tcp address {0:?} (expected host:port with port 1-65535)")]
    TcpAddress(String),
    #[error("ipc endpoint needs a non-empty path")]
    EmptyPath,
}

impl Endpoint {
    pub fn tcp(host: impl Into<String>, port: u16) -> Self {
        Endpoint::Tcp {
            host: host.into(),
            port,
        }
    }

    pub fn ipc(path: impl Into<PathBuf>) -> Self {
        Endpoint::Ipc(path.into())
    }
}

impl FromStr for Endpoint {
    type Err = EndpointError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(addr) = s.strip_prefix("tcp://") {
            let (host, port) = addr
                .rsplit_once(':')
                .ok_or_else(|| EndpointError::TcpAddress(addr.to_owned()))?;
            let port: u16 = port
                .parse()
                .map_err(|_| EndpointError::TcpAddress(addr.to_owned()))?;
            if host.is_empty() || port == 0 {
                return Err(EndpointError::TcpAddress(addr.to_owned()));
            }
            let host = host.trim_start_matches('[').trim_end_matches(']');
            Ok(Endpoint::tcp(host, port))
        } else if let Some(path) = s.strip_prefix("ipc://") {
            if path.is_empty() {
                return Err(EndpointError::EmptyPath);
            }
            Ok(Endpoint::Ipc(PathBuf::from(path)))
        } else {
            Err(EndpointError::Scheme(s.to_owned()))
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp { host, port } if host.contains(':') => write!(f, "tcp://[{host}]:{port}"),
            Endpoint::Tcp { host, port } => write!(f, "tcp://{host}:{port}"),
            Endpoint::Ipc(path) => write!(f, "ipc://{}", path.display()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(
            "tcp://127.0.0.1:5555".parse::<Endpoint>().unwrap(),
            Endpoint::tcp("127.0.0.1", 5555)
        );
        assert_eq!(
            "ipc:///tmp/kwapi.sock".parse::<Endpoint>().unwrap(),
            Endpoint::ipc("/tmp/kwapi.sock")
        );
        assert_eq!(
            "tcp://[::1]:80".parse::<Endpoint>().unwrap().to_string(),
            "tcp://[::1]:80"
        );
    }

    #[test]
    fn reject_bad() {
        assert!("tcp://host:0".parse::<Endpoint>().is_err());
        assert!("tcp://host:70000".parse::<Endpoint>().is_err());
        assert!("tcp://host".parse::<Endpoint>().is_err());
        assert_eq!("ipc://".parse::<Endpoint>(), Err(EndpointError::EmptyPath));
        assert!("udp://x:1".parse::<Endpoint>().is_err());
    }
}

//! INI-style configuration shared by every daemon.
//!
//! ```ini
//! # comments start with '#' or ';'
//! [bus]
//! publish_bind = tcp://0.0.0.0:14000
//! subscribe = tcp://127.0.0.1:14000
//!
//! [probe:siteA/ipmi1]
//! driver = ipmi
//! interval = 5
//! ```
//!
//! Sections: `[bus]`, `[signing]`, `[drivers]`, `[api]`, `[viz]`, and one
//! `[probe:<site>/<name>]` per driver. The forwarder has its own file
//! format, see [`parse_forwarder_config`].

use std::collections::BTreeMap;
use std::path::PathBuf;

use log::warn;
use thiserror::Error;

use crate::bus::{Endpoint, Subscription, DEFAULT_QUEUE_CAPACITY};
use crate::drivers::{catalog_entry, DriverSpec, Emulation, EmulatorOptions};
use crate::model::ProbeId;
use crate::signing::SigningSecret;
use crate::viz::{ArchiveSpec, Consolidation};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("[{section}] {key}: {reason}")]
    Value {
        section: String,
        key: String,
        reason: String,
    },
    #[error("[{section}] missing mandatory key {key}")]
    Missing { section: String, key: String },
    #[error("probe topic {0} is defined more than once")]
    DuplicateProbe(String),
    #[error("no probes defined")]
    NoProbes,
    #[error("{0}")]
    Invalid(String),
}

/// A key the parser did not recognise. Reported, never fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigWarning {
    pub line: usize,
    pub section: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusConfig {
    /// Where the driver manager binds its publisher.
    pub publish_bind: Endpoint,
    /// Where consumers connect.
    pub subscribe: Endpoint,
    pub queue_capacity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriversConfig {
    pub watchdog_period_s: f64,
    pub restart_limit: u32,
    pub status_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiConfig {
    pub listen: String,
    pub tokens: Vec<String>,
    pub stale_timeout_s: f64,
    /// Fallback gap limit when no driver interval is known for a probe.
    pub gap_limit_s: f64,
    pub subscription: Subscription,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VizConfig {
    pub listen: String,
    pub archives: Vec<ArchiveSpec>,
    pub price_eur_per_kwh: f64,
    pub archive_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub flush_period_s: f64,
    pub subscription: Subscription,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameworkConfig {
    pub bus: BusConfig,
    pub signing_secret: Option<SigningSecret>,
    pub drivers: DriversConfig,
    pub probes: Vec<DriverSpec>,
    pub api: ApiConfig,
    pub viz: VizConfig,
    pub warnings: Vec<ConfigWarning>,
}

pub const DEFAULT_BUS_PORT: u16 = 14000;

impl Default for BusConfig {
    fn default() -> Self {
        BusConfig {
            publish_bind: Endpoint::tcp("127.0.0.1", DEFAULT_BUS_PORT),
            subscribe: Endpoint::tcp("127.0.0.1", DEFAULT_BUS_PORT),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

impl Default for DriversConfig {
    fn default() -> Self {
        DriversConfig {
            watchdog_period_s: 10.0,
            restart_limit: 5,
            status_file: None,
        }
    }
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            listen: "127.0.0.1:5000".into(),
            tokens: Vec::new(),
            stale_timeout_s: 300.0,
            gap_limit_s: 60.0,
            subscription: Subscription::all(),
        }
    }
}

impl Default for VizConfig {
    fn default() -> Self {
        VizConfig {
            listen: "127.0.0.1:5001".into(),
            archives: ArchiveSpec::defaults(),
            price_eur_per_kwh: 0.15,
            archive_dir: PathBuf::from("archives"),
            cache_dir: PathBuf::from("chart-cache"),
            flush_period_s: 60.0,
            subscription: Subscription::all(),
        }
    }
}

/// One `key = value` line with its position.
#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

#[derive(Debug, Default)]
struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, Entry>,
}

/// Generic INI tokenizer: ordered sections of key/value pairs.
fn parse_ini(text: &str) -> Result<Vec<Section>, ConfigError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line,
                reason: format!("unterminated section header {trimmed:?}"),
            })?;
            let name = name.trim();
            if name.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    reason: "empty section name".into(),
                });
            }
            if sections.iter().any(|s| s.name == name) {
                if let Some(probe) = name.strip_prefix("probe:") {
                    return Err(ConfigError::DuplicateProbe(probe.trim().to_owned()));
                }
                return Err(ConfigError::Syntax {
                    line,
                    reason: format!("section [{name}] appears twice"),
                });
            }
            sections.push(Section {
                name: name.to_owned(),
                line,
                entries: BTreeMap::new(),
            });
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .or_else(|| trimmed.split_once(':'))
            .ok_or_else(|| ConfigError::Syntax {
                line,
                reason: format!("expected `key = value`, got {trimmed:?}"),
            })?;
        let key = key.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                reason: "empty key".into(),
            });
        }
        let section = sections.last_mut().ok_or_else(|| ConfigError::Syntax {
            line,
            reason: "key outside of any section".into(),
        })?;
        if section.entries.contains_key(&key) {
            return Err(ConfigError::Syntax {
                line,
                reason: format!("duplicate key {key:?} in [{}]", section.name),
            });
        }
        section.entries.insert(
            key,
            Entry {
                line,
                value: value.trim().to_owned(),
            },
        );
    }
    Ok(sections)
}

/// Typed access to one section that records which keys were consumed.
struct Reader<'a> {
    section: &'a Section,
    used: Vec<&'a str>,
}

impl<'a> Reader<'a> {
    fn new(section: &'a Section) -> Self {
        Reader {
            section,
            used: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'a str) -> Option<&'a str> {
        let e = self.section.entries.get(key)?;
        self.used.push(key);
        Some(e.value.as_str())
    }

    fn err(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            section: self.section.name.clone(),
            key: key.to_owned(),
            reason: reason.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &'a str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| self.err(key, format!("{v:?}: {e}"))),
        }
    }

    fn positive(&mut self, key: &'a str) -> Result<Option<f64>, ConfigError> {
        match self.parse::<f64>(key)? {
            Some(v) if !(v.is_finite() && v > 0.0) => Err(self.err(key, "must be > 0")),
            other => Ok(other),
        }
    }

    fn required(&mut self, key: &'a str) -> Result<&'a str, ConfigError> {
        self.raw(key).ok_or_else(|| ConfigError::Missing {
            section: self.section.name.clone(),
            key: key.to_owned(),
        })
    }

    fn finish(self, warnings: &mut Vec<ConfigWarning>) {
        for (key, entry) in &self.section.entries {
            if !self.used.contains(&key.as_str()) {
                warn!(
                    "line {}: unknown key {key:?} in [{}] ignored",
                    entry.line, self.section.name
                );
                warnings.push(ConfigWarning {
                    line: entry.line,
                    section: self.section.name.clone(),
                    key: key.clone(),
                });
            }
        }
    }
}

fn parse_endpoint(r: &mut Reader<'_>, key: &'static str) -> Result<Option<Endpoint>, ConfigError> {
    r.parse::<Endpoint>(key)
}

/// Parses and validates a framework configuration.
pub fn parse_config(text: &str) -> Result<FrameworkConfig, ConfigError> {
    let sections = parse_ini(text)?;
    let mut warnings = Vec::new();
    let mut bus = BusConfig::default();
    let mut signing_secret = None;
    let mut drivers = DriversConfig::default();
    let mut api = ApiConfig::default();
    let mut viz = VizConfig::default();
    let mut probes: Vec<DriverSpec> = Vec::new();

    for section in &sections {
        let mut r = Reader::new(section);
        match section.name.as_str() {
            "bus" => {
                if let Some(e) = parse_endpoint(&mut r, "publish_bind")? {
                    bus.subscribe = e.clone();
                    bus.publish_bind = e;
                }
                if let Some(e) = parse_endpoint(&mut r, "subscribe")? {
                    bus.subscribe = e;
                }
                if let Some(n) = r.parse::<usize>("queue_capacity")? {
                    if n == 0 {
                        return Err(r.err("queue_capacity", "must be > 0"));
                    }
                    bus.queue_capacity = n;
                }
            }
            "signing" => {
                if let Some(s) = r.raw("secret") {
                    if !s.is_empty() {
                        signing_secret = Some(
                            SigningSecret::new(s.as_bytes())
                                .map_err(|e| r.err("secret", e.to_string()))?,
                        );
                    }
                }
            }
            "drivers" => {
                if let Some(p) = r.positive("watchdog_period")? {
                    drivers.watchdog_period_s = p;
                }
                if let Some(n) = r.parse::<u32>("restart_limit")? {
                    if n == 0 {
                        return Err(r.err("restart_limit", "must be > 0"));
                    }
                    drivers.restart_limit = n;
                }
                if let Some(p) = r.raw("status_file") {
                    drivers.status_file = Some(PathBuf::from(p));
                }
            }
            "api" => {
                if let Some(l) = r.raw("listen") {
                    api.listen = l.to_owned();
                }
                if let Some(t) = r.raw("tokens") {
                    api.tokens = split_list(t).map(str::to_owned).collect();
                }
                if let Some(t) = r.positive("stale_timeout")? {
                    api.stale_timeout_s = t;
                }
                if let Some(g) = r.positive("gap_limit")? {
                    api.gap_limit_s = g;
                }
                if let Some(p) = r.raw("prefix") {
                    api.subscription = Subscription::new(p);
                }
            }
            "viz" => {
                if let Some(l) = r.raw("listen") {
                    viz.listen = l.to_owned();
                }
                if let Some(a) = r.raw("archives") {
                    viz.archives = parse_archives(a).map_err(|e| r.err("archives", e))?;
                }
                if let Some(p) = r.parse::<f64>("price_eur_per_kwh")? {
                    if !(p.is_finite() && p >= 0.0) {
                        return Err(r.err("price_eur_per_kwh", "must be >= 0"));
                    }
                    viz.price_eur_per_kwh = p;
                }
                if let Some(d) = r.raw("archive_dir") {
                    viz.archive_dir = PathBuf::from(d);
                }
                if let Some(d) = r.raw("cache_dir") {
                    viz.cache_dir = PathBuf::from(d);
                }
                if let Some(p) = r.positive("flush_period")? {
                    viz.flush_period_s = p;
                }
                if let Some(p) = r.raw("prefix") {
                    viz.subscription = Subscription::new(p);
                }
            }
            name if name.starts_with("probe:") => {
                let spec = parse_probe(&mut r, name["probe:".len()..].trim())?;
                if probes.iter().any(|p| p.topic == spec.topic) {
                    return Err(ConfigError::DuplicateProbe(spec.topic.topic()));
                }
                probes.push(spec);
            }
            other => {
                warn!("line {}: unknown section [{other}] ignored", section.line);
                warnings.push(ConfigWarning {
                    line: section.line,
                    section: other.to_owned(),
                    key: String::new(),
                });
                continue;
            }
        }
        r.finish(&mut warnings);
    }

    if probes.is_empty() {
        return Err(ConfigError::NoProbes);
    }
    check_expanded_topics(&probes)?;

    Ok(FrameworkConfig {
        bus,
        signing_secret,
        drivers,
        probes,
        api,
        viz,
        warnings,
    })
}

/// PDU outlets expand to `name-outN`; those must not collide with other
/// probes either.
fn check_expanded_topics(probes: &[DriverSpec]) -> Result<(), ConfigError> {
    let mut seen = std::collections::HashSet::new();
    for spec in probes {
        for t in spec.outlet_topics() {
            if !seen.insert(t.topic()) {
                return Err(ConfigError::DuplicateProbe(t.topic()));
            }
        }
    }
    Ok(())
}

fn parse_probe<'a>(r: &mut Reader<'a>, topic: &str) -> Result<DriverSpec, ConfigError> {
    let topic: ProbeId = topic.parse().map_err(|e: crate::model::ProbeIdError| {
        ConfigError::Syntax {
            line: r.section.line,
            reason: e.to_string(),
        }
    })?;
    let driver = r.required("driver")?;
    let entry = catalog_entry(driver).ok_or_else(|| r.err("driver", format!("unknown driver type {driver:?}")))?;

    let outlets = match r.parse::<u32>("outlets")? {
        Some(0) => return Err(r.err("outlets", "must be > 0")),
        Some(n) => n,
        None if entry.needs_outlets => {
            return Err(ConfigError::Missing {
                section: r.section.name.clone(),
                key: "outlets".into(),
            })
        }
        None => 1,
    };
    let mut profile = entry.profile(outlets);
    if let Some(p) = r.positive("precision")? {
        profile.precision_w = p;
    }
    let interval_s = r.positive("interval")?.unwrap_or(profile.refresh_period_s);

    let emulation = match r.raw("trace") {
        Some(path) => Emulation::Trace {
            path: PathBuf::from(path),
        },
        None => {
            let seed = r.parse::<u64>("seed")?.unwrap_or_else(|| seed_from_topic(&topic));
            let min_w = r.parse::<f64>("min_w")?.unwrap_or(80.0);
            let max_w = r.parse::<f64>("max_w")?.unwrap_or(250.0);
            Emulation::RandomWalk { seed, min_w, max_w }
        }
    };
    let options = EmulatorOptions {
        voltage: r.positive("voltage")?,
        fail_every: r.parse::<u64>("fail_every")?.filter(|&n| n > 0),
    };
    let spec = DriverSpec {
        topic,
        profile,
        interval_s,
        emulation,
        options,
    };
    spec.validate()
        .map_err(|reason| ConfigError::Invalid(format!("[{}] {reason}", r.section.name)))?;
    Ok(spec)
}

fn seed_from_topic(topic: &ProbeId) -> u64 {
    topic
        .topic()
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty())
}

/// `step:capacity[:consolidation]` entries separated by commas.
fn parse_archives(s: &str) -> Result<Vec<ArchiveSpec>, String> {
    let specs = split_list(s)
        .map(|item| {
            let mut parts = item.split(':').map(str::trim);
            let step: f64 = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| format!("bad step in {item:?}"))?;
            let capacity: u32 = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| format!("bad capacity in {item:?}"))?;
            let consolidation = match parts.next() {
                None => Consolidation::Average,
                Some(c) => c.parse::<Consolidation>()?,
            };
            if parts.next().is_some() {
                return Err(format!("too many fields in {item:?}"));
            }
            ArchiveSpec::new(step, capacity, consolidation)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if specs.is_empty() {
        return Err("at least one archive is required".into());
    }
    Ok(specs)
}

/// One upstream of a forwarder.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream {
    pub endpoint: Endpoint,
    pub subscription: Subscription,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwarderConfig {
    pub upstreams: Vec<Upstream>,
    pub downstream_bind: Endpoint,
    pub queue_capacity: usize,
}

impl ForwarderConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.upstreams.is_empty() {
            return Err(ConfigError::Invalid("a forwarder needs at least one upstream".into()));
        }
        if self
            .upstreams
            .iter()
            .any(|u| u.endpoint == self.downstream_bind)
        {
            return Err(ConfigError::Invalid(format!(
                "downstream {} is also an upstream",
                self.downstream_bind
            )));
        }
        Ok(())
    }
}

/// Forwarder file:
///
/// ```ini
/// [forwarder]
/// downstream_bind = tcp://0.0.0.0:14001
///
/// [upstream:siteA]
/// endpoint = tcp://10.0.0.5:14000
/// prefix = siteA/
/// ```
pub fn parse_forwarder_config(text: &str) -> Result<ForwarderConfig, ConfigError> {
    let sections = parse_ini(text)?;
    let mut warnings = Vec::new();
    let mut downstream = None;
    let mut queue_capacity = DEFAULT_QUEUE_CAPACITY;
    let mut upstreams = Vec::new();
    for section in &sections {
        let mut r = Reader::new(section);
        if section.name == "forwarder" {
            downstream = Some(
                r.required("downstream_bind")?
                    .parse::<Endpoint>()
                    .map_err(|e| r.err("downstream_bind", e.to_string()))?,
            );
            if let Some(n) = r.parse::<usize>("queue_capacity")? {
                queue_capacity = n.max(1);
            }
        } else if section.name.starts_with("upstream:") {
            let endpoint = r
                .required("endpoint")?
                .parse::<Endpoint>()
                .map_err(|e| r.err("endpoint", e.to_string()))?;
            let prefix = r.raw("prefix").unwrap_or("");
            upstreams.push(Upstream {
                endpoint,
                subscription: Subscription::new(prefix),
            });
        } else {
            warnings.push(ConfigWarning {
                line: section.line,
                section: section.name.clone(),
                key: String::new(),
            });
            continue;
        }
        r.finish(&mut warnings);
    }
    let downstream_bind = downstream.ok_or_else(|| ConfigError::Missing {
        section: "forwarder".into(),
        key: "downstream_bind".into(),
    })?;
    let cfg = ForwarderConfig {
        upstreams,
        downstream_bind,
        queue_capacity,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::DeviceMode;
    use proptest::prelude::*;

    #[test]
    fn single_probe() {
        let cfg = parse_config("[probe:siteA/ipmi1]\ndriver = ipmi\ninterval = 5").unwrap();
        assert_eq!(cfg.probes.len(), 1);
        assert_eq!(cfg.probes[0].topic.topic(), "siteA/ipmi1");
        assert_eq!(cfg.probes[0].interval_s, 5.0);
        assert_eq!(cfg.probes[0].profile.model, "Dell iDrac6");
        assert!(cfg.signing_secret.is_none());
        assert_eq!(cfg.api.stale_timeout_s, 300.0);
    }

    #[test]
    fn empty_input_has_no_probes() {
        assert_eq!(parse_config(""), Err(ConfigError::NoProbes));
        assert_eq!(parse_config("# only a comment\n"), Err(ConfigError::NoProbes));
    }

    #[test]
    fn duplicate_probe() {
        let text = "[probe:s/a]\ndriver=ipmi\n[probe:s/a]\ndriver=ipmi\n";
        assert_eq!(
            parse_config(text),
            Err(ConfigError::DuplicateProbe("s/a".into()))
        );
    }

    #[test]
    fn expanded_outlet_collision() {
        let text = "[probe:s/p]\ndriver=eaton\noutlets=2\n[probe:s/p-out1]\ndriver=ipmi\n";
        assert_eq!(
            parse_config(text),
            Err(ConfigError::DuplicateProbe("s/p-out1".into()))
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "[probe:s/a]\ndriver = ipmi\nthis is not valid\n";
        assert_eq!(
            parse_config(text).unwrap_err(),
            ConfigError::Syntax {
                line: 3,
                reason: "expected `key = value`, got \"this is not valid\"".into()
            }
        );
        assert!(matches!(
            parse_config("[probe:s/a\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("driver = ipmi\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn missing_driver_keys() {
        assert_eq!(
            parse_config("[probe:s/a]\ninterval = 5\n"),
            Err(ConfigError::Missing {
                section: "probe:s/a".into(),
                key: "driver".into()
            })
        );
        assert_eq!(
            parse_config("[probe:s/pdu]\ndriver = schleifenbauer\n"),
            Err(ConfigError::Missing {
                section: "probe:s/pdu".into(),
                key: "outlets".into()
            })
        );
    }

    #[test]
    fn interval_below_refresh_rejected() {
        assert!(matches!(
            parse_config("[probe:s/a]\ndriver = ipmi\ninterval = 1\n"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn unknown_keys_warn() {
        let cfg = parse_config("[probe:s/a]\ndriver = ipmi\ncolour = blue\n[weird]\nx=1\n").unwrap();
        assert_eq!(cfg.warnings.len(), 2);
        assert_eq!(cfg.warnings[0].key, "colour");
        assert_eq!(cfg.warnings[0].line, 3);
    }

    #[test]
    fn short_secret_rejected() {
        let text = "[signing]\nsecret = abc\n[probe:s/a]\ndriver=ipmi\n";
        assert!(matches!(parse_config(text), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn shipped_sample_config() {
        let text = include_str!("../../../docs/sample.conf");
        let cfg = parse_config(text).unwrap();
        assert!(cfg.warnings.is_empty(), "{:?}", cfg.warnings);
        assert_eq!(cfg.probes.len(), 2);

        let ipmi = &cfg.probes[0];
        assert_eq!(ipmi.topic.topic(), "lyon/taurus-7");
        assert_eq!(ipmi.profile.model, "Dell iDrac6");
        assert_eq!(ipmi.interval_s, 5.0);
        assert_eq!(ipmi.profile.mode, DeviceMode::Pull);

        let pdu = &cfg.probes[1];
        assert_eq!(pdu.topic.topic(), "lyon/pdu3");
        assert_eq!(pdu.profile.outlets, 10);
        assert_eq!(pdu.profile.precision_w, 0.1);
        assert_eq!(pdu.interval_s, 3.0);
        assert_eq!(pdu.options.voltage, Some(230.0));
        assert_eq!(
            pdu.emulation,
            Emulation::RandomWalk {
                seed: 7,
                min_w: 20.0,
                max_w: 180.0
            }
        );

        assert_eq!(cfg.bus.publish_bind, Endpoint::tcp("0.0.0.0", 14000));
        assert_eq!(cfg.bus.subscribe, Endpoint::tcp("127.0.0.1", 14000));
        assert_eq!(
            cfg.signing_secret.as_ref().map(|s| s.as_bytes().len()),
            Some(32)
        );
        assert_eq!(cfg.drivers.watchdog_period_s, 10.0);
        assert_eq!(cfg.api.listen, "127.0.0.1:5000");
        assert_eq!(cfg.api.tokens, vec!["s3cr3t-token", "ops-token"]);
        assert_eq!(cfg.api.stale_timeout_s, 300.0);
        assert_eq!(cfg.viz.price_eur_per_kwh, 0.12);
        assert_eq!(
            cfg.viz.archives,
            vec![
                ArchiveSpec::new(1.0, 3600, Consolidation::Average).unwrap(),
                ArchiveSpec::new(60.0, 1440, Consolidation::Average).unwrap(),
                ArchiveSpec::new(3600.0, 720, Consolidation::Max).unwrap(),
            ]
        );
    }

    #[test]
    fn forwarder_file() {
        let text = "[forwarder]\ndownstream_bind = tcp://0.0.0.0:14001\n\
                    [upstream:a]\nendpoint = tcp://10.0.0.5:14000\nprefix = siteA/\n";
        let cfg = parse_forwarder_config(text).unwrap();
        assert_eq!(cfg.upstreams.len(), 1);
        assert_eq!(cfg.upstreams[0].subscription.prefix, "siteA/");

        let none = "[forwarder]\ndownstream_bind = tcp://0.0.0.0:14001\n";
        assert!(matches!(parse_forwarder_config(none), Err(ConfigError::Invalid(_))));
        let looped = "[forwarder]\ndownstream_bind = tcp://h:1\n[upstream:a]\nendpoint = tcp://h:1\n";
        assert!(matches!(parse_forwarder_config(looped), Err(ConfigError::Invalid(_))));
    }

    proptest! {
        #[test]
        fn parse_is_total(text in "[\\[\\]a-z:=/#;0-9 \n._-]{0,300}") {
            let _ = parse_config(&text);
            let _ = parse_forwarder_config(&text);
        }
    }
}

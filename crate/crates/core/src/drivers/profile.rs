use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// How a wattmeter hands over readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceMode {
    /// The device answers queries.
    Pull,
    /// The device sends readings on its own schedule.
    Push,
}

impl fmt::Display for DeviceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceMode::Pull => "pull",
            DeviceMode::Push => "push",
        })
    }
}

impl FromStr for DeviceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pull" => Ok(DeviceMode::Pull),
            "push" => Ok(DeviceMode::Push),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Capabilities of one wattmeter model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub model: String,
    pub refresh_period_s: f64,
    pub precision_w: f64,
    pub mode: DeviceMode,
    pub outlets: u32,
}

impl DeviceProfile {
    pub fn new(
        model: impl Into<String>,
        refresh_period_s: f64,
        precision_w: f64,
        mode: DeviceMode,
        outlets: u32,
    ) -> Result<Self, String> {
        let p = DeviceProfile {
            model: model.into(),
            refresh_period_s,
            precision_w,
            mode,
            outlets,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.refresh_period_s.is_finite() && self.refresh_period_s > 0.0) {
            return Err(format!("refresh period must be > 0, got {}", self.refresh_period_s));
        }
        if !(self.precision_w.is_finite() && self.precision_w > 0.0) {
            return Err(format!("precision must be > 0, got {}", self.precision_w));
        }
        if self.outlets == 0 {
            return Err("a device needs at least one outlet".into());
        }
        Ok(())
    }

    pub fn with_outlets(mut self, outlets: u32) -> Self {
        self.outlets = outlets;
        self
    }
}

/// Catalog entry: driver type name, profile, and whether the config must
/// state an outlet count (multi-outlet PDUs).
pub struct CatalogEntry {
    pub driver: &'static str,
    pub model: &'static str,
    pub refresh_period_s: f64,
    pub precision_w: f64,
    pub mode: DeviceMode,
    pub needs_outlets: bool,
}

/// Known wattmeter types. The first six rows are production meters; the
/// `*-emulated` rows are fast-refresh devices used by the benchmark fleets.
pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        driver: "idrac6",
        model: "Dell iDrac6",
        refresh_period_s: 5.0,
        precision_w: 7.0,
        mode: DeviceMode::Pull,
        needs_outlets: false,
    },
    CatalogEntry {
        driver: "eaton",
        model: "Eaton",
        refresh_period_s: 5.0,
        precision_w: 1.0,
        mode: DeviceMode::Pull,
        needs_outlets: true,
    },
    CatalogEntry {
        driver: "omegawatt",
        model: "OmegaWatt",
        refresh_period_s: 1.0,
        precision_w: 0.125,
        mode: DeviceMode::Push,
        needs_outlets: false,
    },
    CatalogEntry {
        driver: "schleifenbauer",
        model: "Schleifenbauer",
        refresh_period_s: 3.0,
        precision_w: 0.1,
        mode: DeviceMode::Pull,
        needs_outlets: true,
    },
    CatalogEntry {
        driver: "wattsup",
        model: "Watts Up?",
        refresh_period_s: 1.0,
        precision_w: 0.1,
        mode: DeviceMode::Push,
        needs_outlets: false,
    },
    CatalogEntry {
        driver: "lmg450",
        model: "ZEZ LMG450",
        refresh_period_s: 0.05,
        precision_w: 0.01,
        mode: DeviceMode::Push,
        needs_outlets: false,
    },
    CatalogEntry {
        driver: "ipmi-emulated",
        model: "Emulated IPMI card",
        refresh_period_s: 0.1,
        precision_w: 1.0,
        mode: DeviceMode::Pull,
        needs_outlets: false,
    },
    CatalogEntry {
        driver: "pdu-emulated",
        model: "Emulated ePDU",
        refresh_period_s: 0.1,
        precision_w: 0.1,
        mode: DeviceMode::Pull,
        needs_outlets: true,
    },
];

/// Looks up a driver type. `ipmi` is an alias for `idrac6`.
pub fn catalog_entry(driver: &str) -> Option<&'static CatalogEntry> {
    let driver = if driver == "ipmi" { "idrac6" } else { driver };
    CATALOG.iter().find(|e| e.driver == driver)
}

impl CatalogEntry {
    pub fn profile(&self, outlets: u32) -> DeviceProfile {
        DeviceProfile {
            model: self.model.to_owned(),
            refresh_period_s: self.refresh_period_s,
            precision_w: self.precision_w,
            mode: self.mode,
            outlets,
        }
    }
}

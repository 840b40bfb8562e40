//! Driver layer: wattmeter profiles, emulated devices, the per-device poll
//! step, and the supervising [`DriverManager`].

mod emulator;
mod manager;
mod profile;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Measurement, MeasurementError, ProbeId};

pub use emulator::{
    emulate_power, DeviceError, EmulatedDevice, Emulation, EmulatorOptions, RandomWalk, Reading,
    Wattmeter,
};
pub use manager::{run_manager, DriverManager, DriverStatus, ManagerOptions};
pub use profile::{catalog_entry, CatalogEntry, DeviceMode, DeviceProfile, CATALOG};

/// Everything a worker needs to drive one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverSpec {
    #[serde(with = "probe_str")]
    pub topic: ProbeId,
    pub profile: DeviceProfile,
    pub interval_s: f64,
    pub emulation: Emulation,
    #[serde(default)]
    pub options: EmulatorOptions,
}

mod probe_str {
    use crate::model::ProbeId;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &ProbeId, s: S) -> Result<S::Ok, S::Error> {
        p.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ProbeId, D::Error> {
        ProbeId::deserialize(d)
    }
}

impl DriverSpec {
    pub fn validate(&self) -> Result<(), String> {
        self.profile.validate()?;
        if !(self.interval_s.is_finite() && self.interval_s > 0.0) {
            return Err(format!("interval must be > 0, got {}", self.interval_s));
        }
        // Small slack so 0.1 + 0.2 style sums do not trip the check.
        if self.interval_s + 1e-9 < self.profile.refresh_period_s {
            return Err(format!(
                "interval {} s is shorter than the {} refresh period of {} s",
                self.interval_s, self.profile.model, self.profile.refresh_period_s
            ));
        }
        if let Emulation::RandomWalk { min_w, max_w, .. } = self.emulation {
            if !(min_w.is_finite() && max_w.is_finite() && 0.0 <= min_w && min_w <= max_w) {
                return Err(format!("invalid power bounds [{min_w}, {max_w}]"));
            }
        }
        Ok(())
    }

    /// Probe id for outlet `index` (zero-based). Single-outlet devices use
    /// the spec topic; PDUs get `name-outN` with N starting at 1.
    pub fn outlet_topic(&self, index: u32) -> ProbeId {
        if self.profile.outlets <= 1 {
            self.topic.clone()
        } else {
            ProbeId::new(
                self.topic.site(),
                format!("{}-out{}", self.topic.name(), index + 1),
            )
            .expect("derived from a valid probe id")
        }
    }

    pub fn outlet_topics(&self) -> Vec<ProbeId> {
        (0..self.profile.outlets).map(|i| self.outlet_topic(i)).collect()
    }

    pub fn build_device(&self, start: f64) -> Result<EmulatedDevice, DeviceError> {
        EmulatedDevice::new(
            self.profile.clone(),
            &self.emulation,
            self.options.clone(),
            start,
        )
    }
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("{topic}: {source}")]
    Device {
        topic: ProbeId,
        #[source]
        source: DeviceError,
    },
    #[error("{topic}: device produced an invalid reading: {source}")]
    Reading {
        topic: ProbeId,
        #[source]
        source: MeasurementError,
    },
}

/// Nearest multiple of `precision_w`, ties away from zero.
pub fn quantize(watts: f64, precision_w: f64) -> f64 {
    debug_assert!(precision_w > 0.0);
    let q = (watts / precision_w).round() * precision_w;
    // Avoid emitting -0.0.
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

/// One driver tick: query (pull) or drain (push) the device and convert the
/// readings into quantized measurements.
pub fn poll_once(
    spec: &DriverSpec,
    device: &mut dyn Wattmeter,
    now: f64,
) -> Result<Vec<Measurement>, DriverError> {
    let readings = device.poll(now).map_err(|source| DriverError::Device {
        topic: spec.topic.clone(),
        source,
    })?;
    readings
        .into_iter()
        .map(|r| {
            let probe = spec.outlet_topic(r.outlet);
            let mut m = Measurement::new(
                probe.clone(),
                r.timestamp,
                quantize(r.watts, spec.profile.precision_w),
            );
            if let (Ok(inner), Some(v)) = (&m, r.volts) {
                m = inner.clone().with_volts(v);
            }
            if let (Ok(inner), Some(a)) = (&m, r.amps) {
                m = inner.clone().with_amps(a);
            }
            m.map_err(|source| DriverError::Reading {
                topic: probe,
                source,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force nearest multiple: scan candidates k·p around the input
    /// and keep the closest, preferring the larger magnitude on ties.
    fn nearest_multiple_oracle(w: f64, p: f64) -> f64 {
        let approx = (w / p) as i64;
        let mut best = f64::NAN;
        let mut best_dist = f64::INFINITY;
        for k in approx - 3..=approx + 3 {
            let c = k as f64 * p;
            let d = (c - w).abs();
            if d < best_dist - 1e-12 || ((d - best_dist).abs() <= 1e-12 && c.abs() > best.abs()) {
                best = c;
                best_dist = d;
            }
        }
        best
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(7.3, 1.0), 7.0);
        assert_eq!(quantize(0.0, 0.125), 0.0);
        // 100.07 / 0.125 = 800.56 -> 801 * 0.125
        assert_eq!(quantize(100.07, 0.125), 100.125);
        assert_eq!(quantize(100.07, 0.125), nearest_multiple_oracle(100.07, 0.125));
        // tie goes away from zero
        assert_eq!(quantize(0.5, 1.0), 1.0);
        assert_eq!(quantize(-0.5, 1.0), -1.0);
    }

    #[test]
    fn quantize_matches_oracle_on_table_precisions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for &p in &[7.0, 1.0, 0.125, 0.1, 0.01] {
            for _ in 0..5000 {
                let w: f64 = rng.gen_range(0.0..5000.0);
                let q = quantize(w, p);
                let o = nearest_multiple_oracle(w, p);
                assert!((q - o).abs() < 1e-9, "w={w} p={p} q={q} o={o}");
            }
        }
    }

    fn spec(outlets: u32, mode: DeviceMode, min: f64, max: f64) -> DriverSpec {
        DriverSpec {
            topic: "site/pdu3".parse().unwrap(),
            profile: DeviceProfile::new("t", 1.0, 0.1, mode, outlets).unwrap(),
            interval_s: 1.0,
            emulation: Emulation::RandomWalk {
                seed: 3,
                min_w: min,
                max_w: max,
            },
            options: EmulatorOptions::default(),
        }
    }

    #[test]
    fn ten_outlet_pdu_tick() {
        let s = spec(10, DeviceMode::Pull, 50.0, 60.0);
        let mut dev = s.build_device(100.0).unwrap();
        let ms = poll_once(&s, &mut dev, 101.0).unwrap();
        let topics: Vec<String> = ms.iter().map(|m| m.probe.topic()).collect();
        let expected: Vec<String> = (1..=10).map(|i| format!("site/pdu3-out{i}")).collect();
        assert_eq!(topics, expected);
        for m in &ms {
            let k = m.watts / 0.1;
            assert!((k - k.round()).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_zero_device() {
        let s = spec(1, DeviceMode::Pull, 0.0, 0.0);
        let mut dev = s.build_device(100.0).unwrap();
        for t in 1..5 {
            let ms = poll_once(&s, &mut dev, 100.0 + f64::from(t)).unwrap();
            assert_eq!(ms.len(), 1);
            assert_eq!(ms[0].watts, 0.0);
            assert_eq!(ms[0].probe, s.topic);
        }
    }

    #[test]
    fn push_drain_after_five_seconds() {
        let s = spec(1, DeviceMode::Push, 10.0, 20.0);
        let mut dev = s.build_device(1000.0).unwrap();
        let ms = poll_once(&s, &mut dev, 1005.0).unwrap();
        assert_eq!(ms.len(), 5);
        assert!(ms.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    }

    #[test]
    fn interval_shorter_than_refresh_rejected() {
        let mut s = spec(1, DeviceMode::Pull, 1.0, 2.0);
        s.interval_s = 0.5;
        assert!(s.validate().is_err());
        s.interval_s = 1.0;
        assert!(s.validate().is_ok());
    }
}

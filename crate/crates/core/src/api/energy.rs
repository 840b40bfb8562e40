use thiserror::Error;

/// Seconds per hour times watts per kilowatt.
pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("sample at t={t} is older than the previous one at t={prev_t}")]
pub struct OutOfOrderError {
    pub prev_t: f64,
    pub t: f64,
}

/// Energy added by one sample pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyStep {
    pub kwh: f64,
    /// The pair was further apart than the gap limit; no energy was counted.
    pub gap: bool,
}

/// Trapezoidal energy between two power samples, in kWh. Pairs further
/// apart than `gap_limit_s` contribute nothing and are flagged.
pub fn integrate_energy(
    prev_w: f64,
    prev_t: f64,
    w: f64,
    t: f64,
    gap_limit_s: f64,
) -> Result<EnergyStep, OutOfOrderError> {
    let dt = t - prev_t;
    if dt < 0.0 {
        return Err(OutOfOrderError { prev_t, t });
    }
    if dt > gap_limit_s {
        return Ok(EnergyStep { kwh: 0.0, gap: true });
    }
    Ok(EnergyStep {
        kwh: (prev_w + w) / 2.0 * dt / JOULES_PER_KWH,
        gap: false,
    })
}

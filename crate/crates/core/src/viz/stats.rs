use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rra::Bucket;
use crate::api::JOULES_PER_KWH;

/// Summary shown in a chart legend and served by `/stats`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartStats {
    pub avg_w: f64,
    pub min_w: f64,
    pub max_w: f64,
    pub last_w: f64,
    pub total_kwh: f64,
    pub cost_eur: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("no data in the requested range")]
    EmptyRange,
}

/// Statistics over the present buckets; absent buckets are skipped and
/// add no energy.
pub fn compute_stats(
    buckets: &[Bucket],
    step_s: f64,
    price_eur_per_kwh: f64,
) -> Result<ChartStats, StatsError> {
    let values: Vec<f64> = buckets.iter().filter_map(|b| b.value).collect();
    let last_w = *values.last().ok_or(StatsError::EmptyRange)?;
    let min_w = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max_w = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().sum();
    // Rounding can push the mean of equal values a ulp outside [min, max].
    let avg_w = (sum / values.len() as f64).clamp(min_w, max_w);
    let total_kwh = sum * step_s / JOULES_PER_KWH;
    Ok(ChartStats {
        avg_w,
        min_w,
        max_w,
        last_w,
        total_kwh,
        cost_eur: total_kwh * price_eur_per_kwh,
    })
}

//! Summary statistics over campaign reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{dbw, mean, ExperimentReport, MethodId};

/// Empirical CDF: sorted sample values paired with probabilities `k/n`,
/// `k = 1..=n`. Ties are kept in stable order.
pub fn empirical_cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("cdf samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n))
        .collect())
}

/// Mean sum-rate gain of every method over the max-power baseline, paired
/// over identical realizations.
pub fn mean_rate_increase(report: &ExperimentReport) -> Result<BTreeMap<MethodId, f64>> {
    let baseline = report
        .samples
        .get(&MethodId::MaxPower)
        .ok_or(Error::MissingBaseline)?;
    let base_mean = mean(&baseline.sum_rates);
    Ok(report
        .samples
        .iter()
        .map(|(&m, s)| (m, mean(&s.sum_rates) - base_mean))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDistribution {
    /// CDF over every allocated per-link power, in watts.
    pub cdf: Vec<(f64, f64)>,
    pub mean_power_w: f64,
    /// `None` marks the all-zero-power sentinel.
    pub mean_power_dbw: Option<f64>,
}

/// Distribution of allocated transmit powers per method.
pub fn power_distribution(
    report: &ExperimentReport,
) -> Result<BTreeMap<MethodId, PowerDistribution>> {
    report
        .samples
        .iter()
        .map(|(&m, s)| {
            let mean_power_w = mean(&s.powers_w);
            Ok((
                m,
                PowerDistribution {
                    cdf: empirical_cdf(&s.powers_w)?,
                    mean_power_w,
                    mean_power_dbw: dbw(mean_power_w),
                },
            ))
        })
        .collect()
}

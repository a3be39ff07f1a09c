use serde::{Deserialize, Serialize};

use crate::error::{data_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeReport {
    /// Baseline's final value, the level the proposed run has to reach.
    pub threshold: f64,
    /// Fractional epoch at which the proposed curve first reaches the
    /// threshold; `None` if it never does.
    pub spe: Option<f64>,
    /// `(total − spe) / total × 100`; `None` when `spe` is.
    pub speedup_pct: Option<f64>,
}

/// Same-performance epoch of `proposed` against the final value of
/// `baseline`. Curves are `(epoch, value)` pairs in epoch order; crossings
/// between evaluations are interpolated linearly.
pub fn same_performance_epoch(
    baseline: &[(f64, f64)],
    proposed: &[(f64, f64)],
    total_epochs: f64,
    lower_is_better: bool,
) -> Result<SpeReport> {
    let Some(&(_, threshold)) = baseline.last() else {
        return data_err("baseline curve is empty");
    };
    if proposed.is_empty() || !(total_epochs > 0.0) {
        return data_err("proposed curve is empty or the epoch budget is not positive");
    }
    let reached = |v: f64| if lower_is_better { v <= threshold } else { v >= threshold };
    let spe = proposed.iter().position(|&(_, v)| reached(v)).map(|i| {
        let (e1, v1) = proposed[i];
        if i == 0 || v1 == threshold {
            return e1;
        }
        let (e0, v0) = proposed[i - 1];
        e0 + (v0 - threshold) / (v0 - v1) * (e1 - e0)
    });
    Ok(SpeReport { threshold, spe, speedup_pct: spe.map(|s| (total_epochs - s) / total_epochs * 100.0) })
}

use serde::{Deserialize, Serialize};

use super::BalanceConfig;
use crate::error::{NvError, Result};
use crate::mw_control::SweepPlan;
use crate::nv_model::OdmrCurve;
use crate::signal_chain::DualTimeSeries;

/// Off-resonant reference used to normalize an integrated sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Mean of the first and last `n` sweep points.
    Edges(usize),
    /// Known off-resonant balanced level, volts.
    Value(f64),
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline::Edges(1)
    }
}

/// Plain ODMR integrator: mean balanced level per sweep point divided by the
/// off-resonant baseline.
pub fn odmr_integrate(
    sweeps: &[DualTimeSeries],
    plan: &SweepPlan,
    balance: &BalanceConfig,
    baseline: Baseline,
) -> Result<OdmrCurve> {
    balance.validate()?;
    if sweeps.len() != plan.freqs.len() {
        return Err(NvError::invalid(format!(
            "{} series supplied for a {}-point sweep plan",
            sweeps.len(),
            plan.freqs.len()
        )));
    }
    let means = sweeps
        .iter()
        .map(|ts| {
            if ts.is_empty() || ts.codes_a.len() != ts.codes_b.len() {
                return Err(NvError::invalid("sweep point has empty or unequal channels"));
            }
            let sum: f64 = ts
                .codes_a
                .iter()
                .zip(&ts.codes_b)
                .map(|(&a, &b)| balance.k1 * ts.to_volts(a) - balance.k2 * ts.to_volts(b))
                .sum();
            Ok(sum / ts.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;

    let reference = match baseline {
        Baseline::Value(v) => v,
        Baseline::Edges(n) => {
            if n == 0 || 2 * n > means.len() {
                return Err(NvError::invalid("baseline edge count does not fit the sweep"));
            }
            let tail = &means[means.len() - n..];
            (means[..n].iter().sum::<f64>() + tail.iter().sum::<f64>()) / (2 * n) as f64
        }
    };
    if !(reference.is_finite() && reference != 0.0) {
        return Err(NvError::invalid("baseline level is zero or non-finite"));
    }
    OdmrCurve::new(plan.freqs.clone(), means.iter().map(|m| m / reference).collect())
}

use serde::{Deserialize, Serialize};

use super::SlopeFit;
use crate::error::{NvError, Result};
use crate::lockin::LockinOutput;
use crate::nv_model::SpinSystemParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitivityMode {
    Unbalanced,
    Balanced,
    Electronic,
}

impl SensitivityMode {
    pub const ALL: [SensitivityMode; 3] = [
        SensitivityMode::Unbalanced,
        SensitivityMode::Balanced,
        SensitivityMode::Electronic,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SensitivityMode::Unbalanced => "unbalanced",
            SensitivityMode::Balanced => "balanced",
            SensitivityMode::Electronic => "electronic",
        }
    }
}

impl std::fmt::Display for SensitivityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// How the output noise is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseEstimator {
    /// Mean-removed standard deviation of X.
    #[default]
    StdDev,
    /// Two-sample (Allan) deviation of X at a lag of one integration time.
    Allan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// T/√Hz.
    pub eta: f64,
    /// Volts.
    pub noise_rms: f64,
    /// Volts/Hz, signed.
    pub slope: f64,
    pub enbw: f64,
    /// Hz/T.
    pub gamma_used: f64,
    pub mode: SensitivityMode,
    pub estimator: NoiseEstimator,
    /// Outputs that entered the noise estimate.
    pub samples: usize,
}

impl SensitivityReport {
    pub fn recomputed_eta(&self) -> f64 {
        self.noise_rms / (self.slope.abs() * self.gamma_used * self.enbw.sqrt())
    }

    pub fn is_consistent(&self) -> bool {
        (self.recomputed_eta() - self.eta).abs() <= 1e-9 * self.eta.abs()
    }
}

/// Sensitivity from a lock-in record taken at a fixed microwave frequency.
///
/// Outputs within the first integration time are discarded before the noise
/// estimate. The record must span at least 30/ENBW seconds.
pub fn estimate_sensitivity(
    out: &LockinOutput,
    slope: &SlopeFit,
    p: &SpinSystemParams,
    mode: SensitivityMode,
    estimator: NoiseEstimator,
) -> Result<SensitivityReport> {
    if !(slope.slope.is_finite() && slope.slope != 0.0) {
        return Err(NvError::invalid("slope must be finite and non-zero"));
    }
    if !(out.enbw > 0.0 && out.rate > 0.0) {
        return Err(NvError::invalid("lock-in output has no valid rate or ENBW"));
    }
    let record = out.len() as f64 / out.rate;
    let needed = 30.0 / out.enbw;
    if record < needed * (1.0 - 1e-12) {
        return Err(NvError::invalid(format!(
            "record of {record:.4} s is shorter than 30/ENBW = {needed:.4} s"
        )));
    }
    let settle = 1.0 / (2.0 * out.enbw);
    let first = (0..out.len()).find(|&k| out.time(k) >= settle).unwrap_or(out.len());
    let x = &out.x[first..];
    let noise_rms = match estimator {
        NoiseEstimator::StdDev => std_dev(x),
        NoiseEstimator::Allan => {
            let lag = ((out.rate * settle).round() as usize).max(1);
            allan(x, lag)
        }
    }
    .ok_or_else(|| NvError::invalid("too few settled outputs for a noise estimate"))?;

    let report = SensitivityReport {
        eta: noise_rms / (slope.slope.abs() * p.gamma_e * out.enbw.sqrt()),
        noise_rms,
        slope: slope.slope,
        enbw: out.enbw,
        gamma_used: p.gamma_e,
        mode,
        estimator,
        samples: x.len(),
    };
    debug_assert!(report.is_consistent());
    Ok(report)
}

fn std_dev(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    Some((x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn allan(x: &[f64], lag: usize) -> Option<f64> {
    if x.len() <= lag + 1 {
        return None;
    }
    let pairs = x.len() - lag;
    let sum: f64 = (0..pairs).map(|k| (x[k + lag] - x[k]).powi(2)).sum();
    Some((0.5 * sum / pairs as f64).sqrt())
}

/// Field noise floor set by photon statistics for a Lorentzian line probed
/// at its steepest point. T/√Hz.
pub fn shot_noise_limit(hwhm: f64, contrast: f64, photon_rate: f64, gamma: f64) -> Result<f64> {
    for (name, v) in [
        ("hwhm", hwhm),
        ("contrast", contrast),
        ("photon_rate", photon_rate),
        ("gamma", gamma),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(NvError::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(4.0 / (3.0 * 3f64.sqrt()) * (2.0 * hwhm) / (gamma * contrast * photon_rate.sqrt()))
}

/// Signal-to-noise gain of one slope measurement over another.
pub fn snr_enhancement(on: &SlopeFit, off: &SlopeFit, noise_on: f64, noise_off: f64) -> Result<f64> {
    if !(noise_on > 0.0 && noise_off > 0.0 && noise_on.is_finite() && noise_off.is_finite()) {
        return Err(NvError::invalid("noise levels must be positive"));
    }
    if off.slope == 0.0 || !on.slope.is_finite() || !off.slope.is_finite() {
        return Err(NvError::invalid("slopes must be finite and the reference non-zero"));
    }
    Ok((on.slope.abs() / noise_on) / (off.slope.abs() / noise_off))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lockin::Path;
    use crate::rng::{Gaussian, NoiseStream};

    fn slope(s: f64) -> SlopeFit {
        SlopeFit {
            slope: s,
            zero_crossing: 2.87e9,
            window: (2.87e9 - 1e5, 2.87e9 + 1e5),
            residual_rms: 0.0,
        }
    }

    fn record(sigma: f64, n: usize, seed: u64) -> LockinOutput {
        let mut g = Gaussian::new(seed, NoiseStream::Auxiliary(1));
        LockinOutput {
            rate: 200.0,
            x: (0..n).map(|_| sigma * g.sample()).collect(),
            y: vec![0.0; n],
            enbw: 10.4,
            window: 48_077,
            path: Path::Float,
        }
    }

    #[test]
    fn eta_formula_and_consistency() {
        let p = SpinSystemParams::default();
        let out = record(1e-6, 12_000, 1);
        let r = estimate_sensitivity(&out, &slope(-2e-7), &p, SensitivityMode::Balanced, NoiseEstimator::StdDev).unwrap();
        assert!(r.is_consistent());
        assert!((r.noise_rms / 1e-6 - 1.0).abs() < 0.03);
        assert!(r.slope < 0.0 && r.eta > 0.0);
    }

    #[test]
    fn doubling_slope_halves_eta() {
        let p = SpinSystemParams::default();
        let out = record(1e-6, 4000, 2);
        let a = estimate_sensitivity(&out, &slope(1e-7), &p, SensitivityMode::Unbalanced, NoiseEstimator::StdDev).unwrap();
        let b = estimate_sensitivity(&out, &slope(2e-7), &p, SensitivityMode::Unbalanced, NoiseEstimator::StdDev).unwrap();
        assert_eq!(a.eta, 2.0 * b.eta);
    }

    #[test]
    fn allan_matches_std_for_white_outputs() {
        let p = SpinSystemParams::default();
        let out = record(1e-6, 12_000, 3);
        let s = estimate_sensitivity(&out, &slope(1e-7), &p, SensitivityMode::Balanced, NoiseEstimator::StdDev).unwrap();
        let a = estimate_sensitivity(&out, &slope(1e-7), &p, SensitivityMode::Balanced, NoiseEstimator::Allan).unwrap();
        assert!((a.eta / s.eta - 1.0).abs() < 0.05);
    }

    #[test]
    fn rejects_short_record_and_zero_slope() {
        let p = SpinSystemParams::default();
        let out = record(1e-6, 100, 4);
        assert!(estimate_sensitivity(&out, &slope(1e-7), &p, SensitivityMode::Balanced, NoiseEstimator::StdDev).is_err());
        let out = record(1e-6, 1000, 4);
        assert!(matches!(
            estimate_sensitivity(&out, &slope(0.0), &p, SensitivityMode::Balanced, NoiseEstimator::StdDev),
            Err(NvError::InvalidArgument(_))
        ));
    }

    #[test]
    fn shot_limit_scaling() {
        let base = shot_noise_limit(617e3, 0.0153, 1e17, 28.024e9).unwrap();
        let quad = shot_noise_limit(617e3, 0.0153, 4e17, 28.024e9).unwrap();
        assert!((base / quad - 2.0).abs() < 1e-12);
        let triple = shot_noise_limit(617e3, 3.0 * 0.0153, 1e17, 28.024e9).unwrap();
        assert!((base / triple - 3.0).abs() < 1e-12);
        assert!(shot_noise_limit(0.0, 0.0153, 1e17, 28.024e9).is_err());
    }

    #[test]
    fn enhancement() {
        assert_eq!(snr_enhancement(&slope(3.0), &slope(-1.0), 1.0, 1.0).unwrap(), 3.0);
        assert!(snr_enhancement(&slope(3.0), &slope(1.0), 0.0, 1.0).is_err());
    }
}

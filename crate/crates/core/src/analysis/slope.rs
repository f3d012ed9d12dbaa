use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::nv_model::LockinCurve;

/// Linear fit of a lock-in curve around one of its zero crossings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// Signed slope, curve units per Hz.
    pub slope: f64,
    /// Hz.
    pub zero_crossing: f64,
    /// Fitted interval, Hz.
    pub window: (f64, f64),
    pub residual_rms: f64,
}

/// Ordinary least squares on the points within `half_window` of the zero
/// crossing nearest `around`.
pub fn fit_slope(curve: &LockinCurve, around: f64, half_window: f64) -> Result<SlopeFit> {
    let (freqs, values) = (&curve.freqs, &curve.values);
    if freqs.len() != values.len() || freqs.len() < 2 {
        return Err(NvError::invalid("lock-in curve needs at least two points"));
    }
    if !(half_window.is_finite() && half_window > 0.0) {
        return Err(NvError::invalid("half window must be positive"));
    }
    let no_crossing = || NvError::NoCrossing { around, half_window };

    // interpolated sign changes inside the search window
    let crossing = freqs
        .windows(2)
        .zip(values.windows(2))
        .filter(|(_, v)| (v[0] <= 0.0 && v[1] > 0.0) || (v[0] >= 0.0 && v[1] < 0.0))
        .map(|(f, v)| f[0] + (f[1] - f[0]) * v[0] / (v[0] - v[1]))
        .filter(|c| (c - around).abs() <= half_window)
        .min_by(|a, b| (a - around).abs().total_cmp(&(b - around).abs()))
        .ok_or_else(no_crossing)?;

    let points: Vec<(f64, f64)> = freqs
        .iter()
        .zip(values)
        .filter(|(f, _)| (*f - crossing).abs() <= half_window)
        .map(|(f, v)| (f - crossing, *v))
        .collect();
    if points.len() < 3 {
        return Err(NvError::invalid(format!(
            "only {} points within ±{half_window} Hz of the crossing",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(NvError::invalid("degenerate abscissae in slope window"));
    }
    let slope = sxy / sxx;
    if slope == 0.0 {
        return Err(no_crossing());
    }
    let intercept = my - slope * mx;
    let residual_rms = (points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(SlopeFit {
        slope,
        zero_crossing: crossing - intercept / slope,
        window: (crossing - half_window, crossing + half_window),
        residual_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(a: f64, b: f64) -> LockinCurve {
        let freqs: Vec<f64> = (0..101).map(|i| 1e6 + i as f64 * 1e3).collect();
        let values = freqs.iter().map(|f| a * (f - b)).collect();
        LockinCurve { freqs, values }
    }

    #[test]
    fn exact_line() {
        let fit = fit_slope(&line(2e-6, 1.0403e6), 1.04e6, 2e4).unwrap();
        assert!((fit.slope - 2e-6).abs() < 1e-18);
        assert!((fit.zero_crossing - 1.0403e6).abs() < 1e-6);
        assert!(fit.residual_rms < 1e-12);
        assert!(fit.window.0 <= fit.zero_crossing && fit.zero_crossing <= fit.window.1);
    }

    #[test]
    fn scaling_scales_slope_only() {
        let curve = line(-3e-6, 1.05e6);
        let a = fit_slope(&curve, 1.05e6, 1e4).unwrap();
        let b = fit_slope(&curve.scaled(7.5), 1.05e6, 1e4).unwrap();
        assert!((b.slope / a.slope - 7.5).abs() < 1e-12);
        assert!((b.zero_crossing - a.zero_crossing).abs() < 1e-6);
    }

    #[test]
    fn no_sign_change() {
        let curve = LockinCurve {
            freqs: (0..10).map(f64::from).collect(),
            values: vec![1.0; 10],
        };
        assert!(matches!(fit_slope(&curve, 5.0, 2.0), Err(NvError::NoCrossing { .. })));
        // crossing exists but outside the window
        assert!(matches!(fit_slope(&line(1.0, 1.09e6), 1.01e6, 1e3), Err(NvError::NoCrossing { .. })));
    }
}

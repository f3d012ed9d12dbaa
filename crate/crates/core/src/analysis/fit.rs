//! Multi-Lorentzian least-squares fit of normalized ODMR curves.
//!
//! Model: `b·(1 - Σ c_k·w_k² / ((ν-ν_k)² + w_k²))` with a free baseline `b`.
//! Levenberg-Marquardt with Marquardt's diagonal scaling, run in a
//! rescaled frequency coordinate so centers and widths are O(1).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::nv_model::OdmrCurve;

pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-8;
/// Relative cost decrease below which an accepted step ends the fit.
pub const COST_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    /// Hz.
    pub center: f64,
    /// Hz.
    pub hwhm: f64,
    /// Fractional dip depth.
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrFit {
    /// Sorted by center.
    pub lines: Vec<LineParams>,
    pub baseline: f64,
    pub residual_rms: f64,
    pub iterations: usize,
}

/// A detected local minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub index: usize,
    pub prominence: f64,
}

/// Local minima whose topographic prominence reaches `threshold`.
pub fn find_minima(values: &[f64], threshold: f64) -> Vec<Minimum> {
    let n = values.len();
    let mut out = Vec::new();
    if n < 3 {
        return out;
    }
    for i in 1..n - 1 {
        let v = values[i];
        if !(v < values[i - 1] && v <= values[i + 1]) {
            continue;
        }
        let mut left_max = v;
        for &u in values[..i].iter().rev() {
            if u < v {
                break;
            }
            left_max = left_max.max(u);
        }
        let mut right_max = v;
        for &u in &values[i + 1..] {
            if u < v {
                break;
            }
            right_max = right_max.max(u);
        }
        let prominence = left_max.min(right_max) - v;
        if prominence > 0.0 && prominence >= threshold {
            out.push(Minimum { index: i, prominence });
        }
    }
    out
}

/// Fits `n_lines` Lorentzian dips, seeding from the `n_lines` most prominent
/// minima. Minima count when their prominence is at least a third of the
/// curve's peak-to-peak depth.
pub fn fit_odmr(curve: &OdmrCurve, n_lines: usize) -> Result<OdmrFit> {
    if n_lines == 0 {
        return Err(NvError::invalid("n_lines must be at least 1"));
    }
    let values = &curve.values;
    let top = values.iter().cloned().fold(f64::MIN, f64::max);
    let bottom = values.iter().cloned().fold(f64::MAX, f64::min);
    let mut minima = find_minima(values, (top - bottom) / 3.0);
    if minima.len() < n_lines {
        return Err(NvError::FitFailed {
            reason: format!("found {} resolvable minima, need {n_lines}", minima.len()),
            iterations: 0,
            residual_rms: f64::NAN,
            last: Vec::new(),
        });
    }
    minima.sort_by(|a, b| b.prominence.total_cmp(&a.prominence));
    minima.truncate(n_lines);
    minima.sort_by_key(|m| m.index);

    let initial: Vec<LineParams> = minima
        .iter()
        .map(|m| LineParams {
            center: curve.freqs[m.index],
            hwhm: half_width_estimate(curve, m.index, m.prominence),
            contrast: (top - values[m.index]) / top,
        })
        .collect();
    fit_odmr_from(curve, &initial)
}

fn half_width_estimate(curve: &OdmrCurve, index: usize, prominence: f64) -> f64 {
    let level = curve.values[index] + 0.5 * prominence;
    let nu0 = curve.freqs[index];
    let right = (index..curve.len())
        .find(|&j| curve.values[j] >= level)
        .map(|j| curve.freqs[j] - nu0);
    let left = (0..=index)
        .rev()
        .find(|&j| curve.values[j] >= level)
        .map(|j| nu0 - curve.freqs[j]);
    let step = (curve.freqs[curve.len() - 1] - curve.freqs[0]) / (curve.len() - 1) as f64;
    match (left, right) {
        (Some(l), Some(r)) => 0.5 * (l + r),
        (Some(w), None) | (None, Some(w)) => w,
        (None, None) => 10.0 * step,
    }
    .max(step)
}

struct Problem<'a> {
    u: Vec<f64>,
    y: &'a [f64],
    origin: f64,
    scale: f64,
    lines: usize,
}

impl Problem<'_> {
    fn model(&self, p: &DVector<f64>, u: f64) -> f64 {
        let mut dip = 0.0;
        for k in 0..self.lines {
            let (mu, w, c) = (p[1 + 3 * k], p[2 + 3 * k], p[3 + 3 * k]);
            let x = u - mu;
            dip += c * w * w / (x * x + w * w);
        }
        p[0] * (1.0 - dip)
    }

    fn unpack(&self, p: &DVector<f64>) -> Vec<LineParams> {
        let mut lines: Vec<LineParams> = (0..self.lines)
            .map(|k| LineParams {
                center: self.origin + self.scale * p[1 + 3 * k],
                hwhm: self.scale * p[2 + 3 * k].abs(),
                contrast: p[3 + 3 * k],
            })
            .collect();
        lines.sort_by(|a, b| a.center.total_cmp(&b.center));
        lines
    }
}

impl LeastSquares for Problem<'_> {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.u.len(),
            self.u.iter().zip(self.y).map(|(&u, &y)| y - self.model(p, u)),
        )
    }

    fn normalize(&self, p: &mut DVector<f64>) {
        for k in 0..self.lines {
            p[2 + 3 * k] = p[2 + 3 * k].abs();
        }
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let m = self.u.len();
        let mut j = DMatrix::zeros(m, 1 + 3 * self.lines);
        for (i, &u) in self.u.iter().enumerate() {
            let b = p[0];
            let mut dip = 0.0;
            for k in 0..self.lines {
                let (mu, w, c) = (p[1 + 3 * k], p[2 + 3 * k], p[3 + 3 * k]);
                let x = u - mu;
                let d = x * x + w * w;
                let l = w * w / d;
                dip += c * l;
                j[(i, 1 + 3 * k)] = -b * c * 2.0 * x * w * w / (d * d);
                j[(i, 2 + 3 * k)] = -b * c * 2.0 * w * x * x / (d * d);
                j[(i, 3 + 3 * k)] = -b * l;
            }
            j[(i, 0)] = 1.0 - dip;
        }
        j
    }
}

/// Levenberg-Marquardt from explicit starting lines. Converged when the
/// relative parameter step drops below 1e-8; gives up after 200 iterations.
pub fn fit_odmr_from(curve: &OdmrCurve, initial: &[LineParams]) -> Result<OdmrFit> {
    if initial.is_empty() {
        return Err(NvError::invalid("no starting lines"));
    }
    let n_params = 1 + 3 * initial.len();
    if curve.len() <= n_params {
        return Err(NvError::invalid("curve has fewer points than fit parameters"));
    }
    let origin = 0.5 * (curve.freqs[0] + curve.freqs[curve.len() - 1]);
    let scale = (curve.freqs[curve.len() - 1] - curve.freqs[0]) / 100.0;
    let problem = Problem {
        u: curve.freqs.iter().map(|f| (f - origin) / scale).collect(),
        y: &curve.values,
        origin,
        scale,
        lines: initial.len(),
    };

    let top = curve.values.iter().cloned().fold(f64::MIN, f64::max);
    let mut p = DVector::zeros(n_params);
    p[0] = top;
    for (k, line) in initial.iter().enumerate() {
        p[1 + 3 * k] = (line.center - origin) / scale;
        p[2 + 3 * k] = line.hwhm / scale;
        p[3 + 3 * k] = line.contrast;
    }

    match levenberg_marquardt(&problem, p) {
        Ok(fit) => Ok(OdmrFit {
            lines: problem.unpack(&fit.p),
            baseline: fit.p[0],
            residual_rms: fit.residual_rms,
            iterations: fit.iterations,
        }),
        Err(fail) => Err(NvError::FitFailed {
            reason: fail.reason.into(),
            iterations: fail.iterations,
            residual_rms: fail.residual_rms,
            last: problem.unpack(&fail.p),
        }),
    }
}

/// A least-squares model for [`levenberg_marquardt`]. Residuals are
/// `y - f(p)` and the Jacobian is that of `f`.
pub(crate) trait LeastSquares {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64>;
    /// Maps a trial point onto the canonical parametrization.
    fn normalize(&self, _p: &mut DVector<f64>) {}
}

pub(crate) struct LmResult {
    pub p: DVector<f64>,
    pub residual_rms: f64,
    pub iterations: usize,
}

pub(crate) struct LmFailure {
    pub reason: &'static str,
    pub p: DVector<f64>,
    pub residual_rms: f64,
    pub iterations: usize,
}

pub(crate) fn levenberg_marquardt(model: &impl LeastSquares, mut p: DVector<f64>) -> Result<LmResult, LmFailure> {
    let n_params = p.len();
    let rms = |r: &DVector<f64>| (r.norm_squared() / r.len() as f64).sqrt();
    let mut r = model.residuals(&p);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;

    for iteration in 1..=MAX_ITERATIONS {
        let j = model.jacobian(&p);
        let jt = j.transpose();
        let a = &jt * &j;
        let g = &jt * &r;
        loop {
            let mut damped = a.clone();
            for d in 0..n_params {
                damped[(d, d)] += lambda * a[(d, d)].max(1e-30);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e30 {
                        return Err(LmFailure {
                            reason: "singular normal equations",
                            residual_rms: rms(&r),
                            p,
                            iterations: iteration,
                        });
                    }
                    continue;
                }
            };
            let mut trial = &p + &step;
            model.normalize(&mut trial);
            let small = step.norm() <= STEP_TOLERANCE * (p.norm() + STEP_TOLERANCE);
            let r_trial = model.residuals(&trial);
            let cost_trial = r_trial.norm_squared();
            if cost_trial.is_finite() && cost_trial <= cost {
                let stalled = cost - cost_trial <= COST_TOLERANCE * cost;
                p = trial;
                r = r_trial;
                cost = cost_trial;
                lambda = (lambda / 3.0).max(1e-15);
                if small || stalled {
                    return Ok(LmResult {
                        residual_rms: rms(&r),
                        p,
                        iterations: iteration,
                    });
                }
                break;
            }
            if small || lambda > 1e30 {
                // no downhill step left at this precision
                return Ok(LmResult {
                    residual_rms: rms(&r),
                    p,
                    iterations: iteration,
                });
            }
            lambda *= 4.0;
        }
    }
    Err(LmFailure {
        reason: "iteration limit reached",
        residual_rms: rms(&r),
        p,
        iterations: MAX_ITERATIONS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nv_model::lorentzian;
    use crate::rng::{Gaussian, NoiseStream};

    fn synth(lines: &[LineParams], lo: f64, hi: f64, n: usize) -> OdmrCurve {
        let freqs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let values = freqs
            .iter()
            .map(|&f| 1.0 - lines.iter().map(|l| l.contrast * lorentzian(f, l.center, l.hwhm)).sum::<f64>())
            .collect();
        OdmrCurve::new(freqs, values).unwrap()
    }

    #[test]
    fn noiseless_single_line_round_trip() {
        let truth = LineParams {
            center: 2.87e9,
            hwhm: 617e3,
            contrast: 0.0153,
        };
        let curve = synth(&[truth], 2.87e9 - 8e6, 2.87e9 + 8e6, 801);
        let fit = fit_odmr(&curve, 1).unwrap();
        let got = fit.lines[0];
        assert!((got.center - truth.center).abs() / truth.hwhm < 1e-4);
        assert!((got.hwhm / truth.hwhm - 1.0).abs() < 1e-4);
        assert!((got.contrast / truth.contrast - 1.0).abs() < 1e-4);
        assert!((fit.baseline - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noisy_triplet_centers_within_1khz() {
        let a = 2.158e6;
        let truth: Vec<LineParams> = [-1.0, 0.0, 1.0]
            .iter()
            .map(|m| LineParams {
                center: 2.87e9 + m * a,
                hwhm: 617e3,
                contrast: 0.0153,
            })
            .collect();
        let mut curve = synth(&truth, 2.87e9 - 10e6, 2.87e9 + 10e6, 4001);
        let sigma = 0.0153 / 100.0;
        let mut g = Gaussian::new(31, NoiseStream::Auxiliary(0));
        for v in &mut curve.values {
            *v += sigma * g.sample();
        }
        let fit = fit_odmr(&curve, 3).unwrap();
        for (got, want) in fit.lines.iter().zip(&truth) {
            assert!((got.center - want.center).abs() < 1e3, "{} vs {}", got.center, want.center);
        }
    }

    #[test]
    fn flat_curve_fails() {
        let curve = OdmrCurve::new((0..100).map(|i| 2.8e9 + i as f64 * 1e5).collect(), vec![1.0; 100]).unwrap();
        assert!(matches!(fit_odmr(&curve, 1), Err(NvError::FitFailed { .. })));
    }

    #[test]
    fn fit_is_translation_equivariant() {
        let truth = LineParams {
            center: 2.87e9,
            hwhm: 500e3,
            contrast: 0.02,
        };
        let shift = 3.3e6;
        let a = fit_odmr(&synth(&[truth], 2.86e9, 2.88e9, 1001), 1).unwrap();
        let moved = LineParams {
            center: truth.center + shift,
            ..truth
        };
        let b = fit_odmr(&synth(&[moved], 2.86e9 + shift, 2.88e9 + shift, 1001), 1).unwrap();
        assert!((b.lines[0].center - a.lines[0].center - shift).abs() < 1.0);
    }

    #[test]
    fn prominence_filter() {
        let v = [1.0, 0.5, 1.0, 0.95, 1.0, 0.2, 1.0];
        let minima = find_minima(&v, 0.3);
        assert_eq!(minima.iter().map(|m| m.index).collect::<Vec<_>>(), vec![1, 5]);
        assert!((minima[0].prominence - 0.5).abs() < 1e-12);
    }
}

//! Hyperfine-triplet fit: every transition is a triplet at `μ + m·a_hf`,
//! `m ∈ {-1, 0, 1}`, and all lines share one width and one contrast.
//!
//! Model: `b·(1 - c·Σ_k Σ_m w² / ((ν-μ_k-m·a)² + w²))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fit::{levenberg_marquardt, LeastSquares, LineParams};
use crate::error::{NvError, Result};
use crate::nv_model::OdmrCurve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletFit {
    /// `m_I = 0` centers, Hz, in the order of the starting guesses.
    pub centers: Vec<f64>,
    pub hwhm: f64,
    pub contrast: f64,
    pub baseline: f64,
    pub residual_rms: f64,
    pub iterations: usize,
}

struct Triplets<'a> {
    u: Vec<f64>,
    y: &'a [f64],
    a: f64,
    n: usize,
}

impl Triplets<'_> {
    // parameters: [b, w, c, μ_0 .. μ_n-1]
    fn model(&self, p: &DVector<f64>, u: f64) -> f64 {
        let w2 = p[1] * p[1];
        let mut sum = 0.0;
        for k in 0..self.n {
            for m in [-1.0, 0.0, 1.0] {
                let x = u - p[3 + k] - m * self.a;
                sum += w2 / (x * x + w2);
            }
        }
        p[0] * (1.0 - p[2] * sum)
    }
}

impl LeastSquares for Triplets<'_> {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.u.len(),
            self.u.iter().zip(self.y).map(|(&u, &y)| y - self.model(p, u)),
        )
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let (b, w, c) = (p[0], p[1], p[2]);
        let w2 = w * w;
        let mut j = DMatrix::zeros(self.u.len(), 3 + self.n);
        for (i, &u) in self.u.iter().enumerate() {
            let (mut sum, mut d_w) = (0.0, 0.0);
            for k in 0..self.n {
                let mut d_mu = 0.0;
                for m in [-1.0, 0.0, 1.0] {
                    let x = u - p[3 + k] - m * self.a;
                    let d = x * x + w2;
                    sum += w2 / d;
                    d_w += 2.0 * w * x * x / (d * d);
                    d_mu += 2.0 * x * w2 / (d * d);
                }
                j[(i, 3 + k)] = -b * c * d_mu;
            }
            j[(i, 0)] = 1.0 - c * sum;
            j[(i, 1)] = -b * c * d_w;
            j[(i, 2)] = -b * sum;
        }
        j
    }

    fn normalize(&self, p: &mut DVector<f64>) {
        p[1] = p[1].abs();
    }
}

/// Fits `centers.len()` triplets with hyperfine spacing `a_hf`, starting
/// from the given centers, width and per-line contrast.
pub fn fit_triplets(curve: &OdmrCurve, centers: &[f64], a_hf: f64, hwhm: f64, contrast: f64) -> Result<TripletFit> {
    if centers.is_empty() {
        return Err(NvError::invalid("no starting triplets"));
    }
    for (name, v) in [("a_hf", a_hf), ("hwhm", hwhm), ("contrast", contrast)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(NvError::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    let n_params = 3 + centers.len();
    if curve.len() <= n_params {
        return Err(NvError::invalid("curve has fewer points than fit parameters"));
    }
    let first = curve.freqs[0];
    let last = curve.freqs[curve.len() - 1];
    let origin = 0.5 * (first + last);
    let scale = (last - first) / 100.0;
    let problem = Triplets {
        u: curve.freqs.iter().map(|f| (f - origin) / scale).collect(),
        y: &curve.values,
        a: a_hf / scale,
        n: centers.len(),
    };
    let top = curve.values.iter().cloned().fold(f64::MIN, f64::max);
    let mut p = DVector::zeros(n_params);
    p[0] = top;
    p[1] = hwhm / scale;
    p[2] = contrast;
    for (k, &c) in centers.iter().enumerate() {
        p[3 + k] = (c - origin) / scale;
    }
    let lines = |p: &DVector<f64>| -> Vec<LineParams> {
        (0..centers.len())
            .map(|k| LineParams {
                center: origin + scale * p[3 + k],
                hwhm: scale * p[1].abs(),
                contrast: p[2],
            })
            .collect()
    };
    match levenberg_marquardt(&problem, p) {
        Ok(fit) => Ok(TripletFit {
            centers: (0..centers.len()).map(|k| origin + scale * fit.p[3 + k]).collect(),
            hwhm: scale * fit.p[1],
            contrast: fit.p[2],
            baseline: fit.p[0],
            residual_rms: fit.residual_rms,
            iterations: fit.iterations,
        }),
        Err(fail) => Err(NvError::FitFailed {
            reason: fail.reason.into(),
            iterations: fail.iterations,
            residual_rms: fail.residual_rms,
            last: lines(&fail.p),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nv_model::lorentzian;
    use crate::rng::{Gaussian, NoiseStream};

    const A: f64 = 2.158e6;

    fn synth(centers: &[f64], w: f64, c: f64, sigma: f64) -> OdmrCurve {
        let mut g = Gaussian::new(3, NoiseStream::Auxiliary(1));
        let freqs: Vec<f64> = (0..1201).map(|i| 2.83e9 + i as f64 * 50e3).collect();
        let values = freqs
            .iter()
            .map(|&f| {
                let dip: f64 = centers
                    .iter()
                    .flat_map(|&mu| [-A, 0.0, A].map(|o| lorentzian(f, mu + o, w)))
                    .sum();
                1.0 - c * dip + sigma * g.sample()
            })
            .collect();
        OdmrCurve::new(freqs, values).unwrap()
    }

    #[test]
    fn recovers_exact_triplets() {
        let truth = [2.85e9, 2.862e9, 2.88e9];
        let curve = synth(&truth, 870e3, 0.0076, 0.0);
        let start = [2.8503e9, 2.8617e9, 2.8798e9];
        let fit = fit_triplets(&curve, &start, A, 600e3, 0.005).unwrap();
        for (got, want) in fit.centers.iter().zip(truth) {
            assert!((got - want).abs() < 1.0, "{got} vs {want}");
        }
        assert!((fit.hwhm - 870e3).abs() < 1.0);
        assert!((fit.contrast - 0.0076).abs() < 1e-9);
    }

    #[test]
    fn separates_near_coincident_triplets() {
        // m_I = 0 lines 60 kHz apart; partners pin each center
        let truth = [2.86e9, 2.86006e9, 2.875e9];
        let curve = synth(&truth, 870e3, 0.0076, 0.0);
        let start = [2.85995e9, 2.86012e9, 2.875e9];
        let fit = fit_triplets(&curve, &start, A, 870e3, 0.0076).unwrap();
        for (got, want) in fit.centers.iter().zip(truth) {
            assert!((got - want).abs() < 10.0, "{got} vs {want}");
        }
    }

    #[test]
    fn noisy_centers_land_within_a_few_kilohertz() {
        let truth = [2.85e9, 2.87e9];
        let curve = synth(&truth, 870e3, 0.0076, 1e-4);
        let fit = fit_triplets(&curve, &[2.8502e9, 2.8699e9], A, 800e3, 0.007).unwrap();
        for (got, want) in fit.centers.iter().zip(truth) {
            assert!((got - want).abs() < 3e3, "{got} vs {want}");
        }
    }

    #[test]
    fn rejects_bad_starts() {
        let curve = synth(&[2.87e9], 870e3, 0.0076, 0.0);
        assert!(fit_triplets(&curve, &[], A, 1e5, 0.01).is_err());
        assert!(fit_triplets(&curve, &[2.87e9], A, -1.0, 0.01).is_err());
    }
}

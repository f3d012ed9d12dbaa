//! On-board digital processing: balance detection, lock-in demodulation and
//! the ODMR integrator.
//!
//! The reference is a ±1 square wave phase-locked to the FSK drive. Each
//! mixer output is smoothed by a single moving average of `T` seconds whose
//! ENBW is taken as `1/(2T)`; the window is `round(fs / (2·ENBW))` samples.

mod fixed;
mod integrator;

use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::mw_control::square_high;
use crate::signal_chain::DualTimeSeries;

pub use fixed::{demodulate_fixed, FixedPointReport, FixedPointSpec, Rounding};
pub use integrator::{odmr_integrate, Baseline};

/// Smallest moving-average window accepted.
pub const MIN_WINDOW: usize = 4;

/// Gains of the digital balance `k1·A - k2·B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceConfig {
    pub k1: f64,
    pub k2: f64,
}

impl BalanceConfig {
    pub fn unbalanced(k1: f64) -> Self {
        BalanceConfig { k1, k2: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(NvError::config("balance.k1", "must be positive"));
        }
        if !(self.k2.is_finite() && self.k2 >= 0.0) {
            return Err(NvError::config("balance.k2", "must be non-negative"));
        }
        Ok(())
    }
}

/// A single-channel voltage stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl Stream {
    pub fn new(sample_rate: f64, samples: Vec<f64>) -> Self {
        Stream { sample_rate, samples }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// `y[n] = k1·v_a[n] - k2·v_b[n]` on de-quantized volts.
pub fn balance(ts: &DualTimeSeries, cfg: &BalanceConfig) -> Result<Stream> {
    cfg.validate()?;
    if ts.codes_a.len() != ts.codes_b.len() {
        return Err(NvError::invalid("channel lengths differ"));
    }
    let samples = ts
        .codes_a
        .iter()
        .zip(&ts.codes_b)
        .map(|(&a, &b)| cfg.k1 * ts.to_volts(a) - cfg.k2 * ts.to_volts(b))
        .collect();
    Ok(Stream::new(ts.sample_rate, samples))
}

/// Chooses `k2` minimizing the variance of the balanced output for a fixed
/// `k1`, by golden-section search on the recorded second moments. The result
/// is cross-checked against the regression solution `k1·cov(A,B)/var(B)`.
pub fn tune_balance(ts: &DualTimeSeries, k1: f64) -> Result<BalanceConfig> {
    BalanceConfig::unbalanced(k1).validate()?;
    if ts.codes_a.len() != ts.codes_b.len() || ts.len() < 2 {
        return Err(NvError::invalid("need two equal-length channels with at least two samples"));
    }
    let n = ts.len() as f64;
    let pairs = || ts.codes_a.iter().zip(&ts.codes_b).map(|(&a, &b)| (ts.to_volts(a), ts.to_volts(b)));
    let (sum_a, sum_b) = pairs().fold((0.0, 0.0), |(sa, sb), (a, b)| (sa + a, sb + b));
    let (mean_a, mean_b) = (sum_a / n, sum_b / n);
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in pairs() {
        let (x, y) = (a - mean_a, b - mean_b);
        var_a += x * x;
        var_b += y * y;
        cov += x * y;
    }
    let (var_a, var_b, cov) = (var_a / n, var_b / n, cov / n);
    if var_b <= 0.0 {
        return Err(NvError::DegenerateReference);
    }
    let closed_form = (k1 * cov / var_b).max(0.0);

    let variance = |k2: f64| k1 * k1 * var_a - 2.0 * k1 * k2 * cov + k2 * k2 * var_b;
    // Cauchy-Schwarz bounds the optimum by k1·σ_a/σ_b.
    let upper = 2.0 * k1 * (var_a / var_b).sqrt() + 1e-12 * k1;
    let k2 = golden_section_min(variance, 0.0, upper, 1e-10 * upper.max(k1));

    let scale = closed_form.abs().max(1e-6 * k1);
    if (k2 - closed_form).abs() > 0.01 * scale {
        return Err(NvError::Numeric(format!(
            "golden-section k2 = {k2} disagrees with regression k2 = {closed_form}"
        )));
    }
    Ok(BalanceConfig { k1, k2 })
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Demodulation reference waveform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// ±1 square wave (default).
    #[default]
    Square,
    /// First harmonic only, scaled by π/2 so a square input of amplitude A
    /// still reads X = A. The ENBW identity does not hold for this variant.
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LockinConfig {
    /// Reference frequency, Hz.
    pub f_m: f64,
    /// Reference delay, samples; a quarter period moves X into Y.
    pub phase_offset: i64,
    /// Equivalent noise bandwidth of the moving average, Hz.
    pub enbw: f64,
    /// Output sample rate, Hz.
    pub output_rate: f64,
    pub reference: Reference,
}

impl Default for LockinConfig {
    fn default() -> Self {
        LockinConfig {
            f_m: 1e3,
            phase_offset: 0,
            enbw: 10.4,
            output_rate: 200.0,
            reference: Reference::Square,
        }
    }
}

impl LockinConfig {
    /// Moving-average length in samples, `round(fs / (2·ENBW))`.
    pub fn window(&self, sample_rate: f64) -> usize {
        (sample_rate / (2.0 * self.enbw)).round() as usize
    }

    /// Integration time of the moving average, seconds.
    pub fn integration_time(&self, sample_rate: f64) -> f64 {
        self.window(sample_rate) as f64 / sample_rate
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if !(self.f_m.is_finite() && self.f_m > 0.0) {
            return Err(NvError::config("lockin.f_m", "must be positive"));
        }
        if !(self.enbw.is_finite() && self.enbw > 0.0) {
            return Err(NvError::config("lockin.enbw", "must be positive"));
        }
        let window = self.window(sample_rate);
        if window < MIN_WINDOW {
            return Err(NvError::EnbwTooWide { window });
        }
        if !(0.5..=1000.0).contains(&self.enbw) {
            return Err(NvError::config("lockin.enbw", "must lie in [0.5, 1000] Hz"));
        }
        if !(self.output_rate.is_finite() && self.output_rate > 0.0 && self.output_rate <= sample_rate) {
            return Err(NvError::config("lockin.output_rate", "must lie in (0, sample_rate]"));
        }
        let half_periods = sample_rate / (2.0 * self.f_m);
        if (half_periods - half_periods.round()).abs() > 1e-9 * half_periods {
            return Err(NvError::config(
                "lockin.f_m",
                format!("sample rate {sample_rate} is not an integer multiple of 2·f_m"),
            ));
        }
        Ok(())
    }

    /// In-phase and quadrature reference values at sample `n`.
    #[inline]
    pub(crate) fn references(&self, n: u64, sample_rate: f64) -> (f64, f64) {
        let cycles = (n as i64 + self.phase_offset) as f64 * self.f_m / sample_rate;
        match self.reference {
            Reference::Square => {
                let x = if square_high(cycles) { 1.0 } else { -1.0 };
                let y = if square_high(cycles - 0.25) { 1.0 } else { -1.0 };
                (x, y)
            }
            Reference::Sine => {
                let phase = 2.0 * std::f64::consts::PI * cycles;
                let g = std::f64::consts::FRAC_PI_2;
                (g * phase.sin(), -g * phase.cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Path {
    Float,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockinOutput {
    pub rate: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub enbw: f64,
    /// Moving-average length actually used, samples.
    pub window: usize,
    pub path: Path,
}

impl LockinOutput {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        (k + 1) as f64 / self.rate
    }

    /// Outputs whose moving average is fully populated.
    pub fn settled(&self, sample_rate: f64) -> std::ops::Range<usize> {
        let first = (0..self.len())
            .find(|&k| output_sample_index(k, sample_rate, self.rate) + 1 >= self.window as u64)
            .unwrap_or(self.len());
        first..self.len()
    }
}

/// Input sample index at which output `k` is taken.
#[inline]
pub(crate) fn output_sample_index(k: usize, sample_rate: f64, output_rate: f64) -> u64 {
    ((k as f64 + 1.0) * sample_rate / output_rate).floor() as u64 - 1
}

/// Streaming float lock-in. Feed samples with [`Demodulator::push`].
pub struct Demodulator {
    cfg: LockinConfig,
    sample_rate: f64,
    window: usize,
    ring_x: Vec<f64>,
    ring_y: Vec<f64>,
    pos: usize,
    sum_x: f64,
    sum_y: f64,
    n: u64,
    next_emit: u64,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Demodulator {
    pub fn new(cfg: &LockinConfig, sample_rate: f64) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let window = cfg.window(sample_rate);
        Ok(Demodulator {
            cfg: *cfg,
            sample_rate,
            window,
            ring_x: vec![0.0; window],
            ring_y: vec![0.0; window],
            pos: 0,
            sum_x: 0.0,
            sum_y: 0.0,
            n: 0,
            next_emit: output_sample_index(0, sample_rate, cfg.output_rate),
            x: Vec::new(),
            y: Vec::new(),
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn push(&mut self, sample: f64) {
        let (rx, ry) = self.cfg.references(self.n, self.sample_rate);
        let mx = sample * rx;
        let my = sample * ry;
        self.sum_x += mx - self.ring_x[self.pos];
        self.sum_y += my - self.ring_y[self.pos];
        self.ring_x[self.pos] = mx;
        self.ring_y[self.pos] = my;
        self.pos += 1;
        if self.pos == self.window {
            self.pos = 0;
            // resynchronize the running sums once per window
            self.sum_x = self.ring_x.iter().sum();
            self.sum_y = self.ring_y.iter().sum();
        }
        if self.n == self.next_emit {
            let count = (self.n + 1).min(self.window as u64) as f64;
            self.x.push(self.sum_x / count);
            self.y.push(self.sum_y / count);
            self.next_emit = output_sample_index(self.x.len(), self.sample_rate, self.cfg.output_rate);
        }
        self.n += 1;
    }

    pub fn finish(self) -> LockinOutput {
        LockinOutput {
            rate: self.cfg.output_rate,
            x: self.x,
            y: self.y,
            enbw: self.cfg.enbw,
            window: self.window,
            path: Path::Float,
        }
    }
}

/// Float-path lock-in over a recorded stream.
pub fn demodulate(stream: &Stream, cfg: &LockinConfig) -> Result<LockinOutput> {
    let mut demod = Demodulator::new(cfg, stream.sample_rate)?;
    if stream.samples.len() < 2 * demod.window() {
        return Err(NvError::invalid(format!(
            "stream of {} samples is shorter than two filter windows ({})",
            stream.samples.len(),
            2 * demod.window()
        )));
    }
    for &s in &stream.samples {
        demod.push(s);
    }
    Ok(demod.finish())
}

/// Mean of the mixer outputs over a whole block, (X, Y). Used for sweep
/// points whose dwell is an integer number of modulation periods.
pub fn block_average(samples: impl IntoIterator<Item = f64>, cfg: &LockinConfig, sample_rate: f64) -> (f64, f64) {
    let (mut sx, mut sy, mut count) = (0.0, 0.0, 0u64);
    for (n, s) in samples.into_iter().enumerate() {
        let (rx, ry) = cfg.references(n as u64, sample_rate);
        sx += s * rx;
        sy += s * ry;
        count += 1;
    }
    if count == 0 {
        return (0.0, 0.0);
    }
    (sx / count as f64, sy / count as f64)
}

/// AC-coupled lock-in input: each sample minus the mean of the trailing
/// reference period. Over a whole period the square-wave signal averages to
/// zero, so only the DC level is removed and the mixer sees no offset to
/// leak through a window that is not a whole number of periods. The first
/// period is referenced to its own mean.
pub fn ac_couple<I: Iterator<Item = f64>>(samples: I, period: usize) -> AcCoupled<I> {
    AcCoupled {
        inner: samples,
        period: period.max(1),
        ring: Vec::new(),
        pos: 0,
        sum: 0.0,
        head: Vec::new().into_iter(),
        started: false,
    }
}

pub struct AcCoupled<I> {
    inner: I,
    period: usize,
    ring: Vec<f64>,
    pos: usize,
    sum: f64,
    head: std::vec::IntoIter<f64>,
    started: bool,
}

impl<I: Iterator<Item = f64>> Iterator for AcCoupled<I> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if !self.started {
            self.started = true;
            self.ring = self.inner.by_ref().take(self.period).collect();
            self.sum = self.ring.iter().sum();
            let mean = self.sum / self.ring.len().max(1) as f64;
            self.head = self.ring.iter().map(|v| v - mean).collect::<Vec<_>>().into_iter();
        }
        if let Some(v) = self.head.next() {
            return Some(v);
        }
        if self.ring.len() < self.period {
            return None;
        }
        let s = self.inner.next()?;
        self.sum += s - std::mem::replace(&mut self.ring[self.pos], s);
        self.pos += 1;
        if self.pos == self.period {
            // re-sum once per period so rounding cannot drift
            self.pos = 0;
            self.sum = self.ring.iter().sum();
        }
        Some(s - self.sum / self.period as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Gaussian, NoiseStream};
    use crate::signal_chain::DualTimeSeries;

    fn series_from_volts(a: &[f64], b: &[f64], full_scale: f64) -> DualTimeSeries {
        let q = full_scale / 65536.0;
        let code = |v: f64| ((v / q).floor().clamp(0.0, 65535.0)) as u16;
        DualTimeSeries {
            sample_rate: 1e5,
            bits: 16,
            full_scale,
            t0: 0.0,
            seed_used: 0,
            config_digest: String::new(),
            clamped_a: 0,
            clamped_b: 0,
            codes_a: a.iter().map(|&v| code(v)).collect(),
            codes_b: b.iter().map(|&v| code(v)).collect(),
        }
    }

    fn cfg(fs: f64, enbw: f64) -> (LockinConfig, f64) {
        (
            LockinConfig {
                f_m: 1e3,
                enbw,
                output_rate: 200.0,
                ..LockinConfig::default()
            },
            fs,
        )
    }

    fn square_stream(amplitude: f64, fs: f64, n: usize, offset: i64) -> Stream {
        let c = LockinConfig {
            phase_offset: offset,
            ..LockinConfig::default()
        };
        Stream::new(fs, (0..n as u64).map(|i| amplitude * c.references(i, fs).0).collect())
    }

    #[test]
    fn balance_special_cases() {
        let a: Vec<f64> = (0..100).map(|i| 1.0 + 0.001 * i as f64).collect();
        let ts = series_from_volts(&a, &a, 2.0);
        let out = balance(&ts, &BalanceConfig { k1: 1.0, k2: 0.0 }).unwrap();
        assert_eq!(out.samples, ts.volts_a());
        let out = balance(&ts, &BalanceConfig { k1: 3.0, k2: 3.0 }).unwrap();
        assert!(out.samples.iter().all(|&v| v == 0.0));
        assert!(balance(&ts, &BalanceConfig { k1: 0.0, k2: 1.0 }).is_err());
    }

    #[test]
    fn tune_balance_limits() {
        let mut g = Gaussian::new(1, NoiseStream::Auxiliary(0));
        let mut h = Gaussian::new(1, NoiseStream::Auxiliary(1));
        let n = 200_000;
        let a: Vec<f64> = (0..n).map(|_| 1.0 + 0.01 * g.sample()).collect();
        let b: Vec<f64> = (0..n).map(|_| 1.0 + 0.01 * h.sample()).collect();
        let ts = series_from_volts(&a, &b, 2.0);
        let k = tune_balance(&ts, 1000.0).unwrap();
        // regression slope sd ≈ 1/sqrt(N) for equal variances
        assert!(k.k2 / 1000.0 < 3.0 / (n as f64).sqrt(), "{}", k.k2);

        // perfectly correlated channels: A = g·B (exact in codes)
        let codes_b: Vec<u16> = (0..n).map(|i| 1000 + (i % 5000) as u16).collect();
        let mut exact = series_from_volts(&[0.0], &[0.0], 2.0);
        exact.codes_b = codes_b.clone();
        exact.codes_a = codes_b.iter().map(|c| 2 * c + 1).collect();
        // (2c+1+0.5) = 2(c+0.5) + 0.5, so volts_a = 2·volts_b + const
        let k = tune_balance(&exact, 1000.0).unwrap();
        assert!((k.k2 / 2000.0 - 1.0).abs() < 1e-6, "{}", k.k2);

        let flat = series_from_volts(&a, &vec![1.0; n], 2.0);
        assert_eq!(tune_balance(&flat, 1000.0), Err(NvError::DegenerateReference));
    }

    #[test]
    fn matched_square_wave_reads_amplitude() {
        let (c, fs) = cfg(100e3, 100.0);
        let s = square_stream(0.25, fs, 20_000, 0);
        let out = demodulate(&s, &c).unwrap();
        let settled = out.settled(fs);
        assert!(!settled.is_empty());
        for k in settled {
            assert!((out.x[k] - 0.25).abs() < 1e-9);
            assert!(out.y[k].abs() < 1e-9);
        }
    }

    #[test]
    fn dc_is_rejected() {
        let (c, fs) = cfg(100e3, 100.0);
        let s = Stream::new(fs, vec![1.7; 20_000]);
        let out = demodulate(&s, &c).unwrap();
        for k in out.settled(fs) {
            assert!(out.x[k].abs() < 1e-9 && out.y[k].abs() < 1e-9);
        }
    }

    #[test]
    fn window_lengths_follow_enbw_identity() {
        let fs = 1e6;
        let lo = LockinConfig { enbw: 1.3, ..LockinConfig::default() };
        let hi = LockinConfig { enbw: 625.0, ..LockinConfig::default() };
        assert_eq!(lo.window(fs), 384_615);
        assert!((lo.integration_time(fs) - 0.385).abs() < 5e-4);
        assert_eq!(hi.window(fs), 800);
        assert_eq!(hi.integration_time(fs), 0.8e-3);
    }

    #[test]
    fn validation_errors() {
        let c = LockinConfig { enbw: 625.0, ..LockinConfig::default() };
        assert_eq!(c.validate(4000.0), Err(NvError::EnbwTooWide { window: 3 }));
        let c = LockinConfig { enbw: 0.1, ..LockinConfig::default() };
        assert!(matches!(c.validate(1e6), Err(NvError::Config { .. })));
        let c = LockinConfig { f_m: 3e3, ..LockinConfig::default() };
        assert!(c.validate(1e5).is_err());
        let (c, fs) = cfg(100e3, 100.0);
        assert!(demodulate(&Stream::new(fs, vec![0.0; 100]), &c).is_err());
    }

    #[test]
    fn output_length_is_floor_of_duration_times_rate() {
        let (c, fs) = cfg(100e3, 10.4);
        let s = Stream::new(fs, vec![0.0; 123_457]);
        let out = demodulate(&s, &c).unwrap();
        assert_eq!(out.len(), (123_457.0 / fs * 200.0f64).floor() as usize);
    }

    #[test]
    fn quarter_period_offset_moves_x_into_y() {
        let (c, fs) = cfg(100e3, 50.0);
        let s = square_stream(1.0, fs, 40_000, 0);
        let shifted = LockinConfig {
            phase_offset: (fs / c.f_m / 4.0) as i64,
            ..c
        };
        let out = demodulate(&s, &shifted).unwrap();
        for k in out.settled(fs) {
            assert!(out.x[k].abs() < 0.01);
            assert!((out.y[k] - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn sine_reference_reads_square_amplitude() {
        let (mut c, fs) = cfg(100e3, 50.0);
        c.reference = Reference::Sine;
        let s = square_stream(0.5, fs, 40_000, 0);
        let out = demodulate(&s, &c).unwrap();
        let k = out.len() - 1;
        assert!((out.x[k] - 0.5).abs() < 1e-3, "{}", out.x[k]);
    }

    #[test]
    fn demodulation_is_linear_and_commutes_with_balance() {
        let fs = 100e3;
        let c = LockinConfig { enbw: 100.0, ..LockinConfig::default() };
        let mut g = Gaussian::new(4, NoiseStream::Auxiliary(2));
        let s1: Vec<f64> = (0..20_000).map(|_| g.sample()).collect();
        let s2: Vec<f64> = (0..20_000).map(|i| (i as f64 * 0.0123).sin()).collect();
        let (a, b) = (0.7, -2.5);
        let mixed: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
        let d1 = demodulate(&Stream::new(fs, s1), &c).unwrap();
        let d2 = demodulate(&Stream::new(fs, s2), &c).unwrap();
        let dm = demodulate(&Stream::new(fs, mixed), &c).unwrap();
        for k in 0..dm.len() {
            assert!((dm.x[k] - (a * d1.x[k] + b * d2.x[k])).abs() < 1e-9);
            assert!((dm.y[k] - (a * d1.y[k] + b * d2.y[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn white_noise_follows_enbw_law() {
        let fs: f64 = 10e3;
        let density = 1e-3;
        let mut g = Gaussian::new(9, NoiseStream::Auxiliary(3));
        let sigma = density * (fs / 2.0).sqrt();
        let samples: Vec<f64> = (0..(fs * 200.0) as usize).map(|_| sigma * g.sample()).collect();
        let s = Stream::new(fs, samples);
        for enbw in [10.4, 104.0, 625.0] {
            let c = LockinConfig { enbw, output_rate: enbw.min(200.0), ..LockinConfig::default() };
            let out = demodulate(&s, &c).unwrap();
            let xs = &out.x[out.settled(fs)];
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let rms = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
            let expected = density * (fs / (2.0 * c.window(fs) as f64)).sqrt();
            assert!((rms / expected - 1.0).abs() < 0.05, "enbw {enbw}: {rms} vs {expected}");
        }
    }

    #[test]
    fn ac_coupling_removes_dc_and_keeps_the_square_wave() {
        let fs = 100e3;
        let c = LockinConfig::default();
        let s = square_stream(0.3, fs, 5000, 0);
        let period = (fs / c.f_m) as usize;
        let out: Vec<f64> = ac_couple(s.samples.iter().map(|v| v + 7.5), period).collect();
        assert_eq!(out.len(), s.samples.len());
        for (got, want) in out.iter().zip(&s.samples) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert_eq!(ac_couple([1.0, 2.0].into_iter(), 4).collect::<Vec<_>>(), vec![-0.5, 0.5]);
    }

    #[test]
    fn ac_coupling_stops_dc_leaking_through_a_fractional_window() {
        // 500 Hz at 200 kHz: the 9615-sample window is 24.04 periods
        let fs = 200e3;
        let c = LockinConfig { f_m: 500.0, ..LockinConfig::default() };
        let n = 2_000_000;
        let period = (fs / c.f_m) as usize;
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        let mut raw = Demodulator::new(&c, fs).unwrap();
        let mut coupled = Demodulator::new(&c, fs).unwrap();
        for v in ac_couple(std::iter::repeat(1000.0).take(n), period) {
            coupled.push(v);
        }
        for _ in 0..n {
            raw.push(1000.0);
        }
        let (raw, coupled) = (raw.finish(), coupled.finish());
        let settled = raw.len() / 2;
        assert!(rms(&raw.x[settled..]) > 1.0);
        assert!(rms(&coupled.x[settled..]) < 1e-9);
    }

    #[test]
    fn block_average_matches_lockin_lineshape_convention() {
        let fs = 100e3;
        let c = LockinConfig::default();
        let s = square_stream(0.3, fs, 5000, 0);
        let (x, y) = block_average(s.samples.iter().copied(), &c, fs);
        assert!((x - 0.3).abs() < 1e-12);
        assert!(y.abs() < 1e-12);
    }
}

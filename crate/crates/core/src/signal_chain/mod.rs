//! Two-channel photodetection and digitization.
//!
//! Channel A carries the NV fluorescence, channel B a green reference taken
//! from the pump. Noise model, each term switchable:
//!
//! * laser RIN, white plus 1/f below `pink_knee`, multiplicative and common
//!   to both channels;
//! * shot noise per channel (Gaussian approximation, variance `q·I·fs`);
//! * white electronic noise per channel;
//! * the ADC quantizer.
//!
//! The single-pole detector response acts on the mean fluorescence voltage
//! and is what attenuates the FSK signal at high modulation frequencies.
//! Attributing the measured f_m dependence to this rolloff is a modelling
//! hypothesis, not an established property of the instrument.

mod series;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NvError, Result};
use crate::mw_control::{self, MwConfig};
use crate::nv_model::{transition_frequencies, MagneticField, SpinSystemParams, Spectrum};
use crate::rng::{Gaussian, NoiseStream};

pub use series::{read_nvts, write_csv, write_nvts, DualTimeSeries, NVTS_MAGIC, NVTS_VERSION};

/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Default cap on samples per channel for one run.
pub const DEFAULT_MAX_SAMPLES: usize = 100_000_000;

/// Lowest relaxation corner of the 1/f synthesizer, Hz.
const PINK_FLOOR_HZ: f64 = 0.01;
/// Corner spacing of the 1/f synthesizer (two processes per decade).
const PINK_RATIO: f64 = 3.162_277_660_168_379_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Photodiode responsivity, A/W.
    pub responsivity: f64,
    /// Transimpedance of the fluorescence channel, V/A.
    pub tia_gain_a: f64,
    /// Transimpedance of the green reference channel, V/A.
    pub tia_gain_b: f64,
    /// Off-resonant fluorescence power on detector A, W.
    pub fluor_power: f64,
    /// Green power on detector B, W.
    pub green_power: f64,
    /// Single-pole bandwidth of the fluorescence detector, Hz.
    pub detector_bandwidth: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            responsivity: 0.52,
            tia_gain_a: 200.0,
            tia_gain_b: 2200.0,
            // 1.0 V on channel A, 1.075 V on channel B
            fluor_power: 1.0 / (0.52 * 200.0),
            green_power: 1.075 / (0.52 * 2200.0),
            detector_bandwidth: 100e3,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("responsivity", self.responsivity),
            ("tia_gain_a", self.tia_gain_a),
            ("tia_gain_b", self.tia_gain_b),
            ("fluor_power", self.fluor_power),
            ("green_power", self.green_power),
            ("detector_bandwidth", self.detector_bandwidth),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(NvError::config(format!("detector.{name}"), "must be positive"));
            }
        }
        Ok(())
    }

    /// Off-resonant mean voltage of channel A.
    pub fn volts_a(&self) -> f64 {
        self.fluor_power * self.responsivity * self.tia_gain_a
    }

    /// Mean voltage of channel B.
    pub fn volts_b(&self) -> f64 {
        self.green_power * self.responsivity * self.tia_gain_b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub shot_enabled: bool,
    /// White electronic noise per channel, V/√Hz.
    pub electronic_density: f64,
    /// Corner where the 1/f RIN equals the white RIN, Hz. Zero disables 1/f.
    pub pink_knee: f64,
    /// White relative intensity noise, 1/√Hz.
    pub laser_rin_density: f64,
    /// Run seed. Scenario files set this from their top-level seed.
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            shot_enabled: true,
            electronic_density: 2.0e-7,
            pink_knee: 200.0,
            laser_rin_density: 6.0e-7,
            seed: 0,
        }
    }
}

impl NoiseParams {
    pub fn silent(seed: u64) -> Self {
        NoiseParams {
            shot_enabled: false,
            electronic_density: 0.0,
            pink_knee: 0.0,
            laser_rin_density: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("electronic_density", self.electronic_density),
            ("pink_knee", self.pink_knee),
            ("laser_rin_density", self.laser_rin_density),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(NvError::config(format!("noise.{name}"), "must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcParams {
    pub bits: u8,
    /// Input range is [0, full_scale] volts.
    pub full_scale: f64,
    pub sample_rate: f64,
}

impl Default for AdcParams {
    fn default() -> Self {
        AdcParams {
            bits: 14,
            full_scale: 2.0,
            sample_rate: 1e6,
        }
    }
}

impl AdcParams {
    pub fn validate(&self) -> Result<()> {
        // Codes are stored and serialized as u16.
        if !(2..=16).contains(&self.bits) {
            return Err(NvError::config("adc.bits", "must lie in [2, 16]"));
        }
        if !(self.full_scale.is_finite() && self.full_scale > 0.0) {
            return Err(NvError::config("adc.full_scale", "must be positive"));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(NvError::config("adc.sample_rate", "must be positive"));
        }
        Ok(())
    }

    pub fn max_code(&self) -> u16 {
        ((1u32 << self.bits) - 1) as u16
    }

    /// Quantization step `full_scale / 2^bits`.
    pub fn lsb(&self) -> f64 {
        self.full_scale / f64::from(1u32 << self.bits)
    }

    /// Code of a single voltage and whether it was clamped.
    #[inline]
    pub fn code(&self, volts: f64) -> (u16, bool) {
        let raw = (volts / self.lsb()).floor();
        let max = f64::from(self.max_code());
        if raw < 0.0 {
            (0, true)
        } else if raw > max {
            (self.max_code(), true)
        } else {
            (raw as u16, false)
        }
    }

    /// Reconstruction level `(c + 1/2)·q`.
    #[inline]
    pub fn volts(&self, code: u16) -> f64 {
        (f64::from(code) + 0.5) * self.lsb()
    }
}

/// Uniform quantizer; returns the codes and the number of clamped samples.
///
/// Codes are `floor(v/q)` so that the `(c + 1/2)·q` reconstruction has a
/// zero-mean error in `[-q/2, q/2)`.
pub fn quantize(adc: &AdcParams, volts: &[f64]) -> Result<(Vec<u16>, u64)> {
    adc.validate()?;
    if volts.iter().any(|v| !v.is_finite()) {
        return Err(NvError::invalid("quantizer input contains non-finite samples"));
    }
    let mut clamped = 0u64;
    let codes = volts
        .iter()
        .map(|&v| {
            let (c, hit) = adc.code(v);
            clamped += u64::from(hit);
            c
        })
        .collect();
    Ok((codes, clamped))
}

/// Relative RMS fluctuation `sqrt(2·B/R)` of a Poisson photon stream of rate
/// `R` observed in bandwidth `B`.
pub fn shot_noise_sigma(photon_rate: f64, bandwidth: f64) -> Result<f64> {
    if !(photon_rate.is_finite() && photon_rate > 0.0) {
        return Err(NvError::invalid("photon rate must be positive"));
    }
    if !(bandwidth.is_finite() && bandwidth >= 0.0) {
        return Err(NvError::invalid("bandwidth must be non-negative"));
    }
    Ok((2.0 * bandwidth / photon_rate).sqrt())
}

/// 1/f noise as a sum of first-order relaxation processes with corners
/// spaced `PINK_RATIO` apart from `knee` down to `PINK_FLOOR_HZ`.
///
/// A process with corner f_j driven so its low-frequency density is K/f_j
/// sums to `K·π/(2·ln r)/f`; K is chosen so the total is `rin²·knee/f`.
struct PinkSynth {
    poles: Vec<Pole>,
}

struct Pole {
    decay: f64,
    drive: f64,
    state: f64,
    gauss: Gaussian,
}

impl PinkSynth {
    fn new(rin: f64, knee: f64, sample_rate: f64, seed: u64) -> Option<Self> {
        if rin <= 0.0 || knee <= 0.0 {
            return None;
        }
        let k = 2.0 * PINK_RATIO.ln() * rin * rin * knee / std::f64::consts::PI;
        let mut poles = Vec::new();
        let mut corner = knee;
        let mut j = 0u32;
        while corner >= PINK_FLOOR_HZ {
            let decay = (-2.0 * std::f64::consts::PI * corner / sample_rate).exp();
            // white drive with one-sided density K/f_j
            let drive_sigma = (k / corner).sqrt() * (sample_rate / 2.0).sqrt();
            let mut gauss = Gaussian::new(seed, NoiseStream::RinPink(j));
            // start in the stationary distribution
            let stationary = drive_sigma * ((1.0 - decay) / (1.0 + decay)).sqrt();
            let state = stationary * gauss.sample();
            poles.push(Pole {
                decay,
                drive: (1.0 - decay) * drive_sigma,
                state,
                gauss,
            });
            corner /= PINK_RATIO;
            j += 1;
        }
        Some(PinkSynth { poles })
    }

    #[inline]
    fn next(&mut self) -> f64 {
        let mut total = 0.0;
        for p in &mut self.poles {
            p.state = p.decay * p.state + p.drive * p.gauss.sample();
            total += p.state;
        }
        total
    }
}

/// Full configuration of one simulated acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalChain {
    pub spin: SpinSystemParams,
    pub field: MagneticField,
    pub mw: MwConfig,
    pub detector: DetectorParams,
    pub noise: NoiseParams,
    pub adc: AdcParams,
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
}

fn default_max_samples() -> usize {
    DEFAULT_MAX_SAMPLES
}

impl SignalChain {
    pub fn validate(&self) -> Result<()> {
        self.spin.validate()?;
        self.field.validate()?;
        self.mw.validate()?;
        self.detector.validate()?;
        self.noise.validate()?;
        self.adc.validate()?;
        if self.adc.sample_rate <= 20.0 * self.mw.f_m {
            return Err(NvError::config(
                "adc.sample_rate",
                format!("must exceed 20·f_m = {}", 20.0 * self.mw.f_m),
            ));
        }
        Ok(())
    }

    /// Short hex identifier of the configuration and duration.
    pub fn digest(&self, duration: f64) -> String {
        let text = serde_json::to_string(&(self, duration)).unwrap_or_default();
        let hash = Sha256::digest(text.as_bytes());
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn simulate(&self, duration: f64) -> Result<DualTimeSeries> {
        self.validate()?;
        let fs = self.adc.sample_rate;
        let f_m = self.mw.f_m;
        if !(duration.is_finite() && duration >= 10.0 / f_m) {
            return Err(NvError::invalid(format!(
                "duration {duration} s is shorter than 10 modulation periods"
            )));
        }
        let n = (duration * fs).round() as usize;
        if n > self.max_samples {
            return Err(NvError::invalid(format!(
                "{n} samples per channel exceeds the cap of {}",
                self.max_samples
            )));
        }

        let lines = transition_frequencies(&self.spin, &self.field)?;
        let spectrum = Spectrum::new(
            &self.spin,
            &lines,
            &mw_control::comb_offsets(&self.mw),
            self.mw.power,
        );
        let (f_high, f_low) = self.mw.fsk_levels();
        let va = self.detector.volts_a();
        let vb = self.detector.volts_b();
        let level_high = va * spectrum.value(f_high);
        let level_low = va * spectrum.value(f_low);

        let seed = self.noise.seed;
        let half_band = (fs / 2.0).sqrt();
        let rin_sigma = self.noise.laser_rin_density * half_band;
        let elec_sigma = self.noise.electronic_density * half_band;
        let shot_scale_a = (ELEMENTARY_CHARGE * self.detector.tia_gain_a * fs).sqrt();
        let shot_sigma_b = (ELEMENTARY_CHARGE * self.detector.tia_gain_b * fs * vb).sqrt();

        let mut rin_white = (rin_sigma > 0.0).then(|| Gaussian::new(seed, NoiseStream::RinWhite));
        let mut pink = PinkSynth::new(self.noise.laser_rin_density, self.noise.pink_knee, fs, seed);
        let (mut shot_a, mut shot_b) = if self.noise.shot_enabled {
            (
                Some(Gaussian::new(seed, NoiseStream::ShotA)),
                Some(Gaussian::new(seed, NoiseStream::ShotB)),
            )
        } else {
            (None, None)
        };
        let (mut elec_a, mut elec_b) = if elec_sigma > 0.0 {
            (
                Some(Gaussian::new(seed, NoiseStream::ElectronicA)),
                Some(Gaussian::new(seed, NoiseStream::ElectronicB)),
            )
        } else {
            (None, None)
        };

        let alpha = 1.0 - (-2.0 * std::f64::consts::PI * self.detector.detector_bandwidth / fs).exp();
        let mut detector_state = level_high;

        let mut codes_a = Vec::with_capacity(n);
        let mut codes_b = Vec::with_capacity(n);
        let (mut clamped_a, mut clamped_b) = (0u64, 0u64);

        for i in 0..n {
            let target = if mw_control::square_high(i as f64 * f_m / fs) {
                level_high
            } else {
                level_low
            };
            detector_state += alpha * (target - detector_state);

            let mut rin = 0.0;
            if let Some(g) = rin_white.as_mut() {
                rin += rin_sigma * g.sample();
            }
            if let Some(p) = pink.as_mut() {
                rin += p.next();
            }

            let mut a = detector_state * (1.0 + rin);
            let mut b = vb * (1.0 + rin);
            if let (Some(ga), Some(gb)) = (shot_a.as_mut(), shot_b.as_mut()) {
                a += shot_scale_a * detector_state.max(0.0).sqrt() * ga.sample();
                b += shot_sigma_b * gb.sample();
            }
            if let (Some(ea), Some(eb)) = (elec_a.as_mut(), elec_b.as_mut()) {
                a += elec_sigma * ea.sample();
                b += elec_sigma * eb.sample();
            }

            let (ca, hit_a) = self.adc.code(a);
            let (cb, hit_b) = self.adc.code(b);
            clamped_a += u64::from(hit_a);
            clamped_b += u64::from(hit_b);
            codes_a.push(ca);
            codes_b.push(cb);
        }

        Ok(DualTimeSeries {
            sample_rate: fs,
            bits: self.adc.bits,
            full_scale: self.adc.full_scale,
            t0: 0.0,
            seed_used: seed,
            config_digest: self.digest(duration),
            clamped_a,
            clamped_b,
            codes_a,
            codes_b,
        })
    }
}

/// Free-function form of [`SignalChain::simulate`] with the default sample cap.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    spin: &SpinSystemParams,
    field: &MagneticField,
    mw: &MwConfig,
    detector: &DetectorParams,
    noise: &NoiseParams,
    adc: &AdcParams,
    duration: f64,
) -> Result<DualTimeSeries> {
    SignalChain {
        spin: *spin,
        field: *field,
        mw: *mw,
        detector: *detector,
        noise: *noise,
        adc: *adc,
        max_samples: DEFAULT_MAX_SAMPLES,
    }
    .simulate(duration)
}

//! Scaled-integer emulation of the lock-in.
//!
//! Stages, each with an explicit word width:
//!
//! 1. input: `x = R(v / lsb)`, signed `input_bits`, `lsb = input_range / 2^(input_bits-1)`;
//! 2. mixer: `±x`, exact;
//! 3. accumulator: running sum of the last `W` mixer words, `accumulator_bits`;
//! 4. multiplier: sum times a normalized `coefficient_bits` mantissa of `1/W`;
//! 5. output: product shifted back, keeping `coefficient_bits` fractional bits.
//!
//! `R` is the configured rounding. Any word exceeding its stage width is an
//! [`NvError::Overflow`] naming the stage; nothing wraps.

use serde::{Deserialize, Serialize};

use super::{output_sample_index, demodulate, LockinConfig, LockinOutput, Path, Reference, Stream};
use crate::error::{NvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// Floor (two's-complement truncation).
    Truncate,
    RoundHalfEven,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointSpec {
    pub input_bits: u32,
    pub accumulator_bits: u32,
    pub coefficient_bits: u32,
    pub rounding: Rounding,
    /// Input words span `[-input_range, input_range)` volts.
    pub input_range: f64,
}

impl Default for FixedPointSpec {
    fn default() -> Self {
        FixedPointSpec {
            input_bits: 14,
            accumulator_bits: 40,
            coefficient_bits: 16,
            rounding: Rounding::RoundHalfEven,
            input_range: 2048.0,
        }
    }
}

impl FixedPointSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=32).contains(&self.input_bits) {
            return Err(NvError::config("fixed_point.input_bits", "must lie in [2, 32]"));
        }
        if !(8..=32).contains(&self.coefficient_bits) {
            return Err(NvError::config("fixed_point.coefficient_bits", "must lie in [8, 32]"));
        }
        if !(self.input_bits..=96).contains(&self.accumulator_bits) {
            return Err(NvError::config(
                "fixed_point.accumulator_bits",
                "must lie in [input_bits, 96]",
            ));
        }
        if !(self.input_range.is_finite() && self.input_range > 0.0) {
            return Err(NvError::config("fixed_point.input_range", "must be positive"));
        }
        Ok(())
    }

    /// Weight of one input LSB, volts.
    pub fn lsb(&self) -> f64 {
        self.input_range / 2f64.powi(self.input_bits as i32 - 1)
    }

    /// Accumulator width that can never overflow for a window of `window`.
    pub fn required_accumulator_bits(&self, window: usize) -> u32 {
        self.input_bits + (window as f64).log2().ceil() as u32
    }

    /// Predicted RMS of the input-quantization error after a `window`-sample
    /// moving average: `(lsb/√12)/√W`. Exact only for round-half-even.
    pub fn quantization_floor(&self, window: usize) -> f64 {
        self.lsb() / 12f64.sqrt() / (window as f64).sqrt()
    }
}

/// Float-versus-fixed comparison on the same input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub max_deviation: f64,
    pub rms_deviation: f64,
    /// `rms_deviation / √ENBW`, V/√Hz.
    pub noise_density: f64,
    /// Deviation expressed in input LSBs.
    pub rms_deviation_lsb: f64,
}

#[inline]
fn round_to_int(v: f64, mode: Rounding) -> f64 {
    match mode {
        Rounding::Truncate => v.floor(),
        Rounding::RoundHalfEven => v.round_ties_even(),
    }
}

/// `value / 2^shift` rounded per `mode`.
#[inline]
fn shift_round(value: i128, shift: u32, mode: Rounding) -> i128 {
    if shift == 0 {
        return value;
    }
    let floor = value >> shift;
    match mode {
        Rounding::Truncate => floor,
        Rounding::RoundHalfEven => {
            let rem = value - (floor << shift);
            let half = 1i128 << (shift - 1);
            if rem > half || (rem == half && floor & 1 == 1) {
                floor + 1
            } else {
                floor
            }
        }
    }
}

#[inline]
fn fits(value: i128, bits: u32) -> bool {
    let limit = 1i128 << (bits - 1);
    value >= -limit && value < limit
}

/// Normalized reciprocal: `mant / 2^exp ≈ 1/count` with `mant` in
/// `[2^(cb-1), 2^cb]`.
fn reciprocal(count: usize, coefficient_bits: u32, mode: Rounding) -> (i128, u32) {
    let mut exp = coefficient_bits - 1 + (usize::BITS - 1 - count.leading_zeros());
    let mut mant = round_to_int(2f64.powi(exp as i32) / count as f64, mode) as i128;
    if mant < 1i128 << (coefficient_bits - 1) {
        exp += 1;
        mant = round_to_int(2f64.powi(exp as i32) / count as f64, mode) as i128;
    }
    (mant, exp)
}

struct FixedChannel {
    ring: Vec<i128>,
    sum: i128,
}

impl FixedChannel {
    fn push(&mut self, pos: usize, word: i128, acc_bits: u32) -> Result<()> {
        self.sum += word - self.ring[pos];
        self.ring[pos] = word;
        if !fits(self.sum, acc_bits) {
            return Err(NvError::Overflow {
                stage: "accumulator",
                bits: acc_bits,
            });
        }
        Ok(())
    }
}

fn run_fixed(stream: &Stream, cfg: &LockinConfig, fx: &FixedPointSpec) -> Result<LockinOutput> {
    let fs = stream.sample_rate;
    let window = cfg.window(fs);
    let lsb = fx.lsb();
    let out_scale = lsb / 2f64.powi(fx.coefficient_bits as i32);
    let mut channels = [
        FixedChannel { ring: vec![0; window], sum: 0 },
        FixedChannel { ring: vec![0; window], sum: 0 },
    ];
    let full = reciprocal(window, fx.coefficient_bits, fx.rounding);
    let product_bits = fx.accumulator_bits + fx.coefficient_bits;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut next_emit = output_sample_index(0, fs, cfg.output_rate);
    let mut pos = 0usize;

    for (n, &v) in stream.samples.iter().enumerate() {
        let word = round_to_int(v / lsb, fx.rounding);
        if !word.is_finite() || !fits(word as i128, fx.input_bits) {
            return Err(NvError::Overflow {
                stage: "input",
                bits: fx.input_bits,
            });
        }
        let word = word as i128;
        let (rx, ry) = cfg.references(n as u64, fs);
        channels[0].push(pos, if rx > 0.0 { word } else { -word }, fx.accumulator_bits)?;
        channels[1].push(pos, if ry > 0.0 { word } else { -word }, fx.accumulator_bits)?;
        pos = (pos + 1) % window;

        if n as u64 == next_emit {
            let count = (n + 1).min(window);
            let (mant, exp) = if count == window {
                full
            } else {
                reciprocal(count, fx.coefficient_bits, fx.rounding)
            };
            let shift = exp - fx.coefficient_bits;
            for (ch, out) in channels.iter().zip([&mut x, &mut y]) {
                let product = ch.sum * mant;
                if !fits(product, product_bits) {
                    return Err(NvError::Overflow {
                        stage: "multiplier",
                        bits: product_bits,
                    });
                }
                out.push(shift_round(product, shift, fx.rounding) as f64 * out_scale);
            }
            next_emit = output_sample_index(x.len(), fs, cfg.output_rate);
        }
    }
    Ok(LockinOutput {
        rate: cfg.output_rate,
        x,
        y,
        enbw: cfg.enbw,
        window,
        path: Path::Fixed,
    })
}

/// Fixed-point lock-in plus its deviation from the float path on the same
/// input.
pub fn demodulate_fixed(
    stream: &Stream,
    cfg: &LockinConfig,
    fx: &FixedPointSpec,
) -> Result<(LockinOutput, FixedPointReport)> {
    fx.validate()?;
    if cfg.reference != Reference::Square {
        return Err(NvError::invalid("the fixed-point path supports the square reference only"));
    }
    let float = demodulate(stream, cfg)?;
    let fixed = run_fixed(stream, cfg, fx)?;

    let deviations: Vec<f64> = float
        .x
        .iter()
        .zip(&fixed.x)
        .chain(float.y.iter().zip(&fixed.y))
        .map(|(a, b)| b - a)
        .collect();
    let max_deviation = deviations.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let rms_deviation = if deviations.is_empty() {
        0.0
    } else {
        (deviations.iter().map(|d| d * d).sum::<f64>() / deviations.len() as f64).sqrt()
    };
    let report = FixedPointReport {
        max_deviation,
        rms_deviation,
        noise_density: rms_deviation / cfg.enbw.sqrt(),
        rms_deviation_lsb: rms_deviation / fx.lsb(),
    };
    Ok((fixed, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Gaussian, NoiseStream};

    fn test_stream(fs: f64, seconds: f64, amplitude: f64) -> Stream {
        let mut g = Gaussian::new(17, NoiseStream::Auxiliary(7));
        let samples = (0..(fs * seconds) as usize)
            .map(|n| {
                let t = n as f64 / fs;
                amplitude * (2.0 * std::f64::consts::PI * 1234.567 * t).sin() + 0.01 * amplitude * g.sample()
            })
            .collect();
        Stream::new(fs, samples)
    }

    fn cfg() -> LockinConfig {
        LockinConfig {
            enbw: 625.0,
            output_rate: 1250.0,
            ..LockinConfig::default()
        }
    }

    #[test]
    fn shift_rounding() {
        assert_eq!(shift_round(5, 1, Rounding::RoundHalfEven), 2);
        assert_eq!(shift_round(7, 1, Rounding::RoundHalfEven), 4);
        assert_eq!(shift_round(-5, 1, Rounding::RoundHalfEven), -2);
        assert_eq!(shift_round(-5, 1, Rounding::Truncate), -3);
        assert_eq!(shift_round(6, 2, Rounding::RoundHalfEven), 2);
        assert_eq!(shift_round(10, 2, Rounding::RoundHalfEven), 2);
    }

    #[test]
    fn reciprocal_is_normalized() {
        for count in [4usize, 5, 7, 80, 1000, 48_077, 384_615] {
            let (mant, exp) = reciprocal(count, 16, Rounding::RoundHalfEven);
            assert!((1 << 15..=1 << 16).contains(&mant), "{count}: {mant}");
            let approx = mant as f64 / 2f64.powi(exp as i32);
            assert!((approx * count as f64 - 1.0).abs() < 2f64.powi(-15));
        }
    }

    #[test]
    fn ample_accumulator_tracks_float_path() {
        let fs = 100e3;
        let fx = FixedPointSpec {
            accumulator_bits: 48,
            input_range: 1.0,
            ..FixedPointSpec::default()
        };
        let s = test_stream(fs, 2.0, 0.9);
        let (out, report) = demodulate_fixed(&s, &cfg(), &fx).unwrap();
        assert_eq!(out.path, Path::Fixed);
        assert_eq!(out.len(), 2500);
        assert!(report.rms_deviation_lsb <= 2.0, "{report:?}");
    }

    #[test]
    fn truncation_never_beats_round_half_even() {
        let fs = 100e3;
        let s = test_stream(fs, 2.0, 0.9);
        let rhe = FixedPointSpec { input_range: 1.0, ..FixedPointSpec::default() };
        let trunc = FixedPointSpec { rounding: Rounding::Truncate, ..rhe };
        let (_, r_rhe) = demodulate_fixed(&s, &cfg(), &rhe).unwrap();
        let (_, r_trunc) = demodulate_fixed(&s, &cfg(), &trunc).unwrap();
        assert!(r_trunc.rms_deviation >= r_rhe.rms_deviation, "{r_trunc:?} vs {r_rhe:?}");
    }

    #[test]
    fn overflow_names_the_stage() {
        let fs = 100e3;
        let s = test_stream(fs, 0.2, 0.9);
        let tight = FixedPointSpec {
            accumulator_bits: 16,
            input_range: 1.0,
            ..FixedPointSpec::default()
        };
        assert!(tight.accumulator_bits < tight.required_accumulator_bits(cfg().window(fs)));
        let err = demodulate_fixed(&s, &cfg(), &tight).unwrap_err();
        assert!(matches!(err, NvError::Overflow { stage: "accumulator", .. }), "{err}");

        let small_range = FixedPointSpec { input_range: 0.5, ..FixedPointSpec::default() };
        let err = demodulate_fixed(&s, &cfg(), &small_range).unwrap_err();
        assert!(matches!(err, NvError::Overflow { stage: "input", .. }));
    }

    #[test]
    fn precision_growth_converges_to_float() {
        let fs = 100e3;
        let s = test_stream(fs, 1.0, 0.9);
        let mut last = f64::INFINITY;
        for bits in [10u32, 14, 18, 22] {
            let fx = FixedPointSpec {
                input_bits: bits,
                accumulator_bits: bits + 20,
                coefficient_bits: 24,
                input_range: 1.0,
                ..FixedPointSpec::default()
            };
            let (_, r) = demodulate_fixed(&s, &cfg(), &fx).unwrap();
            assert!(r.rms_deviation < last / 4.0, "{bits}: {r:?}");
            last = r.rms_deviation;
        }
    }
}

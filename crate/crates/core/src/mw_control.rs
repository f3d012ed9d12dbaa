//! Microwave control plan: square-wave FSK, the hs-on probe comb and sweeps.
//!
//! The FSK depth is peak-to-peak: the two levels are `center ± depth/2`.
//! The square wave has 50 % duty and starts on the high level at t = 0.

use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};

/// Synthesizer output range, Hz.
pub const MW_RANGE: (f64, f64) = (2.5e9, 3.0e9);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MwConfig {
    /// Carrier frequency, Hz.
    pub center: f64,
    /// FSK modulation frequency, Hz.
    pub f_m: f64,
    /// Peak-to-peak FSK deviation, Hz. Zero means an unmodulated CW drive.
    pub depth: f64,
    /// Drive power per tone, dBm.
    pub power: f64,
    /// Enables the three-tone hyperfine comb.
    pub hs_on: bool,
    /// Comb spacing, Hz.
    pub sideband_spacing: f64,
}

impl Default for MwConfig {
    fn default() -> Self {
        MwConfig {
            center: 2.87e9,
            f_m: 1e3,
            depth: 400e3,
            power: 10.0,
            hs_on: false,
            sideband_spacing: 2.158e6,
        }
    }
}

impl MwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_m.is_finite() && self.f_m > 0.0) {
            return Err(NvError::config("mw.f_m", "must be positive"));
        }
        if !(self.depth.is_finite() && self.depth >= 0.0) {
            return Err(NvError::config("mw.depth", "must be non-negative"));
        }
        if !(MW_RANGE.0..=MW_RANGE.1).contains(&self.center) {
            return Err(NvError::config("mw.center", "must lie in the 2.5-3.0 GHz output range"));
        }
        if !self.power.is_finite() {
            return Err(NvError::config("mw.power", "must be finite"));
        }
        if !(self.sideband_spacing.is_finite() && self.sideband_spacing >= 0.0) {
            return Err(NvError::config("mw.sideband_spacing", "must be non-negative"));
        }
        Ok(())
    }

    /// Same drive with the FSK switched off (both levels at the carrier).
    pub fn cw(&self) -> MwConfig {
        MwConfig { depth: 0.0, ..*self }
    }

    pub fn with_center(&self, center: f64) -> MwConfig {
        MwConfig { center, ..*self }
    }

    /// The two FSK levels, (high, low).
    pub fn fsk_levels(&self) -> (f64, f64) {
        (self.center + 0.5 * self.depth, self.center - 0.5 * self.depth)
    }
}

/// True while the square wave is on its high level. `cycles` is elapsed
/// time in modulation periods.
#[inline]
pub fn square_high(cycles: f64) -> bool {
    cycles.rem_euclid(1.0) < 0.5
}

/// ±1 square wave at sample `n` for a reference at `f_m` sampled at
/// `sample_rate`. `n·f_m / sample_rate` is exact for integer rates, so the
/// phase lands exactly on half-period boundaries.
#[inline]
pub fn square_at_sample(n: i64, f_m: f64, sample_rate: f64) -> f64 {
    if square_high(n as f64 * f_m / sample_rate) {
        1.0
    } else {
        -1.0
    }
}

pub fn fsk_instantaneous_frequency(c: &MwConfig, t: f64) -> f64 {
    let (high, low) = c.fsk_levels();
    if square_high(t * c.f_m) {
        high
    } else {
        low
    }
}

/// Drive tones as (frequency, relative amplitude).
pub fn probe_comb(c: &MwConfig) -> Vec<(f64, f64)> {
    if c.hs_on {
        vec![
            (c.center - c.sideband_spacing, 1.0),
            (c.center, 1.0),
            (c.center + c.sideband_spacing, 1.0),
        ]
    } else {
        vec![(c.center, 1.0)]
    }
}

/// Comb tone offsets relative to the carrier.
pub fn comb_offsets(c: &MwConfig) -> Vec<f64> {
    probe_comb(c).into_iter().map(|(f, _)| f - c.center).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    /// Dwell per point, seconds.
    pub dwell: f64,
    pub freqs: Vec<f64>,
}

impl SweepPlan {
    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.points - 1) as f64
    }

    /// Dwell expressed in modulation periods.
    pub fn dwell_periods(&self, f_m: f64) -> f64 {
        self.dwell * f_m
    }
}

/// Uniform grid from `start` to `stop` inclusive.
pub fn make_sweep(start: f64, stop: f64, points: usize, dwell: f64) -> Result<SweepPlan> {
    if !(start.is_finite() && stop.is_finite()) || stop <= start {
        return Err(NvError::invalid(format!("sweep range [{start}, {stop}] is empty or inverted")));
    }
    if points < 2 {
        return Err(NvError::invalid(format!("sweep needs at least 2 points, got {points}")));
    }
    if !(dwell.is_finite() && dwell > 0.0) {
        return Err(NvError::invalid("sweep dwell must be positive"));
    }
    let last = points - 1;
    let span = stop - start;
    let freqs = (0..points)
        .map(|i| if i == last { stop } else { start + span * i as f64 / last as f64 })
        .collect();
    Ok(SweepPlan {
        start,
        stop,
        points,
        dwell,
        freqs,
    })
}

//! Scenario files: one JSON document describing a complete simulated
//! experiment. Every section is optional and falls back to the default
//! operating point; the run seed is mandatory, either in the file or
//! supplied by the caller.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::analysis::{NoiseEstimator, SensitivityMode, DEFAULT_RESIDUAL_THRESHOLD};
use crate::error::{NvError, Result};
use crate::lockin::{FixedPointSpec, LockinConfig, Path, Reference};
use crate::mw_control::{MwConfig, MW_RANGE};
use crate::nv_model::{working_line, MagneticField, SpinSystemParams};
use crate::signal_chain::{AdcParams, DetectorParams, NoiseParams, SignalChain, DEFAULT_MAX_SAMPLES};

/// Noise sources; the seed lives at the top level of the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub shot_enabled: bool,
    pub electronic_density: f64,
    pub pink_knee: f64,
    pub laser_rin_density: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let d = NoiseParams::default();
        NoiseSection {
            shot_enabled: d.shot_enabled,
            electronic_density: d.electronic_density,
            pink_knee: d.pink_knee,
            laser_rin_density: d.laser_rin_density,
        }
    }
}

impl NoiseSection {
    pub fn with_seed(&self, seed: u64) -> NoiseParams {
        NoiseParams {
            shot_enabled: self.shot_enabled,
            electronic_density: self.electronic_density,
            pink_knee: self.pink_knee,
            laser_rin_density: self.laser_rin_density,
            seed,
        }
    }

    pub fn silent() -> Self {
        NoiseSection {
            shot_enabled: false,
            electronic_density: 0.0,
            pink_knee: 0.0,
            laser_rin_density: 0.0,
        }
    }
}

/// Lock-in settings; the reference frequency follows `mw.f_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LockinSection {
    pub enbw: f64,
    pub output_rate: f64,
    pub phase_offset: i64,
    pub reference: Reference,
    pub path: Path,
}

impl Default for LockinSection {
    fn default() -> Self {
        let d = LockinConfig::default();
        LockinSection {
            enbw: d.enbw,
            output_rate: d.output_rate,
            phase_offset: d.phase_offset,
            reference: d.reference,
            path: Path::Float,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceSection {
    pub k1: f64,
    /// Pinned reference gain; tuned from the record when absent.
    pub k2: Option<f64>,
}

impl Default for BalanceSection {
    fn default() -> Self {
        BalanceSection { k1: 1000.0, k2: None }
    }
}

/// Frequency sweep for `sweep-odmr`. Without explicit bounds the sweep is
/// centred on the working line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub start: Option<f64>,
    pub stop: Option<f64>,
    /// Half span used when the bounds are omitted, Hz.
    pub half_span: f64,
    pub points: usize,
    /// Seconds per point; must hold a whole number of FSK periods.
    pub dwell: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            start: None,
            stop: None,
            half_span: 6e6,
            points: 241,
            dwell: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySection {
    /// Off-resonant probe frequency for the noise record, Hz.
    pub probe_frequency: f64,
    pub estimator: NoiseEstimator,
    /// Points in the lock-in sweep used to measure the slope.
    pub slope_points: usize,
    /// Seconds per slope point.
    pub slope_dwell: f64,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        SensitivitySection {
            probe_frequency: 2.54e9,
            estimator: NoiseEstimator::StdDev,
            slope_points: 13,
            slope_dwell: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanAxis {
    FM,
    Power,
    Depth,
    Enbw,
}

impl ScanAxis {
    pub fn label(self) -> &'static str {
        match self {
            ScanAxis::FM => "f_m",
            ScanAxis::Power => "power",
            ScanAxis::Depth => "depth",
            ScanAxis::Enbw => "enbw",
        }
    }
}

impl std::str::FromStr for ScanAxis {
    type Err = NvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f_m" | "fm" => Ok(ScanAxis::FM),
            "power" => Ok(ScanAxis::Power),
            "depth" => Ok(ScanAxis::Depth),
            "enbw" => Ok(ScanAxis::Enbw),
            other => Err(NvError::config("scan.axis", format!("unknown axis `{other}`"))),
        }
    }
}

/// How each scan point is evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanPath {
    /// Full chain simulation and lock-in per point.
    #[default]
    Simulated,
    /// Noise-free lineshape slope with the white-noise budget.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub axis: ScanAxis,
    pub grid: Vec<f64>,
    pub mode: SensitivityMode,
    pub path: ScanPath,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            axis: ScanAxis::Enbw,
            grid: vec![1.3, 10.4, 104.0, 625.0],
            mode: SensitivityMode::Balanced,
            path: ScanPath::Simulated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSection {
    /// Seconds per sweep point.
    pub dwell: f64,
    /// Sweep step as a fraction of the power-broadened HWHM.
    pub step_fraction: f64,
    /// Extra sweep range beyond the outermost predicted line, in HWHM.
    pub margin: f64,
    /// Residual above which the result is flagged, Hz.
    pub threshold: f64,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        ReconstructSection {
            dwell: 0.01,
            step_fraction: 0.25,
            margin: 8.0,
            threshold: DEFAULT_RESIDUAL_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: Option<u64>,
    /// Length of the sensitivity record, seconds.
    pub duration: f64,
    pub output_dir: Option<String>,
    pub max_samples: usize,
    pub spin: SpinSystemParams,
    pub field: MagneticField,
    pub mw: MwConfig,
    pub detector: DetectorParams,
    pub noise: NoiseSection,
    pub adc: AdcParams,
    pub lockin: LockinSection,
    pub balance: BalanceSection,
    pub fixed_point: FixedPointSpec,
    pub sweep: SweepSection,
    pub sensitivity: SensitivitySection,
    pub scan: ScanSection,
    pub reconstruct: ReconstructSection,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: None,
            duration: 60.0,
            output_dir: None,
            max_samples: DEFAULT_MAX_SAMPLES,
            spin: SpinSystemParams::default(),
            field: MagneticField {
                b_xyz: [0.3e-3, 0.5e-3, 1.2e-3],
            },
            mw: MwConfig::default(),
            detector: DetectorParams::default(),
            noise: NoiseSection::default(),
            adc: AdcParams::default(),
            lockin: LockinSection::default(),
            balance: BalanceSection::default(),
            fixed_point: FixedPointSpec::default(),
            sweep: SweepSection::default(),
            sensitivity: SensitivitySection::default(),
            scan: ScanSection::default(),
            reconstruct: ReconstructSection::default(),
        }
    }
}

fn check(ok: bool, path: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(NvError::config(path, msg))
    }
}

impl Scenario {
    /// Parses a JSON document; errors name the offending path.
    pub fn from_json(text: &str) -> Result<Scenario> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            NvError::config(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &FsPath) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NvError::config("<file>", format!("{}: {e}", path.display())))?;
        Scenario::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// The run seed, or a config error when none was given.
    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| NvError::config("seed", "a seed is required (set `seed` or pass --seed)"))
    }

    pub fn lockin_config(&self) -> LockinConfig {
        LockinConfig {
            f_m: self.mw.f_m,
            phase_offset: self.lockin.phase_offset,
            enbw: self.lockin.enbw,
            output_rate: self.lockin.output_rate,
            reference: self.lockin.reference,
        }
    }

    /// Signal chain for one run with the given noise seed.
    pub fn chain(&self, seed: u64) -> SignalChain {
        SignalChain {
            spin: self.spin,
            field: self.field,
            mw: self.mw,
            detector: self.detector,
            noise: self.noise.with_seed(seed),
            adc: self.adc,
            max_samples: self.max_samples,
        }
    }

    /// Checks every section and the cross-section constraints.
    pub fn validate(&self) -> Result<()> {
        self.validate_core()?;
        self.validate_sweep()?;
        self.validate_sensitivity()?;
        self.validate_scan()?;
        self.validate_reconstruct()
    }

    /// Sections shared by every command.
    pub fn validate_core(&self) -> Result<()> {
        self.seed()?;
        self.chain(0).validate()?;
        self.lockin_config().validate(self.adc.sample_rate)?;
        self.fixed_point.validate()?;
        working_line(&self.spin, &self.field)?;
        check(self.balance.k1.is_finite() && self.balance.k1 > 0.0, "balance.k1", "must be positive")?;
        if let Some(k2) = self.balance.k2 {
            check(k2.is_finite() && k2 >= 0.0, "balance.k2", "must be non-negative")?;
        }
        check(self.mw.depth > 0.0, "mw.depth", "lock-in runs need a positive FSK depth")
    }

    pub fn validate_sweep(&self) -> Result<()> {
        let s = &self.sweep;
        check(s.points >= 2, "sweep.points", "need at least two points")?;
        check(s.half_span.is_finite() && s.half_span > 0.0, "sweep.half_span", "must be positive")?;
        for (name, v) in [("sweep.start", s.start), ("sweep.stop", s.stop)] {
            if let Some(f) = v {
                check((MW_RANGE.0..=MW_RANGE.1).contains(&f), name, "must lie in the 2.5-3.0 GHz range")?;
            }
        }
        check(
            whole_periods(s.dwell, self.mw.f_m) && s.dwell * self.mw.f_m >= 10.0 - 1e-9,
            "sweep.dwell",
            "must be a whole number of FSK periods, at least 10",
        )
    }

    pub fn validate_sensitivity(&self) -> Result<()> {
        let sens = &self.sensitivity;
        check(
            (MW_RANGE.0..=MW_RANGE.1).contains(&sens.probe_frequency),
            "sensitivity.probe_frequency",
            "must lie in the 2.5-3.0 GHz range",
        )?;
        check(sens.slope_points >= 3, "sensitivity.slope_points", "need at least three points")?;
        check(
            sens.slope_dwell.is_finite() && sens.slope_dwell * self.mw.f_m >= 10.0,
            "sensitivity.slope_dwell",
            "must hold at least 10 FSK periods",
        )?;
        check(self.duration.is_finite() && self.duration > 0.0, "duration", "must be positive")?;
        let needed = 30.0 / self.lockin.enbw;
        check(
            self.duration >= needed,
            "duration",
            &format!("must be at least 30/ENBW = {needed:.3} s"),
        )
    }

    pub fn validate_scan(&self) -> Result<()> {
        check(!self.scan.grid.is_empty(), "scan.grid", "must not be empty")?;
        check(
            self.scan.grid.iter().all(|v| v.is_finite()),
            "scan.grid",
            "values must be finite",
        )
    }

    pub fn validate_reconstruct(&self) -> Result<()> {
        let r = &self.reconstruct;
        check(
            r.dwell.is_finite() && r.dwell * self.mw.f_m >= 10.0,
            "reconstruct.dwell",
            "must hold at least 10 FSK periods",
        )?;
        check(
            r.step_fraction > 0.0 && r.step_fraction <= 1.0,
            "reconstruct.step_fraction",
            "must lie in (0, 1]",
        )?;
        check(r.margin.is_finite() && r.margin >= 0.0, "reconstruct.margin", "must be non-negative")?;
        check(r.threshold > 0.0, "reconstruct.threshold", "must be positive")
    }
}

fn whole_periods(dwell: f64, f_m: f64) -> bool {
    let periods = dwell * f_m;
    dwell.is_finite() && periods >= 1.0 - 1e-9 && (periods - periods.round()).abs() <= 1e-6 * periods
}

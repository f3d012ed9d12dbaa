//! NV spin-resonance frequencies and optical lineshapes.
//!
//! Everything here is a pure function of the applied field and the drive
//! configuration. The Zeeman model is linear in the field projection on each
//! of the four crystal axes; each branch carries a ¹⁴N hyperfine triplet.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};

/// Largest field magnitude for which the linear Zeeman model is used.
pub const MAX_FIELD_TESLA: f64 = 0.01;

/// Applied magnetic field in the diamond crystal frame, tesla.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagneticField {
    pub b_xyz: [f64; 3],
}

impl MagneticField {
    pub fn new(b_xyz: [f64; 3]) -> Result<Self> {
        let field = MagneticField { b_xyz };
        field.validate()?;
        Ok(field)
    }

    pub fn zero() -> Self {
        MagneticField { b_xyz: [0.0; 3] }
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::from(self.b_xyz)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_xyz.iter().any(|c| !c.is_finite()) {
            return Err(NvError::InvalidField(format!(
                "non-finite component in {:?}",
                self.b_xyz
            )));
        }
        let magnitude = self.vector().norm();
        if magnitude >= MAX_FIELD_TESLA {
            return Err(NvError::InvalidField(format!(
                "|B| = {magnitude:e} T is outside the linear Zeeman regime (< {MAX_FIELD_TESLA} T)"
            )));
        }
        Ok(())
    }
}

/// One of the four NV symmetry axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NvAxis {
    Alpha,
    Beta,
    Psi,
    Omega,
}

impl NvAxis {
    pub const ALL: [NvAxis; 4] = [NvAxis::Alpha, NvAxis::Beta, NvAxis::Psi, NvAxis::Omega];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Unit vector of the axis in the crystal frame.
    pub fn unit(self) -> Vector3<f64> {
        let s = 1.0 / 3f64.sqrt();
        let v = match self {
            NvAxis::Alpha => [1.0, 1.0, 1.0],
            NvAxis::Beta => [1.0, -1.0, -1.0],
            NvAxis::Psi => [-1.0, 1.0, -1.0],
            NvAxis::Omega => [-1.0, -1.0, 1.0],
        };
        Vector3::new(v[0] * s, v[1] * s, v[2] * s)
    }

    pub fn label(self) -> &'static str {
        match self {
            NvAxis::Alpha => "alpha",
            NvAxis::Beta => "beta",
            NvAxis::Psi => "psi",
            NvAxis::Omega => "omega",
        }
    }
}

impl fmt::Display for NvAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Signed projections of the field on the four axes, tesla, indexed by
/// [`NvAxis::index`].
pub fn project_field(field: &MagneticField) -> Result<[f64; 4]> {
    if field.b_xyz.iter().any(|c| !c.is_finite()) {
        return Err(NvError::InvalidField("non-finite component".into()));
    }
    let b = field.vector();
    Ok(NvAxis::ALL.map(|axis| b.dot(&axis.unit())))
}

/// Physical constants and lineshape parameters of the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpinSystemParams {
    /// Zero-field splitting, Hz.
    pub d_zfs: f64,
    /// Electron gyromagnetic ratio, Hz/T.
    pub gamma_e: f64,
    /// ¹⁴N hyperfine splitting, Hz.
    pub a_hf: f64,
    /// Per-component half width at half maximum, Hz.
    pub hwhm: f64,
    /// Per-component contrast (fractional dip depth at saturation).
    pub contrast: f64,
    /// Saturation power of the power-broadening model, dBm.
    pub p_sat: f64,
}

impl Default for SpinSystemParams {
    fn default() -> Self {
        SpinSystemParams {
            d_zfs: 2.87e9,
            gamma_e: 28.024e9,
            a_hf: 2.158e6,
            hwhm: 617e3,
            contrast: 0.0153,
            p_sat: 10.0,
        }
    }
}

impl SpinSystemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(NvError::config(format!("spin.{path}"), msg));
        if !(2.8e9..=2.94e9).contains(&self.d_zfs) {
            return bad("d_zfs", "must lie in [2.8e9, 2.94e9] Hz");
        }
        if !(self.gamma_e.is_finite() && self.gamma_e > 0.0) {
            return bad("gamma_e", "must be positive");
        }
        if !(self.a_hf.is_finite() && self.a_hf > 0.0) {
            return bad("a_hf", "must be positive");
        }
        if !(self.hwhm.is_finite() && self.hwhm > 0.0) {
            return bad("hwhm", "must be positive");
        }
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return bad("contrast", "must lie in (0, 1)");
        }
        if !self.p_sat.is_finite() {
            return bad("p_sat", "must be finite");
        }
        Ok(())
    }

    /// Saturation parameter s = 10^((P - p_sat)/10).
    pub fn saturation(&self, mw_power_dbm: f64) -> f64 {
        10f64.powf((mw_power_dbm - self.p_sat) / 10.0)
    }

    /// Power-dependent contrast `contrast * s / (1 + s)`.
    pub fn effective_contrast(&self, mw_power_dbm: f64) -> f64 {
        let s = self.saturation(mw_power_dbm);
        self.contrast * s / (1.0 + s)
    }

    /// Power-broadened half width `hwhm * sqrt(1 + s)`.
    pub fn effective_hwhm(&self, mw_power_dbm: f64) -> f64 {
        self.hwhm * (1.0 + self.saturation(mw_power_dbm)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Minus,
    Plus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Minus => -1.0,
            Branch::Plus => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceLine {
    pub axis: NvAxis,
    pub branch: Branch,
    /// Nuclear spin projection, -1, 0 or +1.
    pub m_i: i8,
    /// Line center, Hz.
    pub center: f64,
}

/// The 24 transition lines for a given field, sorted by frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSet {
    pub lines: Vec<ResonanceLine>,
}

impl ResonanceSet {
    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.lines.iter().map(|l| l.center)
    }

    pub fn line(&self, axis: NvAxis, branch: Branch, m_i: i8) -> Option<&ResonanceLine> {
        self.lines
            .iter()
            .find(|l| l.axis == axis && l.branch == branch && l.m_i == m_i)
    }

    /// Distinct centers after merging lines closer than `tolerance` Hz.
    pub fn distinct_centers(&self, tolerance: f64) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for c in self.centers() {
            match out.last() {
                Some(&last) if (c - last).abs() <= tolerance => {}
                _ => out.push(c),
            }
        }
        out
    }
}

/// Line centers `d_zfs ± gamma_e·|B_i| + m_I·a_hf` for all axes, branches
/// and hyperfine components.
pub fn transition_frequencies(p: &SpinSystemParams, field: &MagneticField) -> Result<ResonanceSet> {
    p.validate()?;
    field.validate()?;
    let projections = project_field(field)?;
    let mut lines = Vec::with_capacity(24);
    for axis in NvAxis::ALL {
        let zeeman = p.gamma_e * projections[axis.index()].abs();
        for branch in [Branch::Minus, Branch::Plus] {
            for m_i in [-1i8, 0, 1] {
                lines.push(ResonanceLine {
                    axis,
                    branch,
                    m_i,
                    center: p.d_zfs + branch.sign() * zeeman + f64::from(m_i) * p.a_hf,
                });
            }
        }
    }
    // Stable sort: ties keep the (axis, branch, m_I) generation order.
    lines.sort_by(|a, b| a.center.partial_cmp(&b.center).unwrap_or(Ordering::Equal));
    Ok(ResonanceSet { lines })
}

/// Unit-height Lorentzian `w² / ((ν-ν₀)² + w²)`.
#[inline]
pub fn lorentzian(nu: f64, center: f64, width: f64) -> f64 {
    let x = nu - center;
    let w2 = width * width;
    w2 / (x * x + w2)
}

/// Sampled normalized photoluminescence; 1.0 is the off-resonant baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrCurve {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
}

impl OdmrCurve {
    pub fn new(freqs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if freqs.len() != values.len() {
            return Err(NvError::invalid("curve frequency and value lengths differ"));
        }
        check_grid(&freqs)?;
        Ok(OdmrCurve { freqs, values })
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Pointwise mean of curves sampled on the same grid.
    pub fn average(curves: &[OdmrCurve]) -> Result<OdmrCurve> {
        let first = curves
            .first()
            .ok_or_else(|| NvError::invalid("no curves to average"))?;
        if curves.iter().any(|c| c.freqs != first.freqs) {
            return Err(NvError::invalid("curves are sampled on different grids"));
        }
        let n = curves.len() as f64;
        let values = (0..first.len())
            .map(|i| curves.iter().map(|c| c.values[i]).sum::<f64>() / n)
            .collect();
        Ok(OdmrCurve {
            freqs: first.freqs.clone(),
            values,
        })
    }
}

/// Dispersive lock-in curve sampled on a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockinCurve {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
}

impl LockinCurve {
    pub fn scaled(&self, factor: f64) -> LockinCurve {
        LockinCurve {
            freqs: self.freqs.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(NvError::invalid("frequency grid is empty"));
    }
    if grid.iter().any(|f| !f.is_finite()) {
        return Err(NvError::invalid("frequency grid contains non-finite values"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(NvError::invalid("frequency grid must be strictly increasing"));
    }
    Ok(())
}

/// Pointwise evaluator of the ODMR response for a fixed drive.
///
/// The probe comb offsets are applied to the drive frequency; every comb
/// tooth probes every line with the power-broadened Lorentzian.
#[derive(Debug, Clone)]
pub struct Spectrum {
    centers: Vec<f64>,
    offsets: Vec<f64>,
    contrast: f64,
    width: f64,
}

impl Spectrum {
    pub fn new(p: &SpinSystemParams, lines: &ResonanceSet, comb_offsets: &[f64], mw_power_dbm: f64) -> Self {
        Spectrum {
            centers: lines.centers().collect(),
            offsets: comb_offsets.to_vec(),
            contrast: p.effective_contrast(mw_power_dbm),
            width: p.effective_hwhm(mw_power_dbm),
        }
    }

    /// Single carrier (hs-off) or the three-tone comb at `±a_hf` (hs-on).
    pub fn for_mode(p: &SpinSystemParams, lines: &ResonanceSet, hs_on: bool, mw_power_dbm: f64) -> Self {
        let offsets: &[f64] = if hs_on { &[-p.a_hf, 0.0, p.a_hf] } else { &[0.0] };
        Spectrum::new(p, lines, offsets, mw_power_dbm)
    }

    pub fn contrast(&self) -> f64 {
        self.contrast
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Normalized photoluminescence at drive frequency `nu`, clipped to (0, 1].
    pub fn value(&self, nu: f64) -> f64 {
        let mut dip = 0.0;
        for &offset in &self.offsets {
            let probe = nu + offset;
            for &center in &self.centers {
                dip += lorentzian(probe, center, self.width);
            }
        }
        (1.0 - self.contrast * dip).clamp(f64::MIN_POSITIVE, 1.0)
    }

    /// Analytic derivative dS/dν (ignores the clip, which never binds for
    /// physical contrasts).
    pub fn derivative(&self, nu: f64) -> f64 {
        let w2 = self.width * self.width;
        let mut acc = 0.0;
        for &offset in &self.offsets {
            let probe = nu + offset;
            for &center in &self.centers {
                let x = probe - center;
                let d = x * x + w2;
                acc += 2.0 * x * w2 / (d * d);
            }
        }
        self.contrast * acc
    }

    /// First-harmonic square-wave FSK response `[S(ν+δ/2) - S(ν-δ/2)] / 2`.
    pub fn lockin(&self, nu: f64, depth: f64) -> f64 {
        0.5 * (self.value(nu + 0.5 * depth) - self.value(nu - 0.5 * depth))
    }
}

pub fn odmr_spectrum(
    p: &SpinSystemParams,
    lines: &ResonanceSet,
    grid: &[f64],
    hs_on: bool,
    mw_power_dbm: f64,
) -> Result<OdmrCurve> {
    check_grid(grid)?;
    let spectrum = Spectrum::for_mode(p, lines, hs_on, mw_power_dbm);
    Ok(OdmrCurve {
        freqs: grid.to_vec(),
        values: grid.iter().map(|&nu| spectrum.value(nu)).collect(),
    })
}

pub fn lockin_lineshape(
    p: &SpinSystemParams,
    lines: &ResonanceSet,
    grid: &[f64],
    hs_on: bool,
    mw_power_dbm: f64,
    depth: f64,
) -> Result<LockinCurve> {
    check_grid(grid)?;
    if !(depth.is_finite() && depth > 0.0) {
        return Err(NvError::invalid(format!("modulation depth must be positive, got {depth}")));
    }
    let spectrum = Spectrum::for_mode(p, lines, hs_on, mw_power_dbm);
    Ok(LockinCurve {
        freqs: grid.to_vec(),
        values: grid.iter().map(|&nu| spectrum.lockin(nu, depth)).collect(),
    })
}

/// The line the magnetometer operates on: the m_I = 0 line of the upper
/// branch of the axis with the smallest field projection.
pub fn working_line(p: &SpinSystemParams, field: &MagneticField) -> Result<ResonanceLine> {
    let lines = transition_frequencies(p, field)?;
    let proj = project_field(field)?;
    let axis = NvAxis::ALL
        .into_iter()
        .min_by(|a, b| {
            proj[a.index()]
                .abs()
                .partial_cmp(&proj[b.index()].abs())
                .unwrap_or(Ordering::Equal)
        })
        .unwrap_or(NvAxis::Alpha);
    lines
        .line(axis, Branch::Plus, 0)
        .copied()
        .ok_or_else(|| NvError::Numeric("working line missing from resonance set".into()))
}

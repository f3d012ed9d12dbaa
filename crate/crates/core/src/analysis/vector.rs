use nalgebra::{Matrix4x3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::nv_model::{project_field, Branch, MagneticField, NvAxis, ResonanceSet, SpinSystemParams};

/// Residual above which a reconstruction is flagged inconsistent, Hz.
pub const DEFAULT_RESIDUAL_THRESHOLD: f64 = 50e3;

/// Zeeman splitting `ν+ - ν-` measured on one axis, Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSplitting {
    pub axis: NvAxis,
    pub splitting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedField {
    /// Tesla.
    pub b_xyz: [f64; 3],
    /// RMS of `2γ·û_i·b - sign_i·splitting_i` over the four axes, Hz.
    pub residual: f64,
    /// Projection signs used, indexed like [`NvAxis::ALL`].
    pub signs: [f64; 4],
    pub inconsistent: bool,
}

/// Splittings of the `m_I = 0` line pairs.
pub fn splittings_from(set: &ResonanceSet) -> Result<Vec<AxisSplitting>> {
    NvAxis::ALL
        .iter()
        .map(|&axis| {
            let plus = set.line(axis, Branch::Plus, 0);
            let minus = set.line(axis, Branch::Minus, 0);
            match (plus, minus) {
                (Some(p), Some(m)) => Ok(AxisSplitting {
                    axis,
                    splitting: p.center - m.center,
                }),
                _ => Err(NvError::Underdetermined(format!("no line pair on axis {axis}"))),
            }
        })
        .collect()
}

/// Projection signs of a known bias field; zero projections count as +1.
pub fn projection_signs(field: &MagneticField) -> Result<[f64; 4]> {
    Ok(project_field(field)?.map(|b| if b < 0.0 { -1.0 } else { 1.0 }))
}

pub fn reconstruct_field(splittings: &[AxisSplitting], signs: &[f64; 4], p: &SpinSystemParams) -> Result<ReconstructedField> {
    reconstruct_field_with(splittings, signs, p, DEFAULT_RESIDUAL_THRESHOLD)
}

/// Least-squares inversion of the four projected fields.
pub fn reconstruct_field_with(
    splittings: &[AxisSplitting],
    signs: &[f64; 4],
    p: &SpinSystemParams,
    threshold: f64,
) -> Result<ReconstructedField> {
    p.validate()?;
    if let Some(s) = signs.iter().find(|s| s.abs() != 1.0) {
        return Err(NvError::invalid(format!("signs must be ±1, got {s}")));
    }
    let mut measured = [None; 4];
    for s in splittings {
        if !s.splitting.is_finite() {
            return Err(NvError::invalid(format!("non-finite splitting on axis {}", s.axis)));
        }
        let slot = &mut measured[s.axis.index()];
        if slot.is_some() {
            return Err(NvError::invalid(format!("axis {} given twice", s.axis)));
        }
        *slot = Some(s.splitting);
    }
    let missing: Vec<&str> = NvAxis::ALL
        .iter()
        .filter(|a| measured[a.index()].is_none())
        .map(|a| a.label())
        .collect();
    if !missing.is_empty() {
        return Err(NvError::Underdetermined(format!("missing axes: {}", missing.join(", "))));
    }

    let two_gamma = 2.0 * p.gamma_e;
    let m = Matrix4x3::from_fn(|i, j| NvAxis::ALL[i].unit()[j]);
    let s = Vector4::from_fn(|i, _| signs[i] * measured[i].unwrap_or(0.0) / two_gamma);
    let b: Vector3<f64> = m
        .svd(true, true)
        .solve(&s, 1e-12)
        .map_err(|e| NvError::Numeric(e.to_string()))?;
    let r = (m * b - s) * two_gamma;
    let residual = (r.norm_squared() / 4.0).sqrt();
    if !(b.iter().all(|v| v.is_finite()) && residual.is_finite()) {
        return Err(NvError::Numeric("non-finite field estimate".into()));
    }
    Ok(ReconstructedField {
        b_xyz: [b.x, b.y, b.z],
        residual,
        signs: *signs,
        inconsistent: residual > threshold,
    })
}

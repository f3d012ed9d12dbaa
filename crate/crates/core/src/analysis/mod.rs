//! Line and triplet fits, slope extraction, sensitivity estimates and vector-field
//! reconstruction.

mod fit;
mod sensitivity;
mod slope;
mod triplet;
mod vector;

pub use fit::{find_minima, fit_odmr, fit_odmr_from, LineParams, Minimum, OdmrFit, COST_TOLERANCE, MAX_ITERATIONS, STEP_TOLERANCE};
pub use sensitivity::{
    estimate_sensitivity, shot_noise_limit, snr_enhancement, NoiseEstimator, SensitivityMode, SensitivityReport,
};
pub use slope::{fit_slope, SlopeFit};
pub use triplet::{fit_triplets, TripletFit};
pub use vector::{
    projection_signs, reconstruct_field, reconstruct_field_with, splittings_from, AxisSplitting, ReconstructedField,
    DEFAULT_RESIDUAL_THRESHOLD,
};

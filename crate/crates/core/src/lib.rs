//! Desk-scale simulator and analysis toolkit for an ensemble NV-diamond
//! magnetometer signal chain.
//!
//! The crate is organised the way the signal flows:
//!
//! * [`nv_model`]: resonance frequencies and ODMR / lock-in lineshapes.
//! * [`mw_control`]: FSK modulation, probe combs and sweep plans.
//! * [`signal_chain`]: two-channel photodetection with noise and the ADC.
//! * [`lockin`]: digital balance detection, lock-in demodulation (float and
//!   fixed-point) and the ODMR integrator.
//! * [`analysis`]: fits, slopes, sensitivity estimates and vector-field
//!   reconstruction.
//! * [`scenario`] and [`commands`]: configuration files and the scenario
//!   runners behind the `nvmag` binary.

pub mod analysis;
pub mod commands;
pub mod error;
pub mod lockin;
pub mod mw_control;
pub mod nv_model;
pub mod rng;
pub mod scenario;
pub mod signal_chain;

pub use error::{NvError, Result};

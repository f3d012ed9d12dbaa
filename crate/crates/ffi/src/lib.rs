//! C ABI over the `nvmag` simulator.
//!
//! Every function returns an [`NvmStatus`]; results go through out-pointers.
//! Objects are opaque handles created by `nvm_*_new`/`nvm_*_from_*` and
//! released with the matching `*_free`. After a non-zero status,
//! [`nvm_last_error`] copies a description of the failure for the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nvmag::analysis::{self, AxisSplitting, SensitivityMode};
use nvmag::commands;
use nvmag::lockin::{self, BalanceConfig};
use nvmag::nv_model::{self, MagneticField, NvAxis, SpinSystemParams};
use nvmag::scenario::Scenario;
use nvmag::signal_chain::{read_nvts, write_nvts, DualTimeSeries};
use nvmag::NvError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NvmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidField = 3,
    Config = 4,
    DegenerateReference = 5,
    EnbwTooWide = 6,
    Overflow = 7,
    FitFailed = 8,
    NoCrossing = 9,
    Underdetermined = 10,
    Numeric = 11,
    Io = 12,
    BufferTooSmall = 13,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NvmMode {
    Unbalanced = 0,
    Balanced = 1,
    Electronic = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NvmChannel {
    A = 0,
    B = 1,
}

/// A parsed and validated scenario.
pub struct NvmScenario(Scenario);

/// Two-channel ADC record.
pub struct NvmTimeSeries(DualTimeSeries);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &NvError) -> NvmStatus {
    match e {
        NvError::InvalidField(_) => NvmStatus::InvalidField,
        NvError::InvalidArgument(_) => NvmStatus::InvalidArgument,
        NvError::Config { .. } => NvmStatus::Config,
        NvError::DegenerateReference => NvmStatus::DegenerateReference,
        NvError::EnbwTooWide { .. } => NvmStatus::EnbwTooWide,
        NvError::Overflow { .. } => NvmStatus::Overflow,
        NvError::FitFailed { .. } => NvmStatus::FitFailed,
        NvError::NoCrossing { .. } => NvmStatus::NoCrossing,
        NvError::Underdetermined(_) => NvmStatus::Underdetermined,
        NvError::Numeric(_) => NvmStatus::Numeric,
        NvError::Io(_) => NvmStatus::Io,
    }
}

enum Failure {
    Nv(NvError),
    Status(NvmStatus, String),
}

impl From<NvError> for Failure {
    fn from(e: NvError) -> Self {
        Failure::Nv(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(NvmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NvmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NvmStatus::Ok,
        Ok(Err(Failure::Nv(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            NvmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(NvmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, capacity: usize, written: *mut usize) -> Result<(), Failure> {
    let written = out_arg(written, "written")?;
    *written = src.len();
    if dst.is_null() && capacity == 0 {
        // size query
        return Ok(());
    }
    if capacity < src.len() {
        return Err(Failure::Status(
            NvmStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", src.len()),
        ));
    }
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Copies the calling thread's last error message (NUL-terminated, truncated
/// to fit) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nvm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nvm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Scenario with every field at its default and the given seed.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nvm_scenario_new(seed: u64, out: *mut *mut NvmScenario) -> NvmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let sc = Scenario {
            seed: Some(seed),
            ..Scenario::default()
        };
        sc.validate_core()?;
        *out = Box::into_raw(Box::new(NvmScenario(sc)));
        Ok(())
    })
}

/// Parses a JSON scenario. The seed must be present in the text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nvm_scenario_from_json(json: *const c_char, out: *mut *mut NvmScenario) -> NvmStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let sc = Scenario::from_json(text)?;
        sc.validate_core()?;
        *out = Box::into_raw(Box::new(NvmScenario(sc)));
        Ok(())
    })
}

/// # Safety
/// `sc` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nvm_scenario_free(sc: *mut NvmScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// # Safety
/// `sc` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nvm_scenario_set_seed(sc: *mut NvmScenario, seed: u64) -> NvmStatus {
    guard(|| {
        out_arg(sc, "scenario")?.0.seed = Some(seed);
        Ok(())
    })
}

/// Runs the acquisition chain for `duration` seconds.
///
/// # Safety
/// `sc` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nvm_simulate(
    sc: *const NvmScenario,
    duration: f64,
    out: *mut *mut NvmTimeSeries,
) -> NvmStatus {
    guard(|| {
        let sc = &sc.as_ref().ok_or_else(|| null("scenario"))?.0;
        let out = out_arg(out, "out")?;
        let ts = sc.chain(sc.seed()?).simulate(duration)?;
        *out = Box::into_raw(Box::new(NvmTimeSeries(ts)));
        Ok(())
    })
}

/// # Safety
/// `ts` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nvm_timeseries_free(ts: *mut NvmTimeSeries) {
    if !ts.is_null() {
        drop(Box::from_raw(ts));
    }
}

/// Sample count per channel and sample rate in Hz.
///
/// # Safety
/// `ts` must be a live handle; the out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nvm_timeseries_info(
    ts: *const NvmTimeSeries,
    len: *mut usize,
    sample_rate: *mut f64,
    bits: *mut u8,
) -> NvmStatus {
    guard(|| {
        let ts = &ts.as_ref().ok_or_else(|| null("time series"))?.0;
        *out_arg(len, "len")? = ts.len();
        *out_arg(sample_rate, "sample_rate")? = ts.sample_rate;
        *out_arg(bits, "bits")? = ts.bits;
        Ok(())
    })
}

/// Copies one channel's ADC codes. Pass a null buffer with zero capacity to
/// query the length through `written`.
///
/// # Safety
/// `ts` must be a live handle; `buf` must be valid for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn nvm_timeseries_codes(
    ts: *const NvmTimeSeries,
    channel: NvmChannel,
    buf: *mut u16,
    capacity: usize,
    written: *mut usize,
) -> NvmStatus {
    guard(|| {
        let ts = &ts.as_ref().ok_or_else(|| null("time series"))?.0;
        let codes = match channel {
            NvmChannel::A => &ts.codes_a,
            NvmChannel::B => &ts.codes_b,
        };
        copy_out(codes, buf, capacity, written)
    })
}

/// Writes the record in the binary NVTS format.
///
/// # Safety
/// `ts` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nvm_timeseries_write(ts: *const NvmTimeSeries, path: *const c_char) -> NvmStatus {
    guard(|| {
        let ts = &ts.as_ref().ok_or_else(|| null("time series"))?.0;
        let path = str_arg(path, "path")?;
        let file = File::create(path).map_err(|e| NvError::Io(format!("{path}: {e}")))?;
        write_nvts(ts, BufWriter::new(file))?;
        Ok(())
    })
}

/// Reads an NVTS file. `full_scale` is the ADC range in volts, which the
/// file does not store.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nvm_timeseries_read(
    path: *const c_char,
    full_scale: f64,
    out: *mut *mut NvmTimeSeries,
) -> NvmStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let file = File::open(path).map_err(|e| NvError::Io(format!("{path}: {e}")))?;
        let ts = read_nvts(BufReader::new(file), full_scale)?;
        *out = Box::into_raw(Box::new(NvmTimeSeries(ts)));
        Ok(())
    })
}

/// Balances the record with the scenario's k1 and the given k2, then runs
/// the AC-coupled float lock-in. X and Y each receive `written` values.
///
/// # Safety
/// Handles must be live; `x` and `y` must be valid for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn nvm_demodulate(
    sc: *const NvmScenario,
    ts: *const NvmTimeSeries,
    k2: f64,
    x: *mut f64,
    y: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> NvmStatus {
    guard(|| {
        let sc = &sc.as_ref().ok_or_else(|| null("scenario"))?.0;
        let ts = &ts.as_ref().ok_or_else(|| null("time series"))?.0;
        let cfg = BalanceConfig { k1: sc.balance.k1, k2 };
        let balanced = lockin::balance(ts, &cfg)?;
        let period = (balanced.sample_rate / sc.mw.f_m).round() as usize;
        let stream = lockin::Stream::new(
            balanced.sample_rate,
            lockin::ac_couple(balanced.samples.into_iter(), period).collect(),
        );
        let out = lockin::demodulate(&stream, &sc.lockin_config())?;
        copy_out(&out.x, x, capacity, written)?;
        if !(y.is_null() && capacity == 0) {
            copy_out(&out.y, y, capacity, written)?;
        }
        Ok(())
    })
}

/// Simulated sensitivity of the scenario in T/√Hz.
///
/// # Safety
/// `sc` must be a live handle and `eta` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nvm_sensitivity(sc: *const NvmScenario, mode: NvmMode, eta: *mut f64) -> NvmStatus {
    guard(|| {
        let sc = &sc.as_ref().ok_or_else(|| null("scenario"))?.0;
        let eta = out_arg(eta, "eta")?;
        let mode = match mode {
            NvmMode::Unbalanced => SensitivityMode::Unbalanced,
            NvmMode::Balanced => SensitivityMode::Balanced,
            NvmMode::Electronic => SensitivityMode::Electronic,
        };
        *eta = commands::run_sensitivity(sc, mode, sc.seed()?)?.report.eta;
        Ok(())
    })
}

/// Normalized CW-ODMR spectrum of the default spin system at field `b_xyz`
/// (tesla), evaluated on `grid` (Hz, strictly increasing).
///
/// # Safety
/// `b_xyz` must point to 3 values; `grid` and `values` to `n` values each.
#[no_mangle]
pub unsafe extern "C" fn nvm_odmr_spectrum(
    b_xyz: *const f64,
    grid: *const f64,
    n: usize,
    hs_on: bool,
    mw_power_dbm: f64,
    values: *mut f64,
) -> NvmStatus {
    guard(|| {
        let (p, lines) = default_lines(b_xyz)?;
        let grid = slice_arg(grid, n, "grid")?;
        let curve = nv_model::odmr_spectrum(&p, &lines, grid, hs_on, mw_power_dbm)?;
        let mut written = 0;
        copy_out(&curve.values, values, n, &mut written)
    })
}

/// Lock-in lineshape `[S(ν+δ/2) - S(ν-δ/2)] / 2` on `grid`; see
/// [`nvm_odmr_spectrum`].
///
/// # Safety
/// As for [`nvm_odmr_spectrum`].
#[no_mangle]
pub unsafe extern "C" fn nvm_lockin_lineshape(
    b_xyz: *const f64,
    grid: *const f64,
    n: usize,
    hs_on: bool,
    mw_power_dbm: f64,
    depth: f64,
    values: *mut f64,
) -> NvmStatus {
    guard(|| {
        let (p, lines) = default_lines(b_xyz)?;
        let grid = slice_arg(grid, n, "grid")?;
        let curve = nv_model::lockin_lineshape(&p, &lines, grid, hs_on, mw_power_dbm, depth)?;
        let mut written = 0;
        copy_out(&curve.values, values, n, &mut written)
    })
}

unsafe fn default_lines(b_xyz: *const f64) -> Result<(SpinSystemParams, nv_model::ResonanceSet), Failure> {
    let b = slice_arg(b_xyz, 3, "b_xyz")?;
    let field = MagneticField::new([b[0], b[1], b[2]])?;
    let p = SpinSystemParams::default();
    let lines = nv_model::transition_frequencies(&p, &field)?;
    Ok((p, lines))
}

/// Photon-shot-noise-limited sensitivity in T/√Hz.
///
/// # Safety
/// `eta` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nvm_shot_noise_limit(
    hwhm: f64,
    contrast: f64,
    photon_rate: f64,
    gamma: f64,
    eta: *mut f64,
) -> NvmStatus {
    guard(|| {
        let eta = out_arg(eta, "eta")?;
        *eta = analysis::shot_noise_limit(hwhm, contrast, photon_rate, gamma)?;
        Ok(())
    })
}

/// Least-squares field (tesla) from the Zeeman splittings of the four axes,
/// ordered like the crate's axis list, with the given projection signs (±1).
///
/// # Safety
/// `splittings` and `signs` must point to 4 values, `b_xyz` to 3, and
/// `residual` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nvm_reconstruct_field(
    splittings: *const f64,
    signs: *const f64,
    b_xyz: *mut f64,
    residual: *mut f64,
) -> NvmStatus {
    guard(|| {
        let split = slice_arg(splittings, 4, "splittings")?;
        let sg = slice_arg(signs, 4, "signs")?;
        let residual = out_arg(residual, "residual")?;
        if b_xyz.is_null() {
            return Err(null("b_xyz"));
        }
        let list: Vec<AxisSplitting> = NvAxis::ALL
            .iter()
            .zip(split)
            .map(|(&axis, &splitting)| AxisSplitting { axis, splitting })
            .collect();
        let r = analysis::reconstruct_field(&list, &[sg[0], sg[1], sg[2], sg[3]], &SpinSystemParams::default())?;
        ptr::copy_nonoverlapping(r.b_xyz.as_ptr(), b_xyz, 3);
        *residual = r.residual;
        Ok(())
    })
}

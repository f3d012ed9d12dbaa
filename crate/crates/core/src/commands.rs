//! Scenario runners behind the `nvmag` verbs. Each returns its artifacts in
//! memory; the binary decides where they go.
//!
//! Every simulated run draws its noise seed from the scenario seed through
//! [`derive_seed`], keyed by a per-command tag and the run index, so results
//! do not depend on thread count or scheduling.

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    estimate_sensitivity, fit_slope, fit_triplets, projection_signs, reconstruct_field_with, AxisSplitting,
    NoiseEstimator, ReconstructedField, SensitivityMode, SensitivityReport, SlopeFit, TripletFit,
};
use crate::error::{NvError, Result};
use crate::lockin::{
    ac_couple, block_average, demodulate_fixed, odmr_integrate, tune_balance, BalanceConfig, Baseline, Demodulator,
    FixedPointReport, LockinOutput, Path, Stream,
};
use crate::mw_control::{make_sweep, SweepPlan, MW_RANGE};
use crate::nv_model::{
    lockin_lineshape, transition_frequencies, working_line, Branch, LockinCurve, NvAxis, OdmrCurve,
};
use crate::rng::derive_seed;
use crate::scenario::{NoiseSection, ScanAxis, ScanPath, Scenario};
use crate::signal_chain::{DualTimeSeries, ELEMENTARY_CHARGE};

const TAG_SWEEP: u64 = 1;
const TAG_RECORD: u64 = 2;
const TAG_SLOPE: u64 = 3;
const TAG_RECONSTRUCT: u64 = 4;
const TAG_BALANCE: u64 = 5;

fn run_seed(seed: u64, tag: u64, index: u64) -> u64 {
    derive_seed(derive_seed(seed, tag), index)
}

/// One output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub artifacts: Vec<Artifact>,
    /// One-line human summary.
    pub summary: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Written as a leading comment line of every CSV when set.
    pub timestamp: Option<String>,
}

fn csv_header(opts: &RunOptions, meta: &[(&str, String)], columns: &str) -> String {
    let mut out = String::new();
    if let Some(ts) = &opts.timestamp {
        out.push_str(&format!("# generated {ts}\n"));
    }
    for (k, v) in meta {
        out.push_str(&format!("# {k}={v}\n"));
    }
    out.push_str(columns);
    out.push('\n');
    out
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn sci(v: f64) -> String {
    format!("{v:.10e}")
}

fn num(v: f64) -> String {
    format!("{v:.9e}")
}

fn path_label(p: Path) -> &'static str {
    match p {
        Path::Float => "float",
        Path::Fixed => "fixed",
    }
}

/// Parses, applies the seed override and checks the shared sections.
pub fn prepare(text: &str, seed_override: Option<u64>) -> Result<Scenario> {
    let mut sc = Scenario::from_json(text)?;
    if seed_override.is_some() {
        sc.seed = seed_override;
    }
    sc.validate_core()?;
    Ok(sc)
}

pub fn cmd_validate_config(sc: &Scenario) -> Result<CommandOutput> {
    sc.validate()?;
    Ok(CommandOutput {
        artifacts: vec![Artifact {
            name: "resolved_config.json".into(),
            contents: format!("{}\n", sc.to_json()),
        }],
        summary: format!("configuration valid (seed {})", sc.seed()?),
    })
}

fn balanced_volts<'a>(ts: &'a DualTimeSeries, balance: &BalanceConfig) -> impl Iterator<Item = f64> + 'a {
    let (k1, k2) = (balance.k1, balance.k2);
    ts.codes_a
        .iter()
        .zip(&ts.codes_b)
        .map(move |(&a, &b)| k1 * ts.to_volts(a) - k2 * ts.to_volts(b))
}

/// Lock-in input: the balanced signal through an AC-coupled front end.
fn lockin_input<'a>(sc: &Scenario, ts: &'a DualTimeSeries, balance: &BalanceConfig) -> impl Iterator<Item = f64> + 'a {
    let period = (sc.adc.sample_rate / sc.mw.f_m).round() as usize;
    ac_couple(balanced_volts(ts, balance), period)
}

/// `k2` for swept runs: the pinned value, or one tuned on a short
/// off-resonant record.
pub fn resolve_balance(sc: &Scenario, seed: u64) -> Result<BalanceConfig> {
    if let Some(k2) = sc.balance.k2 {
        return Ok(BalanceConfig { k1: sc.balance.k1, k2 });
    }
    let mut chain = sc.chain(run_seed(seed, TAG_BALANCE, 0));
    chain.mw.center = sc.sensitivity.probe_frequency;
    let ts = chain.simulate(0.5f64.max(10.0 / sc.mw.f_m))?;
    match tune_balance(&ts, sc.balance.k1) {
        // nothing common-mode to cancel
        Err(NvError::DegenerateReference) => Ok(BalanceConfig::unbalanced(sc.balance.k1)),
        other => other,
    }
}

fn sweep_plan(sc: &Scenario) -> Result<SweepPlan> {
    let s = &sc.sweep;
    let center = working_line(&sc.spin, &sc.field)?.center;
    let start = s.start.unwrap_or(center - s.half_span);
    let stop = s.stop.unwrap_or(center + s.half_span);
    if start < MW_RANGE.0 || stop > MW_RANGE.1 {
        return Err(NvError::config("sweep", "sweep leaves the 2.5-3.0 GHz range"));
    }
    make_sweep(start, stop, s.points, s.dwell).map_err(|e| NvError::config("sweep", e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub seed: u64,
    pub f_m: f64,
    pub depth: f64,
    pub working_line_hz: f64,
    pub balance: BalanceConfig,
    pub slope_hs_off: SlopeFit,
    pub slope_hs_on: SlopeFit,
    pub slope_ratio: f64,
}

/// Simulated ODMR and lock-in sweeps with the hyperfine comb off and on.
pub struct SweepResult {
    pub plan: SweepPlan,
    pub odmr_off: OdmrCurve,
    pub odmr_on: OdmrCurve,
    pub lockin_off: LockinCurve,
    pub lockin_on: LockinCurve,
    pub summary: SweepSummary,
}

pub fn run_sweep(sc: &Scenario) -> Result<SweepResult> {
    sc.validate_core()?;
    sc.validate_sweep()?;
    let seed = sc.seed()?;
    let plan = sweep_plan(sc)?;
    let balance = resolve_balance(sc, seed)?;
    let cfg = sc.lockin_config();
    let fs = sc.adc.sample_rate;
    let odmr_balance = BalanceConfig::unbalanced(sc.balance.k1);
    // the simulator knows its off-resonant level; sweep edges sit in line tails
    let baseline = Baseline::Value(sc.balance.k1 * sc.detector.volts_a());

    let mut curves = Vec::new();
    for (h, hs_on) in [false, true].into_iter().enumerate() {
        let runs = plan
            .freqs
            .par_iter()
            .enumerate()
            .map(|(i, &f)| {
                let index = (2 * i + h) as u64;
                let mut chain = sc.chain(run_seed(seed, TAG_SWEEP, 2 * index));
                chain.mw.center = f;
                chain.mw.hs_on = hs_on;
                chain.mw = chain.mw.cw();
                let cw = chain.simulate(plan.dwell)?;

                let mut chain = sc.chain(run_seed(seed, TAG_SWEEP, 2 * index + 1));
                chain.mw.center = f;
                chain.mw.hs_on = hs_on;
                let fsk = chain.simulate(plan.dwell)?;
                let (x, _) = block_average(lockin_input(sc, &fsk, &balance), &cfg, fs);
                Ok((cw, x))
            })
            .collect::<Result<Vec<_>>>()?;
        let (series, x): (Vec<DualTimeSeries>, Vec<f64>) = runs.into_iter().unzip();
        let odmr = odmr_integrate(&series, &plan, &odmr_balance, baseline)?;
        let lockin = LockinCurve {
            freqs: plan.freqs.clone(),
            values: x,
        };
        curves.push((odmr, lockin));
    }
    let (odmr_on, lockin_on) = curves.pop().expect("two passes");
    let (odmr_off, lockin_off) = curves.pop().expect("two passes");

    let around = 0.5 * (plan.start + plan.stop);
    let half = 0.5 * sc.mw.depth;
    let slope_hs_off = fit_slope(&lockin_off, around, half)?;
    let slope_hs_on = fit_slope(&lockin_on, around, half)?;
    let summary = SweepSummary {
        seed,
        f_m: sc.mw.f_m,
        depth: sc.mw.depth,
        working_line_hz: working_line(&sc.spin, &sc.field)?.center,
        balance,
        slope_hs_off,
        slope_hs_on,
        slope_ratio: slope_hs_on.slope / slope_hs_off.slope,
    };
    Ok(SweepResult {
        plan,
        odmr_off,
        odmr_on,
        lockin_off,
        lockin_on,
        summary,
    })
}

pub fn cmd_sweep_odmr(sc: &Scenario, opts: &RunOptions) -> Result<CommandOutput> {
    let r = run_sweep(sc)?;
    let meta = vec![
        ("seed", r.summary.seed.to_string()),
        ("f_m_hz", sci(sc.mw.f_m)),
        ("depth_hz", sci(sc.mw.depth)),
        ("dwell_s", num(r.plan.dwell)),
    ];
    let mut spectrum = csv_header(opts, &meta, "freq_hz,hs_off,hs_on");
    let mut lockin = csv_header(opts, &meta, "freq_hz,hs_off_volts,hs_on_volts");
    for i in 0..r.plan.points {
        let f = sci(r.plan.freqs[i]);
        spectrum.push_str(&format!("{f},{},{}\n", num(r.odmr_off.values[i]), num(r.odmr_on.values[i])));
        lockin.push_str(&format!("{f},{},{}\n", num(r.lockin_off.values[i]), num(r.lockin_on.values[i])));
    }
    let summary = format!(
        "slope hs-off {:.4e} V/Hz, hs-on {:.4e} V/Hz, ratio {:.3}",
        r.summary.slope_hs_off.slope, r.summary.slope_hs_on.slope, r.summary.slope_ratio
    );
    Ok(CommandOutput {
        artifacts: vec![
            Artifact {
                name: "odmr_spectrum.csv".into(),
                contents: spectrum,
            },
            Artifact {
                name: "lockin_curve.csv".into(),
                contents: lockin,
            },
            Artifact {
                name: "sweep_summary.json".into(),
                contents: json(&r.summary),
            },
        ],
        summary,
    })
}

/// Lock-in sweep across the working line and a linear fit of its slope.
pub fn measure_slope(sc: &Scenario, seed: u64) -> Result<SlopeFit> {
    let line = working_line(&sc.spin, &sc.field)?;
    let n = sc.sensitivity.slope_points;
    let depth = sc.mw.depth;
    let cfg = sc.lockin_config();
    let fs = sc.adc.sample_rate;
    let balance = BalanceConfig::unbalanced(sc.balance.k1);
    let freqs: Vec<f64> = (0..n)
        .map(|i| line.center + 1.2 * depth * (i as f64 / (n - 1) as f64 - 0.5))
        .collect();
    let values = freqs
        .par_iter()
        .enumerate()
        .map(|(i, &f)| {
            let mut chain = sc.chain(run_seed(seed, TAG_SLOPE, i as u64));
            chain.mw.center = f;
            let ts = chain.simulate(sc.sensitivity.slope_dwell)?;
            Ok(block_average(lockin_input(sc, &ts, &balance), &cfg, fs).0)
        })
        .collect::<Result<Vec<f64>>>()?;
    fit_slope(&LockinCurve { freqs, values }, line.center, 0.5 * depth)
}

/// Everything produced by one sensitivity run.
#[derive(Debug, Clone)]
pub struct SensitivityRun {
    pub report: SensitivityReport,
    pub output: LockinOutput,
    pub balance: BalanceConfig,
    pub slope: SlopeFit,
    pub fixed: Option<FixedPointReport>,
    pub seed: u64,
}

/// Noise record at the off-resonant probe frequency, demodulated and
/// converted to a sensitivity. Electronic mode switches the laser noise
/// sources off and reads channel A alone.
pub fn run_sensitivity(sc: &Scenario, mode: SensitivityMode, seed: u64) -> Result<SensitivityRun> {
    sc.validate_core()?;
    sc.validate_sensitivity()?;
    let slope = measure_slope(sc, seed)?;

    let mut chain = sc.chain(run_seed(seed, TAG_RECORD, 0));
    chain.mw.center = sc.sensitivity.probe_frequency;
    if mode == SensitivityMode::Electronic {
        let quiet = NoiseSection {
            electronic_density: sc.noise.electronic_density,
            ..NoiseSection::silent()
        };
        chain.noise = quiet.with_seed(chain.noise.seed);
    }
    let ts = chain.simulate(sc.duration)?;

    let balance = match mode {
        SensitivityMode::Balanced => match sc.balance.k2 {
            Some(k2) => BalanceConfig { k1: sc.balance.k1, k2 },
            None => tune_balance(&ts, sc.balance.k1)?,
        },
        _ => BalanceConfig::unbalanced(sc.balance.k1),
    };
    let cfg = sc.lockin_config();
    let fs = sc.adc.sample_rate;
    let (output, fixed) = match sc.lockin.path {
        Path::Float => {
            let mut demod = Demodulator::new(&cfg, fs)?;
            if ts.len() < 2 * demod.window() {
                return Err(NvError::invalid("record is shorter than two lock-in windows"));
            }
            for v in lockin_input(sc, &ts, &balance) {
                demod.push(v);
            }
            (demod.finish(), None)
        }
        Path::Fixed => {
            let stream = Stream::new(fs, lockin_input(sc, &ts, &balance).collect());
            drop(ts);
            let (out, report) = demodulate_fixed(&stream, &cfg, &sc.fixed_point)?;
            (out, Some(report))
        }
    };
    let report = estimate_sensitivity(&output, &slope, &sc.spin, mode, sc.sensitivity.estimator)?;
    Ok(SensitivityRun {
        report,
        output,
        balance,
        slope,
        fixed,
        seed,
    })
}

#[derive(Debug, Clone, Serialize)]
struct SensitivityRecord<'a> {
    seed: u64,
    path: &'static str,
    balance: BalanceConfig,
    slope_fit: SlopeFit,
    report: &'a SensitivityReport,
    eta_nt_per_rthz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fixed_point: Option<&'a FixedPointReport>,
}

pub fn cmd_sensitivity(sc: &Scenario, modes: &[SensitivityMode], opts: &RunOptions) -> Result<CommandOutput> {
    let seed = sc.seed()?;
    let mut artifacts = Vec::new();
    let mut lines = Vec::new();
    for &mode in modes {
        let run = run_sensitivity(sc, mode, seed)?;
        let meta = vec![
            ("mode", mode.to_string()),
            ("enbw_hz", sci(run.output.enbw)),
            ("f_m_hz", sci(sc.mw.f_m)),
            ("path", path_label(run.output.path).to_string()),
            ("seed", seed.to_string()),
        ];
        let mut trace = csv_header(opts, &meta, "t_seconds,x_volts,y_volts");
        for k in 0..run.output.len() {
            trace.push_str(&format!(
                "{},{},{}\n",
                num(run.output.time(k)),
                num(run.output.x[k]),
                num(run.output.y[k])
            ));
        }
        let record = SensitivityRecord {
            seed,
            path: path_label(run.output.path),
            balance: run.balance,
            slope_fit: run.slope,
            report: &run.report,
            eta_nt_per_rthz: run.report.eta * 1e9,
            fixed_point: run.fixed.as_ref(),
        };
        artifacts.push(Artifact {
            name: format!("sensitivity_{mode}.json"),
            contents: json(&record),
        });
        artifacts.push(Artifact {
            name: format!("noise_trace_{mode}.csv"),
            contents: trace,
        });
        lines.push(format!("{mode} {:.3} nT/√Hz", run.report.eta * 1e9));
    }
    Ok(CommandOutput {
        artifacts,
        summary: lines.join(", "),
    })
}

fn apply_axis(sc: &Scenario, axis: ScanAxis, value: f64) -> Scenario {
    let mut s = sc.clone();
    match axis {
        ScanAxis::FM => s.mw.f_m = value,
        ScanAxis::Power => s.mw.power = value,
        ScanAxis::Depth => s.mw.depth = value,
        ScanAxis::Enbw => s.lockin.enbw = value,
    }
    s
}

/// Sensitivity predicted from the noise-free lineshape and the noise
/// budget of each source evaluated at `f_m`.
pub fn analytic_sensitivity(sc: &Scenario, mode: SensitivityMode) -> Result<SensitivityReport> {
    sc.validate_core()?;
    sc.validate_sensitivity()?;
    let line = working_line(&sc.spin, &sc.field)?;
    let lines = transition_frequencies(&sc.spin, &sc.field)?;
    let depth = sc.mw.depth;
    let n = 241;
    let grid: Vec<f64> = (0..n)
        .map(|i| line.center + 1.2 * depth * (i as f64 / (n - 1) as f64 - 0.5))
        .collect();
    let d = &sc.detector;
    let (va, vb) = (d.volts_a(), d.volts_b());
    // a square wave through the detector pole keeps this fraction of its
    // fundamental lock-in response
    let tau = 1.0 / (2.0 * std::f64::consts::PI * d.detector_bandwidth);
    let x = 4.0 * tau * sc.mw.f_m;
    let pole = 1.0 - x * (1.0 / x).tanh();
    let curve = lockin_lineshape(&sc.spin, &lines, &grid, sc.mw.hs_on, sc.mw.power, depth)?
        .scaled(sc.balance.k1 * va * pole);
    let slope = fit_slope(&curve, line.center, 0.5 * depth)?;

    let nz = &sc.noise;
    let q_adc = sc.adc.lsb() / 12f64.sqrt() / (sc.adc.sample_rate / 2.0).sqrt();
    let floor = nz.electronic_density.powi(2) + q_adc * q_adc;
    let rin2 = nz.laser_rin_density.powi(2) * (1.0 + nz.pink_knee / sc.mw.f_m);
    let shot = |gain: f64, v: f64| {
        if nz.shot_enabled {
            2.0 * ELEMENTARY_CHARGE * gain * v
        } else {
            0.0
        }
    };
    let own_a = floor + shot(d.tia_gain_a, va);
    let own_b = floor + shot(d.tia_gain_b, vb);
    let density2 = match mode {
        SensitivityMode::Electronic => floor,
        SensitivityMode::Unbalanced => va * va * rin2 + own_a,
        SensitivityMode::Balanced => {
            let r = match sc.balance.k2 {
                Some(k2) => k2 / sc.balance.k1,
                None => va * vb * rin2 / (vb * vb * rin2 + own_b),
            };
            (va - r * vb).powi(2) * rin2 + own_a + r * r * own_b
        }
    };
    let enbw = sc.lockin.enbw;
    let noise_rms = sc.balance.k1 * density2.sqrt() * enbw.sqrt();
    Ok(SensitivityReport {
        eta: noise_rms / (slope.slope.abs() * sc.spin.gamma_e * enbw.sqrt()),
        noise_rms,
        slope: slope.slope,
        enbw,
        gamma_used: sc.spin.gamma_e,
        mode,
        estimator: NoiseEstimator::StdDev,
        samples: 0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanPoint {
    pub index: usize,
    pub parameter: f64,
    pub seed: u64,
    pub report: SensitivityReport,
}

/// One sensitivity estimate per grid value, run in parallel.
pub fn run_param_scan(sc: &Scenario) -> Result<Vec<ScanPoint>> {
    sc.validate_core()?;
    sc.validate_scan()?;
    let seed = sc.seed()?;
    let axis = sc.scan.axis;
    let points: Vec<(usize, Scenario)> = sc
        .scan
        .grid
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = apply_axis(sc, axis, v);
            s.validate_core().and_then(|_| s.validate_sensitivity()).map_err(|e| {
                NvError::config(format!("scan.grid[{i}]"), format!("{} = {v}: {e}", axis.label()))
            })?;
            Ok((i, s))
        })
        .collect::<Result<_>>()?;
    points
        .par_iter()
        .map(|(i, s)| {
            let point_seed = derive_seed(seed, *i as u64);
            let report = match sc.scan.path {
                ScanPath::Simulated => run_sensitivity(s, sc.scan.mode, point_seed)?.report,
                ScanPath::Analytic => analytic_sensitivity(s, sc.scan.mode)?,
            };
            Ok(ScanPoint {
                index: *i,
                parameter: sc.scan.grid[*i],
                seed: point_seed,
                report,
            })
        })
        .collect()
}

pub fn cmd_param_scan(sc: &Scenario, opts: &RunOptions) -> Result<CommandOutput> {
    let points = run_param_scan(sc)?;
    let axis = sc.scan.axis;
    let meta = vec![
        ("axis", axis.label().to_string()),
        ("mode", sc.scan.mode.to_string()),
        ("path", format!("{:?}", sc.scan.path).to_lowercase()),
        ("seed", sc.seed()?.to_string()),
    ];
    let mut csv = csv_header(opts, &meta, "parameter,eta_t_per_rthz,slope_v_per_hz,noise_rms_v,enbw_hz");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            sci(p.parameter),
            sci(p.report.eta),
            sci(p.report.slope),
            num(p.report.noise_rms),
            sci(p.report.enbw)
        ));
    }
    let best = points
        .iter()
        .min_by(|a, b| a.report.eta.total_cmp(&b.report.eta))
        .expect("grid is non-empty");
    Ok(CommandOutput {
        artifacts: vec![
            Artifact {
                name: format!("scan_{}.csv", axis.label()),
                contents: csv,
            },
            Artifact {
                name: format!("scan_{}.json", axis.label()),
                contents: json(&points),
            },
        ],
        summary: format!(
            "{} points; best {} = {} at {:.3} nT/√Hz",
            points.len(),
            axis.label(),
            best.parameter,
            best.report.eta * 1e9
        ),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AxisResult {
    pub axis: NvAxis,
    pub plus_center_hz: f64,
    pub minus_center_hz: f64,
    pub splitting_hz: f64,
    pub expected_splitting_hz: f64,
    pub sign: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionReport {
    pub seed: u64,
    pub truth_tesla: [f64; 3],
    pub field: ReconstructedField,
    pub error_tesla: [f64; 3],
    pub error_norm_tesla: f64,
    pub axes: Vec<AxisResult>,
    pub fit_iterations: usize,
    pub fit_residual_rms: f64,
}

pub struct ReconstructionRun {
    pub report: ReconstructionReport,
    pub spectrum: OdmrCurve,
    pub fit: TripletFit,
}

/// Sweeps the full spectrum with a CW drive, fits every resolvable line
/// seeded from the known bias field, and inverts the `m_I = 0` splittings.
pub fn run_reconstruct(sc: &Scenario) -> Result<ReconstructionRun> {
    sc.validate_core()?;
    sc.validate_reconstruct()?;
    let seed = sc.seed()?;
    let p = &sc.spin;
    let rc = &sc.reconstruct;
    let predicted = transition_frequencies(p, &sc.field)?;
    let w = p.effective_hwhm(sc.mw.power);
    let c = p.effective_contrast(sc.mw.power);

    let reach = predicted
        .centers()
        .map(|f| (f - p.d_zfs).abs())
        .fold(0.0, f64::max)
        + rc.margin * w;
    let step = rc.step_fraction * w;
    let points = 2 * (reach / step).ceil() as usize + 1;
    let (start, stop) = (p.d_zfs - reach, p.d_zfs + reach);
    if start < MW_RANGE.0 || stop > MW_RANGE.1 {
        return Err(NvError::config("reconstruct", "sweep leaves the 2.5-3.0 GHz range"));
    }
    let plan = make_sweep(start, stop, points, rc.dwell)?;

    let series = plan
        .freqs
        .par_iter()
        .enumerate()
        .map(|(i, &f)| {
            let mut chain = sc.chain(run_seed(seed, TAG_RECONSTRUCT, i as u64));
            chain.mw.hs_on = false;
            chain.mw = chain.mw.cw().with_center(f);
            chain.simulate(plan.dwell)
        })
        .collect::<Result<Vec<_>>>()?;
    // balanced levels with the nominal reference added back, so common-mode
    // laser noise cancels while the curve stays normalized to the
    // off-resonant level
    let balance = resolve_balance(sc, seed)?;
    let reference = sc.balance.k1 * sc.detector.volts_a();
    let mut spectrum = odmr_integrate(&series, &plan, &balance, Baseline::Value(reference))?;
    drop(series);
    let offset = balance.k2 * sc.detector.volts_b() / reference;
    for v in &mut spectrum.values {
        *v += offset;
    }

    // one triplet per (axis, branch), seeded at the predicted m_I = 0 lines
    let slots: Vec<(NvAxis, Branch, f64)> = NvAxis::ALL
        .iter()
        .flat_map(|&axis| [Branch::Minus, Branch::Plus].map(|b| (axis, b)))
        .map(|(axis, branch)| {
            predicted
                .line(axis, branch, 0)
                .map(|l| (axis, branch, l.center))
                .ok_or_else(|| NvError::Underdetermined(format!("no {branch:?} line on axis {axis}")))
        })
        .collect::<Result<_>>()?;
    let starts: Vec<f64> = slots.iter().map(|s| s.2).collect();
    let fit = fit_triplets(&spectrum, &starts, p.a_hf, w, c).map_err(|e| match e {
        NvError::FitFailed {
            reason,
            iterations,
            residual_rms,
            last,
        } => {
            let mut crowded: Vec<&str> = slots
                .iter()
                .filter(|a| slots.iter().any(|b| a.0 != b.0 && (a.2 - b.2).abs() < w))
                .map(|a| a.0.label())
                .collect();
            crowded.dedup();
            let reason = if crowded.is_empty() {
                reason
            } else {
                format!("{reason}; unresolved lines on axes {}", crowded.join(", "))
            };
            NvError::FitFailed {
                reason,
                iterations,
                residual_rms,
                last,
            }
        }
        other => other,
    })?;
    for (&(axis, _, start), &got) in slots.iter().zip(&fit.centers) {
        if (got - start).abs() > 2.0 * w {
            return Err(NvError::FitFailed {
                reason: format!("axis {axis}: fitted line moved {:.0} Hz from its prediction", got - start),
                iterations: fit.iterations,
                residual_rms: fit.residual_rms,
                last: Vec::new(),
            });
        }
    }
    let fitted_center = |axis: NvAxis, branch: Branch| -> f64 {
        slots
            .iter()
            .zip(&fit.centers)
            .find(|(s, _)| s.0 == axis && s.1 == branch)
            .map(|(_, &c)| c)
            .unwrap_or(f64::NAN)
    };

    let signs = projection_signs(&sc.field)?;
    let mut axes = Vec::new();
    let mut splittings = Vec::new();
    for axis in NvAxis::ALL {
        let plus = fitted_center(axis, Branch::Plus);
        let minus = fitted_center(axis, Branch::Minus);
        let expected = predicted.line(axis, Branch::Plus, 0).map(|l| l.center).unwrap_or(0.0)
            - predicted.line(axis, Branch::Minus, 0).map(|l| l.center).unwrap_or(0.0);
        splittings.push(AxisSplitting {
            axis,
            splitting: plus - minus,
        });
        axes.push(AxisResult {
            axis,
            plus_center_hz: plus,
            minus_center_hz: minus,
            splitting_hz: plus - minus,
            expected_splitting_hz: expected,
            sign: signs[axis.index()],
        });
    }
    let field = reconstruct_field_with(&splittings, &signs, p, rc.threshold)?;
    let truth = sc.field.b_xyz;
    let error_tesla = [0, 1, 2].map(|j| field.b_xyz[j] - truth[j]);
    let error_norm_tesla = error_tesla.iter().map(|e| e * e).sum::<f64>().sqrt();
    Ok(ReconstructionRun {
        report: ReconstructionReport {
            seed,
            truth_tesla: truth,
            field,
            error_tesla,
            error_norm_tesla,
            axes,
            fit_iterations: fit.iterations,
            fit_residual_rms: fit.residual_rms,
        },
        spectrum,
        fit,
    })
}

pub fn cmd_reconstruct(sc: &Scenario, opts: &RunOptions) -> Result<CommandOutput> {
    let run = run_reconstruct(sc)?;
    let r = &run.report;
    let meta = vec![("seed", r.seed.to_string()), ("dwell_s", num(sc.reconstruct.dwell))];
    let mut spectrum = csv_header(opts, &meta, "freq_hz,normalized");
    for (f, v) in run.spectrum.freqs.iter().zip(&run.spectrum.values) {
        spectrum.push_str(&format!("{},{}\n", sci(*f), num(*v)));
    }
    let mut axes = csv_header(opts, &meta, "axis,splitting_hz,expected_hz,sign");
    for a in &r.axes {
        axes.push_str(&format!(
            "{},{},{},{}\n",
            a.axis.label(),
            sci(a.splitting_hz),
            sci(a.expected_splitting_hz),
            a.sign
        ));
    }
    let b = r.field.b_xyz;
    let summary = format!(
        "B = ({:.4e}, {:.4e}, {:.4e}) T, error {:.3} nT, residual {:.1} Hz{}",
        b[0],
        b[1],
        b[2],
        r.error_norm_tesla * 1e9,
        r.field.residual,
        if r.field.inconsistent { " (inconsistent)" } else { "" }
    );
    Ok(CommandOutput {
        artifacts: vec![
            Artifact {
                name: "reconstruct.json".into(),
                contents: json(r),
            },
            Artifact {
                name: "reconstruct_spectrum.csv".into(),
                contents: spectrum,
            },
            Artifact {
                name: "reconstruct_axes.csv".into(),
                contents: axes,
            },
        ],
        summary,
    })
}

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};

use nvmag::analysis::SensitivityMode;
use nvmag::commands::{self, CommandOutput, RunOptions};
use nvmag::scenario::{ScanAxis, Scenario};
use nvmag::NvError;

#[derive(Parser)]
#[command(name = "nvmag", version, about = "NV-diamond magnetometer signal-chain simulator")]
struct Cli {
    /// Scenario file (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Omit the generation-time comment line from CSV files.
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Unbalanced,
    Balanced,
    Electronic,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    #[value(name = "f_m")]
    FM,
    Power,
    Depth,
    Enbw,
}

#[derive(Subcommand)]
enum Command {
    /// ODMR and lock-in sweeps with the hyperfine comb off and on.
    SweepOdmr,
    /// Off-resonant noise record and sensitivity report.
    Sensitivity {
        #[arg(long, value_enum, default_value = "all")]
        mode: ModeArg,
    },
    /// Sensitivity across a parameter grid.
    ParamScan {
        #[arg(long, value_enum)]
        axis: Option<AxisArg>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Vector field from fitted splittings on all four axes.
    Reconstruct,
    /// Check a scenario file and print it with defaults filled in.
    ValidateConfig,
}

fn load(cli: &Cli) -> Result<Scenario, NvError> {
    let mut sc = match &cli.config {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default(),
    };
    if cli.seed.is_some() {
        sc.seed = cli.seed;
    }
    Ok(sc)
}

fn run(cli: &Cli) -> Result<(CommandOutput, bool), NvError> {
    let mut sc = load(cli)?;
    let opts = RunOptions {
        timestamp: (!cli.no_timestamp).then(|| {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            format!("unix_time={secs}")
        }),
    };
    if let Command::ParamScan { axis, grid } = &cli.command {
        if let Some(a) = axis {
            sc.scan.axis = match a {
                AxisArg::FM => ScanAxis::FM,
                AxisArg::Power => ScanAxis::Power,
                AxisArg::Depth => ScanAxis::Depth,
                AxisArg::Enbw => ScanAxis::Enbw,
            };
        }
        if let Some(g) = grid {
            sc.scan.grid = g.clone();
        }
    }
    let out = match &cli.command {
        Command::SweepOdmr => commands::cmd_sweep_odmr(&sc, &opts)?,
        Command::Sensitivity { mode } => {
            let modes = match mode {
                ModeArg::Unbalanced => vec![SensitivityMode::Unbalanced],
                ModeArg::Balanced => vec![SensitivityMode::Balanced],
                ModeArg::Electronic => vec![SensitivityMode::Electronic],
                ModeArg::All => SensitivityMode::ALL.to_vec(),
            };
            commands::cmd_sensitivity(&sc, &modes, &opts)?
        }
        Command::ParamScan { .. } => commands::cmd_param_scan(&sc, &opts)?,
        Command::Reconstruct => commands::cmd_reconstruct(&sc, &opts)?,
        Command::ValidateConfig => commands::cmd_validate_config(&sc)?,
    };
    Ok((out, matches!(cli.command, Command::ValidateConfig)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let (output, to_stdout) = match run(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_numeric() { 3 } else { 2 });
        }
    };
    if to_stdout && cli.out.is_none() {
        for a in &output.artifacts {
            print!("{}", a.contents);
        }
        eprintln!("{}", output.summary);
        return ExitCode::SUCCESS;
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| load(&cli).ok().and_then(|s| s.output_dir).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return ExitCode::from(2);
    }
    for a in &output.artifacts {
        let path = dir.join(&a.name);
        if let Err(e) = std::fs::write(&path, &a.contents) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
        eprintln!("wrote {}", path.display());
    }
    println!("{}", output.summary);
    ExitCode::SUCCESS
}

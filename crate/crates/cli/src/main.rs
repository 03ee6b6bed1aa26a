use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use zodiaq_core::control::{allocation_matrix, condition_number};
use zodiaq_core::dynamics::RPM;
use zodiaq_core::kinematics::zodiaq::face_table;
use zodiaq_core::scenario::calibrate::{calibrate_shell_drag, calibrate_thrust};
use zodiaq_core::scenario::plot::emit_plots;
use zodiaq_core::scenario::{controller_model, Prepared, RunError, ScenarioConfig, ScenarioKind};
use zodiaq_core::timeseries::TimeSeriesLog;

/// Stdout that ends the process quietly when the reader goes away (`| head`).
fn emit(args: std::fmt::Arguments) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_fmt(args).and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: stdout: {e}");
        std::process::exit(1);
    }
}

macro_rules! out {
    ($($t:tt)*) => { emit(format_args!($($t)*)) };
}

macro_rules! outln {
    ($($t:tt)*) => { emit(format_args!("{}\n", format_args!($($t)*))) };
}

/// Where run outputs go when `--out` is not given.
const OUTPUT_ENV: &str = "ZODIAQ_OUTPUT_DIR";

const EXIT_RUN: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "zodiaq", version, about = "Digital twin of a 12-flagella underwater drone")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario config.
    Run {
        config: PathBuf,
        /// Output directory (default: $ZODIAQ_OUTPUT_DIR/<name>, or runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write SVG plots.
        #[arg(long)]
        plots: bool,
    },
    /// Run every scenario config in a directory.
    Batch {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        plots: bool,
    },
    /// Write SVG plots for a CSV log.
    Plot {
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and report every problem found.
    Validate { config: PathBuf },
    /// Print the face table, pairs and spin pattern as JSON.
    DumpGeometry {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit thrust and reaction coefficients on a clamped build.
    CalibrateThrust {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        motor: usize,
        /// Motor speed in rpm (default: the speed cap).
        #[arg(long)]
        rpm: Option<f64>,
        #[arg(long, default_value_t = 3.0)]
        settle_turns: f64,
        #[arg(long, default_value_t = 3.0)]
        average_turns: f64,
    },
    /// Fit the shell drag to the top translational speed and yaw rate.
    CalibrateShellDrag {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
        #[arg(long, default_value_t = 24.0)]
        duration: f64,
        #[arg(long, default_value_t = 8.0)]
        window: f64,
    },
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUN })
}

fn load(path: &Path) -> Result<ScenarioConfig, RunError> {
    Ok(ScenarioConfig::load(path)?)
}

fn base_config(path: Option<&Path>) -> Result<ScenarioConfig, RunError> {
    match path {
        Some(p) => load(p),
        None => Ok(ScenarioConfig::new("calibration", ScenarioKind::OpenloopFig2c { motors: Vec::new() }, 1.0)),
    }
}

fn run_one(path: &Path, out: Option<PathBuf>, plots: bool) -> Result<String, RunError> {
    let prepared = Prepared::new(load(path)?)?;
    let started = std::time::Instant::now();
    let outcome = prepared.run()?;
    let dir = out.unwrap_or_else(|| output_root().join(&outcome.summary.name));
    let mut files = outcome.write(&dir)?;
    if plots {
        for (name, log) in &outcome.logs {
            files.extend(emit_plots(log, name, &dir).map_err(|e| RunError::Io { path: dir.clone(), source: std::io::Error::other(e.to_string()) })?);
        }
    }
    let mut report = format!("{} ({}) finished in {:.1} s\n", outcome.summary.name, outcome.summary.scenario, started.elapsed().as_secs_f64());
    for (k, v) in &outcome.summary.metrics {
        report.push_str(&format!("  {k} = {v:.6}\n"));
    }
    let a = &outcome.summary.actuation;
    if a.control_ticks > 0 {
        report.push_str(&format!("  saturated ticks {}/{}; max command {:.4} rad/s (cap {:.4})\n", a.saturated_ticks, a.control_ticks, a.max_command, a.cap));
    }
    for f in files {
        report.push_str(&format!("  wrote {}\n", f.display()));
    }
    Ok(report)
}

fn is_scenario(path: &Path) -> bool {
    std::fs::read_to_string(path).map(|s| s.lines().any(|l| l.trim() == "[scenario]")).unwrap_or(false)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, plots } => match run_one(&config, out, plots) {
            Ok(report) => {
                out!("{report}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Batch { dir, jobs, plots } => {
            let mut configs: Vec<PathBuf> = match std::fs::read_dir(&dir) {
                Ok(entries) => {
                    entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "toml") && is_scenario(p)).collect()
                }
                Err(e) => {
                    eprintln!("error: {}: {e}", dir.display());
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            configs.sort();
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_RUN);
                }
            };
            let results: Vec<(PathBuf, Result<String, RunError>)> = pool.install(|| configs.par_iter().map(|p| (p.clone(), run_one(p, None, plots))).collect());
            let mut code = 0;
            for (path, r) in results {
                match r {
                    Ok(report) => out!("{report}"),
                    Err(e) => {
                        eprintln!("{}: {e}", path.display());
                        code = code.max(if e.is_config() { EXIT_CONFIG } else { EXIT_RUN });
                    }
                }
            }
            ExitCode::from(code)
        }
        Command::Plot { log, out } => {
            let data = match TimeSeriesLog::load_csv(&log) {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("error: {}: {e}", log.display());
                    return ExitCode::from(EXIT_RUN);
                }
            };
            let dir = out.unwrap_or_else(|| log.parent().map(Path::to_path_buf).unwrap_or_default());
            let stem = log.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "log".into());
            match emit_plots(&data, &stem, &dir) {
                Ok(files) => {
                    for f in files {
                        outln!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_RUN)
                }
            }
        }
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                let diagnostics = cfg.validate();
                if diagnostics.is_empty() {
                    match Prepared::new(cfg) {
                        Ok(p) => {
                            let a = allocation_matrix(&p.controller.model).expect("checked");
                            outln!("{}: ok (allocation condition number {:.3})", config.display(), condition_number(&a));
                            ExitCode::SUCCESS
                        }
                        Err(e) => fail(&e),
                    }
                } else {
                    for d in &diagnostics {
                        outln!("{}: {d}", config.display());
                    }
                    ExitCode::from(EXIT_CONFIG)
                }
            }
            Err(e) => fail(&e),
        },
        Command::DumpGeometry { config } => {
            let result = base_config(config.as_deref()).and_then(|cfg| {
                let model = controller_model(&cfg)?;
                let faces = face_table(cfg.build.edge_length);
                let a = allocation_matrix(&model)?;
                Ok(json!({
                    "edge_length": faces.edge_length,
                    "inradius": faces.inradius,
                    "faces": faces.faces.iter().map(|f| json!({
                        "motor": f.motor,
                        "center": f.center,
                        "normal": f.normal,
                        "spin": model.spin[f.motor - 1],
                    })).collect::<Vec<_>>(),
                    "pairs": model.pairs,
                    "center_of_mass": [model.com.x, model.com.y, model.com.z],
                    "allocation_condition": condition_number(&a),
                }))
            });
            match result {
                Ok(v) => {
                    outln!("{}", serde_json::to_string_pretty(&v).expect("json"));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::CalibrateThrust { config, motor, rpm, settle_turns, average_turns } => {
            let result = base_config(config.as_deref()).and_then(|cfg| {
                let speed = rpm.map(|r| r * RPM).unwrap_or(cfg.control.cap());
                calibrate_thrust(&cfg, motor, speed, settle_turns, average_turns)
            });
            match result {
                Ok(c) => {
                    outln!("{}", serde_json::to_string_pretty(&c).expect("json"));
                    outln!("\n[control]\nthrust_coefficient = {:.4e}\nreaction_coefficient = {:.4e}", c.thrust_coefficient, c.reaction_coefficient);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::CalibrateShellDrag { config, iterations, duration, window } => {
            match base_config(config.as_deref()).and_then(|cfg| calibrate_shell_drag(&cfg, iterations, duration, window)) {
                Ok(c) => {
                    outln!("{}", serde_json::to_string_pretty(&c).expect("json"));
                    let list = |v: &[f64; 6]| v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ");
                    outln!("\n[hydro]\nshell_drag = [{}]\n\n[control]\ndrag = [{}]", list(&c.shell_drag), list(&c.control_drag));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}

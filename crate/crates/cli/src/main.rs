//! `fovctl`: run, compare and self-check the adaptive camera-control simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use fovctl::scenario::{
    run_calibration, run_scenario_with, write_summary, write_trace, CalibrationConfig, EstimatedSet, ScenarioConfig,
};
use fovctl::Error;

#[derive(Parser)]
#[command(name = "fovctl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and report its summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        adaptive: Option<OnOff>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-tick trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Summary JSON. Printed to stdout when omitted.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Store the full parameter estimate in every trace row.
        #[arg(long)]
        dump_params: bool,
    },
    /// Run the finite-difference Jacobian suites; exits non-zero on any failure.
    CheckJacobians {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Paired adaptive and non-adaptive runs with the same seed.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Frozen-pose extrinsics calibration.
    Calibrate {
        /// Scenario config for models, gains and intrinsics; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        ticks: usize,
        /// Adapt only the camera effector pose.
        #[arg(long)]
        extrinsics_only: bool,
    },
    /// Print the default scenario config as JSON.
    DefaultConfig,
}

fn load(path: &Path, seed: Option<u64>) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            adaptive,
            seed,
            trace,
            summary,
            dump_params,
        } => {
            let mut cfg = load(&config, seed)?;
            if let Some(a) = adaptive {
                cfg.adaptive = matches!(a, OnOff::On);
            }
            let out = run_scenario_with(&cfg, dump_params)?;
            if let Some(path) = &trace {
                write_trace(&out.trace, path)?;
            }
            match &summary {
                Some(path) => write_summary(&out.summary, path)?,
                None => println!("{}", serde_json::to_string_pretty(&out.summary)?),
            }
            eprintln!(
                "duty ratio {:.1}% over {} ticks, max deviation {:.3} deg",
                100.0 * out.summary.duty_ratio,
                out.summary.ticks,
                out.summary.max_deviation_deg
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckJacobians { trials, seed } => {
            let results = fovctl::check::run_all(seed, trials)?;
            let mut ok = true;
            for r in &results {
                println!(
                    "{:<4} {:<12} worst {:.3e} (tol {:.0e}, {} trials)",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.worst,
                    r.tolerance,
                    r.trials
                );
                ok &= r.passed();
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Compare { config, seed } => {
            let mut cfg = load(&config, seed)?;
            let mut duty = [0.0; 2];
            for (slot, adaptive) in [true, false].into_iter().enumerate() {
                cfg.adaptive = adaptive;
                let s = run_scenario_with(&cfg, false)?.summary;
                println!(
                    "{:<13} duty {:>5.1}%  max deviation {:.3} deg  min est. margin {:.2e}  final |y~| {}",
                    if adaptive { "adaptive" } else { "non-adaptive" },
                    100.0 * s.duty_ratio,
                    s.max_deviation_deg,
                    s.min_estimated_margin,
                    s.final_y_error.map_or("-".into(), |e| format!("{e:.2e}"))
                );
                duty[slot] = s.duty_ratio;
            }
            println!("difference    {:+.1} points", 100.0 * (duty[0] - duty[1]));
            Ok(ExitCode::SUCCESS)
        }
        Command::Calibrate {
            config,
            ticks,
            extrinsics_only,
        } => {
            let cfg = match &config {
                Some(p) => load(p, None)?,
                None => ScenarioConfig::default(),
            };
            let cal = CalibrationConfig {
                ticks,
                estimate: if extrinsics_only {
                    EstimatedSet::CameraExtrinsics
                } else {
                    EstimatedSet::All
                },
                ..CalibrationConfig::default()
            };
            let r = run_calibration(&cfg, &cal)?;
            println!("initial |y~| {:.3e}", r.residuals.first().copied().unwrap_or(f64::NAN));
            println!("final   |y~| {:.3e} (worst viewpoint)", r.max_final_residual());
            match r.converged_at {
                Some(t) => println!("below {:.0e} from tick {t}", fovctl::scenario::CALIBRATION_TOL),
                None => println!("not below {:.0e} by the last tick", fovctl::scenario::CALIBRATION_TOL),
            }
            println!(
                "camera orientation error {:.3} -> {:.3} deg",
                r.initial_rotation_error_deg, r.final_rotation_error_deg
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::DefaultConfig => {
            println!("{}", ScenarioConfig::default().to_json());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    match run(cli).context("fovctl") {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::InfeasibleInit(_)) => ExitCode::from(2),
                Some(Error::QpBudgetExceeded { .. }) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

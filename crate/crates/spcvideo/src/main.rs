use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spcvideo::config::ExperimentConfig;
use spcvideo::pipeline::{
    cmd_flow, cmd_pipeline, cmd_preview, cmd_reconstruct, cmd_simulate, cmd_sweep, cmd_tradeoff,
    describe_file, Arm, SweepAxis,
};
use spcvideo::Error;

/// Single-pixel camera video simulation and reconstruction toolkit.
#[derive(Parser)]
#[command(name = "spcvideo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration file (`key = value` lines with [sections]).
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate acquisition: write measurement and ground-truth files.
    Simulate(ConfigArg),
    /// Compute the preview sequence from the measurement file.
    Preview(ConfigArg),
    /// Estimate optical flow between preview frames; write flow files.
    Flow(ConfigArg),
    /// Recover full-resolution video with one reconstruction arm.
    Reconstruct {
        #[command(flatten)]
        config: ConfigArg,
        /// muvi | noflow | framewise | nyquist
        #[arg(long, default_value = "muvi")]
        arm: String,
    },
    /// Run preview, flow and the requested arms end to end; write metrics.
    Pipeline {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated arms to run.
        #[arg(long, default_value = "muvi,noflow,framewise")]
        arms: String,
    },
    /// Preview-quality grid over window lengths and object speeds.
    Tradeoff {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated window lengths (powers of four).
        #[arg(long)]
        windows: String,
        /// Comma-separated speeds (pixels per scene speed window).
        #[arg(long)]
        speeds: String,
    },
    /// RSNR of all arms across a noise or compression sweep.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// noise | compression
        #[arg(long)]
        axis: String,
        /// Comma-separated values ("inf" allowed on the noise axis).
        #[arg(long)]
        values: String,
    },
    /// Print the header of a toolkit file (.csmv, .csms, .csfl).
    Info { path: PathBuf },
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| Error::InvalidParameter(format!("invalid {what} value '{v}'")))
        })
        .collect()
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(cfg) => {
            let cfg = ExperimentConfig::parse_file(&cfg.config)?;
            let achieved = cmd_simulate(&cfg)?;
            match achieved {
                Some(snr) => println!("wrote measurements; achieved SNR {snr:.2} dB"),
                None => println!("wrote noiseless measurements"),
            }
        }
        Command::Preview(cfg) => {
            let cfg = ExperimentConfig::parse_file(&cfg.config)?;
            let previews = cmd_preview(&cfg)?;
            println!(
                "wrote {} preview frames at {}x{}",
                previews.frames(),
                previews.n_l(),
                previews.n_l()
            );
        }
        Command::Flow(cfg) => {
            let cfg = ExperimentConfig::parse_file(&cfg.config)?;
            let constraints = cmd_flow(&cfg)?;
            println!("wrote flow fields; {constraints} brightness-constancy constraints");
        }
        Command::Reconstruct { config, arm } => {
            let cfg = ExperimentConfig::parse_file(&config.config)?;
            let arm = Arm::parse(&arm)?;
            let snr = cmd_reconstruct(&cfg, arm)?;
            println!("{}: RSNR {snr:.2} dB", arm.name());
        }
        Command::Pipeline { config, arms } => {
            let cfg = ExperimentConfig::parse_file(&config.config)?;
            let arms: Vec<Arm> = arms
                .split(',')
                .map(|a| Arm::parse(a.trim()))
                .collect::<Result<_, _>>()?;
            for (arm, snr) in cmd_pipeline(&cfg, &arms)? {
                println!("{}: RSNR {snr:.2} dB", arm.name());
            }
        }
        Command::Tradeoff {
            config,
            windows,
            speeds,
        } => {
            let cfg = ExperimentConfig::parse_file(&config.config)?;
            let windows: Vec<usize> = parse_list(&windows, "window")?;
            let speeds: Vec<f64> = parse_list(&speeds, "speed")?;
            let cells = cmd_tradeoff(&cfg, &windows, &speeds)?;
            println!("wrote tradeoff.csv with {} cells", cells.len());
        }
        Command::Sweep {
            config,
            axis,
            values,
        } => {
            let cfg = ExperimentConfig::parse_file(&config.config)?;
            let axis = SweepAxis::parse(&axis)?;
            let values: Vec<f64> = values
                .split(',')
                .map(|v| v.trim())
                .filter(|v| !v.is_empty())
                .map(|v| {
                    if v == "inf" {
                        Ok(f64::INFINITY)
                    } else {
                        v.parse::<f64>().map_err(|_| {
                            Error::InvalidParameter(format!("invalid sweep value '{v}'"))
                        })
                    }
                })
                .collect::<Result<_, _>>()?;
            let rows = cmd_sweep(&cfg, axis, &values)?;
            println!("wrote sweep.csv with {} rows", rows.len());
        }
        Command::Info { path } => {
            println!("{}", describe_file(&path)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Worker count is the only environment knob.
    if let Ok(workers) = std::env::var("SPCVIDEO_WORKERS") {
        if let Ok(count) = workers.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(count)
                .build_global();
        }
    }
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config { .. } | Error::InvalidParameter(_) | Error::DimensionMismatch(_) => {
                    2
                }
                Error::Io { .. } | Error::Format { .. } => 3,
                Error::Numerical(_) => 4,
            };
            ExitCode::from(code)
        }
    }
}

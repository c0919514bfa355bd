use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use pointdet::pipeline::{self, PipelineConfig, Report};

#[derive(Parser)]
#[command(version, about = "Synthetic benchmarks and oracle checks for point-based two-stage 3D detection")]
struct Cli {
    /// JSON pipeline config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; reports go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic scenes in the benchmark file layout.
    Synth,
    /// Proposal recall of sphere and cuboid anchor modes.
    Recall {
        #[arg(long)]
        scenes: Option<PathBuf>,
    },
    /// AP of each NMS ranking rule on synthetic detection sets.
    NmsCompare,
    /// AP of detection files against labelled scenes.
    EvalAp {
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Pool proposals and check routing and occupancy.
    PoolCheck {
        #[arg(long)]
        scenes: Option<PathBuf>,
    },
    /// Run the oracle suites; exits non-zero on any failure.
    Selfcheck,
}

fn emit<T: Serialize>(name: &str, config: &PipelineConfig, result: T) -> pointdet::Result<()> {
    let report = Report::new(name, config, result);
    match &config.paths.out {
        Some(out) => {
            let path = report.write(out)?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn run(cli: Cli) -> pointdet::Result<bool> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if cli.workers.is_some() {
        config.workers = cli.workers;
    }
    if cli.out.is_some() {
        config.paths.out = cli.out.clone();
    }
    match &cli.command {
        Command::Recall { scenes } | Command::PoolCheck { scenes } if scenes.is_some() => config.paths.scenes = scenes.clone(),
        Command::EvalAp { scenes, detections } => {
            if scenes.is_some() {
                config.paths.scenes = scenes.clone();
            }
            if detections.is_some() {
                config.paths.detections = detections.clone();
            }
        }
        _ => {}
    }
    config.validate()?;

    let config = &config;
    pipeline::with_workers(config.workers, || match cli.command {
        Command::Synth => {
            let out = config
                .paths
                .out
                .as_deref()
                .ok_or_else(|| pointdet::Error::InvalidConfig("synth needs --out".into()))?;
            let manifest = pipeline::cmd_synth(config, out)?;
            emit("synth", config, manifest)?;
            Ok(true)
        }
        Command::Recall { .. } => emit("recall", config, pipeline::cmd_recall(config)?).map(|_| true),
        Command::NmsCompare => emit("nms-compare", config, pipeline::cmd_nms_compare(config)?).map(|_| true),
        Command::EvalAp { .. } => emit("eval-ap", config, pipeline::cmd_eval_ap(config)?).map(|_| true),
        Command::PoolCheck { .. } => emit("pool-check", config, pipeline::cmd_pool_check(config)?).map(|_| true),
        Command::Selfcheck => {
            let report = pipeline::cmd_selfcheck(config)?;
            for c in &report.checks {
                eprintln!(
                    "{} {:<30} max_error {:.3e} (tol {:.0e})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.max_error,
                    c.tolerance
                );
            }
            let passed = report.passed;
            emit("selfcheck", config, report)?;
            Ok(passed)
        }
    })?
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

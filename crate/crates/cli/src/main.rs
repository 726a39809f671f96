//! `bevmap`: simulate scenes, run the mapping pipeline, evaluate maps and
//! benchmark detectors.

use std::path::PathBuf;
use std::process::ExitCode;

use bevmap_core::detect::DetectorKind;
use bevmap_core::sim::ScenarioKind;
use bevmap_core::Error;
use clap::{Args, Parser, Subcommand};

mod commands;
mod output;

#[derive(Parser)]
#[command(name = "bevmap", version, about = "Wall and column mapping from LiDAR bird's-eye views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate frames, ground truth and box labels for a scenario.
    Simulate(SimulateArgs),
    /// Run the pipeline over a recorded sequence.
    Run(RunArgs),
    /// Score a map against ground truth.
    Eval(EvalArgs),
    /// Time the pipeline stages per detector.
    Bench(BenchArgs),
    /// Flatten one frame or CSV cloud into a BEV raster.
    Flatten(FlattenArgs),
}

fn parse_detector(s: &str) -> Result<DetectorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_scenario, default_value = "garage")]
    pub scenario: ScenarioKind,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seconds between frames.
    #[arg(long, default_value_t = 0.1)]
    pub period: f64,
    /// Dropped glass beams return a mirrored ghost.
    #[arg(long)]
    pub glass_ghost: bool,
    /// Sensor, raster and speckle settings (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace the scenario geometry with a world file.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Replace the scenario path with a trajectory file.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Also write every BEV raster as PBM with its sidecar.
    #[arg(long)]
    pub bev: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RunArgs {
    /// Directory with `trajectory.json` and `frames/`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_detector)]
    pub detector: Option<DetectorKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Call the stages one after another on one thread.
    #[arg(long)]
    pub sequential: bool,
    /// Block instead of dropping frames, and replay without pacing.
    #[arg(long)]
    pub lossless: bool,
    /// Box detections for the OBB detector; defaults to `<input>/labels.jsonl`.
    #[arg(long)]
    pub obb_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// `map.json` written by `run`.
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Match thresholds (JSON).
    #[arg(long)]
    pub criteria: Option<PathBuf>,
    /// Score unconfirmed tracks too.
    #[arg(long)]
    pub all_tracks: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated; all four when omitted.
    #[arg(long, value_parser = parse_detector, value_delimiter = ',')]
    pub detectors: Vec<DetectorKind>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Use only the first N frames.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub obb_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FlattenArgs {
    /// A `.bin` frame or an `x,y,z` CSV cloud.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// 1 for bad input or configuration, 2 for failures while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Parse { .. } | Error::Format(_) | Error::Json(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BEVMAP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let r = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Run(a) => commands::run(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Flatten(a) => commands::flatten(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

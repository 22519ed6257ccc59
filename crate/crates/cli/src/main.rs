//! Multi-command entry point for the reconstruction and localization
//! pipeline: `synth`, `reconstruct`, `localize`, `eval`.
//!
//! Exit codes: 0 success, 1 usage, 2 i/o or format, 3 tracking failure,
//! 4 localization failure.

mod error;
mod eval_cmd;
mod localize_cmd;
mod reconstruct_cmd;
mod synth_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;
use eval_cmd::TrajectoryMetric;
use surfelscope_core::localization::LocalizeConfig;

#[derive(Parser)]
#[command(
    name = "surfelscope",
    about = "Stereo dense reconstruction, camera relocalization, and trajectory evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stereo dataset with exact ground truth.
    Synth(SynthArgs),
    /// Reconstruct a surfel model and camera trajectory from stereo frames.
    Reconstruct(ReconstructArgs),
    /// Localize query images against a saved map.
    Localize(LocalizeArgs),
    /// Trajectory and reconstruction metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON scene/trajectory/camera spec; defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override the scene and trajectory seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Dataset directory containing left/ and right/ frame PNGs.
    #[arg(long)]
    input: PathBuf,
    /// Intrinsics file; defaults to <input>/intrinsics.txt.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Depth provider: 'zncc' or 'files:<dir>' with precomputed maps.
    #[arg(long, default_value = "zncc")]
    depth: String,
    /// JSON config file (defaults < config file < flags).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_disparity: Option<u32>,
    #[arg(long)]
    window_radius: Option<u32>,
    #[arg(long)]
    zncc_threshold: Option<f64>,
    /// Left-right consistency tolerance, px.
    #[arg(long)]
    lr_tol: Option<f64>,
    /// Photometric term weight in [0, 10].
    #[arg(long)]
    w_photo: Option<f64>,
    #[arg(long)]
    pyramid_levels: Option<u32>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Every stride-th frame becomes a map keyframe.
    #[arg(long)]
    keyframe_stride: Option<usize>,
    /// Association depth gate, mm.
    #[arg(long)]
    gamma_depth: Option<f64>,
    /// Association normal-angle gate, degrees.
    #[arg(long)]
    gamma_theta: Option<f64>,
    /// Confidence floor for exported points.
    #[arg(long)]
    min_export_confidence: Option<f64>,
}

#[derive(Args)]
struct LocalizeArgs {
    /// Map directory produced by reconstruct.
    #[arg(long)]
    map: PathBuf,
    /// Query image, or a directory of PNGs for batch mode.
    #[arg(long)]
    query: PathBuf,
    /// Intrinsics file; defaults to <map>/intrinsics.txt.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Output file for the one-line TUM pose (single query).
    #[arg(long)]
    out_pose: Option<PathBuf>,
    /// Output directory for batch results.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth trajectory for batch error statistics.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Retrieved nearest keyframes.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Covisibility threshold, co-observed points.
    #[arg(long, default_value_t = 10)]
    min_shared: usize,
    /// Feature matching ratio-test threshold.
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    /// RANSAC seed (fixed by default for reproducibility).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Randomize the RANSAC seed.
    #[arg(long, default_value_t = false)]
    random_seed: bool,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Absolute trajectory error after rigid alignment, mm.
    Ate(TrajArgs),
    /// Relative translation error, mm.
    Rte(TrajArgs),
    /// Relative rotation error, degrees.
    Rre(TrajArgs),
    /// Reconstruction RMSE: landmark registration + ICP + nearest-neighbor RMS.
    Rmse(RmseArgs),
}

#[derive(Args)]
struct TrajArgs {
    /// Ground-truth trajectory (TUM format).
    #[arg(long)]
    gt: PathBuf,
    /// Estimated trajectory (TUM format).
    #[arg(long)]
    est: PathBuf,
    /// Timestamp association tolerance, seconds.
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
    /// Write the result as JSON to this path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct RmseArgs {
    /// Source cloud (PLY), e.g. the reconstruction.
    #[arg(long)]
    src: PathBuf,
    /// Destination cloud (PLY), e.g. the ground truth.
    #[arg(long)]
    dst: PathBuf,
    /// Landmark CSV: one "sx,sy,sz,dx,dy,dz" per line.
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => synth_cmd::run(args.spec.as_deref(), &args.out, args.seed),
        Command::Reconstruct(args) => {
            let overrides = reconstruct_cmd::ReconstructOverrides {
                max_disparity: args.max_disparity,
                window_radius: args.window_radius,
                zncc_threshold: args.zncc_threshold,
                lr_tol: args.lr_tol,
                w_photo: args.w_photo,
                pyramid_levels: args.pyramid_levels,
                max_iterations: args.max_iterations,
                keyframe_stride: args.keyframe_stride,
                gamma_depth: args.gamma_depth,
                gamma_theta_deg: args.gamma_theta,
                min_export_confidence: args.min_export_confidence,
            };
            reconstruct_cmd::run(
                &args.input,
                args.intrinsics.as_deref(),
                &args.out,
                &args.depth,
                args.config.as_deref(),
                &overrides,
            )
        }
        Command::Localize(args) => {
            let mut config = LocalizeConfig {
                k_nearest: args.k,
                min_shared: args.min_shared,
                match_ratio: args.ratio,
                ..LocalizeConfig::default()
            };
            config.ransac.seed = if args.random_seed {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_nanos() as u64)
                    .unwrap_or(args.seed)
            } else {
                args.seed
            };
            localize_cmd::run(
                &args.map,
                &args.query,
                args.intrinsics.as_deref(),
                args.out_pose.as_deref(),
                args.out.as_deref(),
                args.gt.as_deref(),
                config,
            )
        }
        Command::Eval(eval) => match eval {
            EvalCommand::Ate(a) => eval_cmd::run_trajectory_metric(
                TrajectoryMetric::Ate,
                &a.gt,
                &a.est,
                a.tolerance,
                a.json.as_deref(),
            ),
            EvalCommand::Rte(a) => eval_cmd::run_trajectory_metric(
                TrajectoryMetric::Rte,
                &a.gt,
                &a.est,
                a.tolerance,
                a.json.as_deref(),
            ),
            EvalCommand::Rre(a) => eval_cmd::run_trajectory_metric(
                TrajectoryMetric::Rre,
                &a.gt,
                &a.est,
                a.tolerance,
                a.json.as_deref(),
            ),
            EvalCommand::Rmse(a) => {
                eval_cmd::run_rmse(&a.src, &a.dst, &a.landmarks, a.json.as_deref())
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

//! Flag definitions for every subcommand.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "skillflow",
    version,
    about = "Skill-conditioned flow generation and 2D-to-3D trajectory lifting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic demonstration dataset with ground truth.
    GenData(GenDataArgs),
    /// Build the per-skill trajectory template bank from the train split.
    BuildBank(BuildBankArgs),
    /// Train the flow generator (encoder + denoiser) on a dataset.
    Train(TrainArgs),
    /// Run the pipeline on one task: encode, generate or load a flow, lift
    /// it, and emit end-effector actions.
    Plan(PlanArgs),
    /// Paired prior-on/prior-off lifting over the eval split across a
    /// lambda grid, with reports and plots.
    Eval(EvalArgs),
}

/// Pinhole intrinsics for generated data. The low-resolution default puts
/// per-point depth information on the order of the stock prior weight, which
/// is the regime where trajectory priors matter.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CameraArgs {
    #[arg(long, default_value_t = 110.0)]
    pub fx: f64,
    #[arg(long, default_value_t = 110.0)]
    pub fy: f64,
    #[arg(long, default_value_t = 80.0)]
    pub cx: f64,
    #[arg(long, default_value_t = 60.0)]
    pub cy: f64,
    #[arg(long, default_value_t = 160.0)]
    pub width: f64,
    #[arg(long, default_value_t = 120.0)]
    pub height: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    /// Output directory for demo files and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of stock skills to include (1-5).
    #[arg(long, default_value_t = 5)]
    pub skills: usize,
    /// Demonstrations per skill.
    #[arg(long = "per-skill", default_value_t = 40)]
    pub per_skill: usize,
    /// Frames per demonstration.
    #[arg(long = "T", default_value_t = 32)]
    pub frames: usize,
    /// Keypoint grid side; N = grid^2 tracks.
    #[arg(long, default_value_t = 5)]
    pub grid: usize,
    /// Object size relative to the canonical trajectory-extent link.
    #[arg(long = "object-ratio", default_value_t = 1.0)]
    pub object_ratio: f64,
    /// Depth relief of the frame-1 keypoint patch (meters); 0 is planar.
    #[arg(long = "depth-relief", default_value_t = 0.0)]
    pub depth_relief: f64,
    /// Pixel noise sigma applied to every tracked point.
    #[arg(long = "pixel-noise", default_value_t = 0.0)]
    pub pixel_noise: f64,
    /// Frame-1 depth noise sigma (meters).
    #[arg(long = "depth-noise", default_value_t = 0.0)]
    pub depth_noise: f64,
    /// Fraction of each skill's demos tagged as the eval split.
    #[arg(long = "eval-fraction", default_value_t = 0.2)]
    pub eval_fraction: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub cam: CameraArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildBankArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output bank file.
    #[arg(long)]
    pub out: PathBuf,
    /// Extra noise on the per-frame pseudo-depths used for lifting.
    #[arg(long = "pseudo-depth-noise", default_value_t = 0.0)]
    pub pseudo_depth_noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoint.json and metrics.csv.
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Classification loss weight.
    #[arg(long, default_value_t = 0.01)]
    pub w1: f64,
    /// Contrastive loss weight.
    #[arg(long, default_value_t = 0.02)]
    pub w2: f64,
    /// Contrastive temperature.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Diffusion steps.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Token width.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Select conditioning skill by classifier output instead of the label.
    #[arg(long = "no-teacher-forcing", default_value_t = false)]
    pub no_teacher_forcing: bool,
    /// Drop the 1/sqrt(head dim) attention scaling.
    #[arg(long = "unscaled-attention", default_value_t = false)]
    pub unscaled_attention: bool,
    /// Run the finite-difference gradient suite first; abort on failure.
    #[arg(long = "grad-check", default_value_t = false)]
    pub grad_check: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlanArgs {
    /// Demo file supplying the task observation, camera, and frame-1 depth.
    #[arg(long)]
    pub demo: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    /// Skip flow generation and read the flow from this demo file instead.
    #[arg(long = "flow-from-file")]
    pub flow_from_file: Option<PathBuf>,
    /// Prior weight in the lifting objective.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Disable the trajectory prior (reprojection-only lifting).
    #[arg(long = "no-prior", default_value_t = false)]
    pub no_prior: bool,
    /// Initialize every frame's solve at identity instead of the previous
    /// frame's solution.
    #[arg(long = "cold-start", default_value_t = false)]
    pub cold_start: bool,
    /// Workspace scale for prior alignment; defaults to four bounding-sphere
    /// diameters of the frame-1 object cloud.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    /// Prior weights to sweep, comma-separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.01, 0.1, 1.0, 10.0])]
    pub lambdas: Vec<f64>,
    /// Pixel-noise sigmas injected at eval time, comma-separated.
    #[arg(long = "noise-grid", value_delimiter = ',', default_values_t = vec![0.5])]
    pub noise_grid: Vec<f64>,
    /// Frame-1 depth noise sigma injected at eval time.
    #[arg(long = "depth-noise", default_value_t = 0.01)]
    pub depth_noise: f64,
    /// Lambda used for the error-versus-noise plot.
    #[arg(long = "plot-lambda", default_value_t = 0.1)]
    pub plot_lambda: f64,
    #[arg(long = "cold-start", default_value_t = false)]
    pub cold_start: bool,
    /// Workspace scale override for prior alignment.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

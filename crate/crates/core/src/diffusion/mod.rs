//! Skill-constrained denoising diffusion over motion flows.
//!
//! Flows are mapped into `[-1, 1]` per axis by an exact affine normalizer
//! (whose inverse is the decoder), perturbed by a linear-beta forward
//! process, and denoised by a small conditional network: a per-point
//! feed-forward encoder, a timestep embedding, cross-attention over the
//! skill-aware context tokens, a temporal self-attention motion module along
//! the frame axis, and a linear decoder. The pooled motion-module output,
//! linearly projected, is the feature the skill-contrastive loss aligns with
//! a fixed prompt bank.
//!
//! Training combines the denoising MSE with a skill classification
//! cross-entropy and the contrastive loss; every gradient is hand-derived
//! and checked against central finite differences.

mod denoiser;
mod losses;
mod schedule;
mod train;

pub use denoiser::{
    denoiser_backward, denoiser_forward, predict_noise, sample, sample_latent_with,
    DenoiserCache, DenoiserParams,
};
pub use losses::{
    loss_classify, loss_classify_grad, loss_contrastive, loss_contrastive_grads, loss_denoise,
    loss_denoise_grad, loss_total, LossParts, SkillPromptBank,
};
pub use schedule::{forward_diffuse, forward_diffuse_latent, DiffusionSchedule};
pub use train::{
    grad_check, train, Checkpoint, EpochMetrics, Model, ModelGrads, TrainConfig, TrainSample,
};

use crate::geometry::{CameraModel, GeometryError, MotionFlow2D};
use crate::nn::Mat;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("diffusion step {k} outside 1..={m}")]
    BadStep { k: usize, m: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("zero-norm feature vector in contrastive loss")]
    ZeroVector,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {parts}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        parts: String,
    },
    #[error("bad schedule: {0}")]
    BadSchedule(String),
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Normalized flow coordinates: `frames * points` rows of `(u, v)` mapped
/// into `[-1, 1]` per axis; row `t * points + n` is point `n` at frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowLatent {
    pub frames: usize,
    pub points: usize,
    pub z: Mat,
}

impl FlowLatent {
    pub fn new(frames: usize, points: usize, z: Mat) -> Result<Self, DiffusionError> {
        if z.nrows() != frames * points || z.ncols() != 2 {
            return Err(DiffusionError::ShapeMismatch(format!(
                "latent is {}x{}, expected {}x2",
                z.nrows(),
                z.ncols(),
                frames * points
            )));
        }
        Ok(Self { frames, points, z })
    }
}

/// Affine pixel -> `[-1, 1]` map; the image center goes to zero and the
/// top-left corner to `(-1, -1)`. Out-of-bounds pixels normalize past the
/// unit box, which is allowed.
pub fn encode_flow(flow: &MotionFlow2D, cam: &CameraModel) -> FlowLatent {
    let frames = flow.num_frames();
    let points = flow.num_points();
    let mut z = Mat::zeros(frames * points, 2);
    for t in 0..frames {
        for (n, p) in flow.frame(t).iter().enumerate() {
            z[(t * points + n, 0)] = (2.0 * p[0] - cam.width) / cam.width;
            z[(t * points + n, 1)] = (2.0 * p[1] - cam.height) / cam.height;
        }
    }
    FlowLatent { frames, points, z }
}

/// Exact inverse of [`encode_flow`].
pub fn decode_flow(latent: &FlowLatent, cam: &CameraModel) -> Result<MotionFlow2D, DiffusionError> {
    let mut frames = Vec::with_capacity(latent.frames);
    for t in 0..latent.frames {
        let mut frame = Vec::with_capacity(latent.points);
        for n in 0..latent.points {
            let row = t * latent.points + n;
            frame.push([
                (latent.z[(row, 0)] + 1.0) * cam.width / 2.0,
                (latent.z[(row, 1)] + 1.0) * cam.height / 2.0,
            ]);
        }
        frames.push(frame);
    }
    Ok(MotionFlow2D::new(frames)?)
}

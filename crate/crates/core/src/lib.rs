//! Skill-conditioned motion-flow generation and geometric lifting of 2D
//! object flows into executable 6-DoF end-effector trajectories.
//!
//! The pipeline has three phases:
//!
//! 1. **Encoding** ([`encoder`]): multimodal task inputs (image, instruction,
//!    object boxes) are fused with a bank of learnable skill tokens through
//!    self- and cross-attention, producing a skill-aware conditioning context.
//! 2. **Generation** ([`diffusion`]): a small conditional DDPM over
//!    normalized pixel-space flows, trained with a denoising loss plus skill
//!    classification and skill-contrastive auxiliary losses, all with
//!    hand-derived gradients.
//! 3. **Execution** ([`transform`]): per-frame SE(3) transforms are fitted to
//!    the flow by damped least squares on reprojection error, optionally
//!    regularized by a retrieved per-skill trajectory prior ([`skillbank`]),
//!    then mapped to robot-base end-effector poses.
//!
//! [`synth`] provides a deterministic demonstration generator with exact
//! ground truth for every stage, and [`geometry`] / [`nlls`] hold the shared
//! numerics.

pub mod diffusion;
pub mod encoder;
pub mod geometry;
pub mod nlls;
pub mod nn;
pub mod skillbank;
pub mod synth;
pub mod transform;

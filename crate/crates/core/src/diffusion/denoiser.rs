//! Conditional noise-prediction network and ancestral sampling.
//!
//! Stage order: per-point feed-forward encode, add the timestep embedding,
//! cross-attend the conditioning tokens (residual), temporal self-attention
//! per point along the frame axis (residual, the motion module), then a
//! linear decode to noise shape. The contrastive feature is the pooled
//! motion-module output through a linear projection, so it sees the skill
//! conditioning.

use super::{decode_flow, DiffusionError, DiffusionSchedule, FlowLatent};
use crate::encoder::ModelConfig;
use crate::geometry::{CameraModel, MotionFlow2D};
use crate::nn::{
    self, attention_backward, attention_forward, linear_backward, linear_forward, nest, nest_mut,
    tanh_backward, tanh_forward, AttnCache, AttnParams, LinearCache, LinearParams, Mat, TensorSet,
};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    /// Per-point coordinate encoder, 2 -> D (tanh).
    pub enc: LinearParams,
    /// One row per diffusion step.
    pub time_embed: Mat,
    /// Conditioning-token projection, D -> D.
    pub cond_proj: LinearParams,
    pub cross: AttnParams,
    pub motion: AttnParams,
    /// Pooled motion output -> prompt space.
    pub h_proj: LinearParams,
    /// D -> 2 noise decode.
    pub dec: LinearParams,
}

impl DenoiserParams {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.dim;
        Self {
            enc: LinearParams::init(rng, 2, d),
            time_embed: nn::randn_mat(rng, cfg.steps, d, 1.0 / (d as f64).sqrt()),
            cond_proj: LinearParams::init(rng, d, d),
            cross: AttnParams::init(rng, d),
            motion: AttnParams::init(rng, d),
            h_proj: LinearParams::init(rng, d, d),
            dec: LinearParams::init(rng, d, 2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            enc: self.enc.zeros_like(),
            time_embed: Mat::zeros(self.time_embed.nrows(), self.time_embed.ncols()),
            cond_proj: self.cond_proj.zeros_like(),
            cross: self.cross.zeros_like(),
            motion: self.motion.zeros_like(),
            h_proj: self.h_proj.zeros_like(),
            dec: self.dec.zeros_like(),
        }
    }
}

impl TensorSet for DenoiserParams {
    fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut v = nest("enc", self.enc.tensors());
        v.push(("time_embed".into(), &self.time_embed));
        v.extend(nest("cond_proj", self.cond_proj.tensors()));
        v.extend(nest("cross", self.cross.tensors()));
        v.extend(nest("motion", self.motion.tensors()));
        v.extend(nest("h_proj", self.h_proj.tensors()));
        v.extend(nest("dec", self.dec.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut v = nest_mut("enc", self.enc.tensors_mut());
        v.push(("time_embed".into(), &mut self.time_embed));
        v.extend(nest_mut("cond_proj", self.cond_proj.tensors_mut()));
        v.extend(nest_mut("cross", self.cross.tensors_mut()));
        v.extend(nest_mut("motion", self.motion.tensors_mut()));
        v.extend(nest_mut("h_proj", self.h_proj.tensors_mut()));
        v.extend(nest_mut("dec", self.dec.tensors_mut()));
        v
    }
}

fn gather_point(x: &Mat, point: usize, frames: usize, points: usize) -> Mat {
    Mat::from_fn(frames, x.ncols(), |t, c| x[(t * points + point, c)])
}

fn scatter_point_add(dst: &mut Mat, src: &Mat, point: usize, points: usize) {
    for t in 0..src.nrows() {
        for c in 0..src.ncols() {
            dst[(t * points + point, c)] += src[(t, c)];
        }
    }
}

pub struct DenoiserCache {
    frames: usize,
    points: usize,
    step: usize,
    enc_lin: LinearCache,
    /// tanh output (pre timestep embedding).
    x1: Mat,
    cond_lin: LinearCache,
    cross: AttnCache,
    motion: Vec<AttnCache>,
    hproj_lin: LinearCache,
    dec_lin: LinearCache,
}

/// Full forward pass. Returns the predicted noise (`frames*points x 2`), the
/// contrastive feature (`1 x D`), and the cache for the backward pass.
pub fn denoiser_forward(
    z: &Mat,
    frames: usize,
    points: usize,
    k: usize,
    ctx_tokens: &Mat,
    params: &DenoiserParams,
    cfg: &ModelConfig,
) -> (Mat, Mat, DenoiserCache) {
    debug_assert_eq!(z.nrows(), frames * points);
    debug_assert!(k >= 1 && k <= params.time_embed.nrows());
    let (pre1, enc_lin) = linear_forward(z, &params.enc);
    let x1 = tanh_forward(&pre1);
    let mut x1e = x1.clone();
    for mut row in x1e.row_iter_mut() {
        row += params.time_embed.row(k - 1);
    }

    let (cond, cond_lin) = linear_forward(ctx_tokens, &params.cond_proj);
    let (a_cross, cross) =
        attention_forward(&x1e, &cond, &params.cross, cfg.heads, cfg.scaled_attention);
    let x2 = &x1e + a_cross;

    let mut x3 = Mat::zeros(x2.nrows(), x2.ncols());
    let mut motion = Vec::with_capacity(points);
    for n in 0..points {
        let s = gather_point(&x2, n, frames, points);
        let (m, c) = attention_forward(&s, &s, &params.motion, cfg.heads, cfg.scaled_attention);
        let y = &s + m;
        scatter_point_add(&mut x3, &y, n, points);
        motion.push(c);
    }

    let mut h_mid = Mat::zeros(1, x3.ncols());
    for row in x3.row_iter() {
        h_mid += row;
    }
    h_mid /= x3.nrows() as f64;
    let (h, hproj_lin) = linear_forward(&h_mid, &params.h_proj);
    let (eps_hat, dec_lin) = linear_forward(&x3, &params.dec);

    (
        eps_hat,
        h,
        DenoiserCache {
            frames,
            points,
            step: k,
            enc_lin,
            x1,
            cond_lin,
            cross,
            motion,
            hproj_lin,
            dec_lin,
        },
    )
}

/// Backward pass. Either upstream gradient may be absent (the contrastive
/// negatives never touch the decode path). Returns the gradient w.r.t. the
/// conditioning tokens; parameter gradients accumulate into `grads`.
pub fn denoiser_backward(
    cache: &DenoiserCache,
    params: &DenoiserParams,
    d_eps_hat: Option<&Mat>,
    d_h: Option<&Mat>,
    grads: &mut DenoiserParams,
) -> Mat {
    let rows = cache.frames * cache.points;
    let dim = params.enc.w.ncols();
    let mut d_x3 = Mat::zeros(rows, dim);

    if let Some(d_eps) = d_eps_hat {
        let (dx, g) = linear_backward(&cache.dec_lin, &params.dec, d_eps);
        d_x3 += dx;
        nn::accumulate(&mut grads.dec, &g);
    }
    if let Some(dh) = d_h {
        let (d_hmid, g) = linear_backward(&cache.hproj_lin, &params.h_proj, dh);
        nn::accumulate(&mut grads.h_proj, &g);
        let scale = 1.0 / rows as f64;
        for mut row in d_x3.row_iter_mut() {
            for c in 0..dim {
                row[c] += d_hmid[(0, c)] * scale;
            }
        }
    }

    // Motion module: y_n = s_n + attn(s_n, s_n).
    let mut d_x2 = Mat::zeros(rows, dim);
    for n in 0..cache.points {
        let d_y = gather_point(&d_x3, n, cache.frames, cache.points);
        let (dq, dkv, g) = attention_backward(&cache.motion[n], &params.motion, &d_y);
        nn::accumulate(&mut grads.motion, &g);
        let d_s = &d_y + dq + dkv;
        scatter_point_add(&mut d_x2, &d_s, n, cache.points);
    }

    // Conditioning cross-attention: x2 = x1e + attn(x1e, cond).
    let (dq_c, d_cond, g) = attention_backward(&cache.cross, &params.cross, &d_x2);
    nn::accumulate(&mut grads.cross, &g);
    let d_x1e = &d_x2 + dq_c;
    let (d_ctx, g) = linear_backward(&cache.cond_lin, &params.cond_proj, &d_cond);
    nn::accumulate(&mut grads.cond_proj, &g);

    // Timestep embedding sees the sum over all rows.
    {
        let mut emb_row = grads.time_embed.row_mut(cache.step - 1);
        for row in d_x1e.row_iter() {
            emb_row += row;
        }
    }

    let d_pre1 = tanh_backward(&cache.x1, &d_x1e);
    let (_, g) = linear_backward(&cache.enc_lin, &params.enc, &d_pre1);
    nn::accumulate(&mut grads.enc, &g);

    d_ctx
}

/// Deterministic forward pass discarding the cache and feature.
pub fn predict_noise(
    z: &FlowLatent,
    k: usize,
    ctx_tokens: &Mat,
    params: &DenoiserParams,
    cfg: &ModelConfig,
) -> Mat {
    denoiser_forward(&z.z, z.frames, z.points, k, ctx_tokens, params, cfg).0
}

/// Ancestral sampling loop over an arbitrary noise predictor (the test
/// suites plug in closed-form oracles). Deterministic given the seed.
pub fn sample_latent_with<F: FnMut(&Mat, usize) -> Mat>(
    mut predict: F,
    schedule: &DiffusionSchedule,
    seed: u64,
    rows: usize,
    cols: usize,
) -> Mat {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut z = Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    for k in (1..=schedule.len()).rev() {
        let eps_hat = predict(&z, k);
        let beta = schedule.beta(k);
        let ab = schedule.alpha_bar(k);
        let mean = (&z - eps_hat * (beta / (1.0 - ab).sqrt())) / schedule.alpha(k).sqrt();
        if k > 1 {
            let var = (1.0 - schedule.alpha_bar(k - 1)) / (1.0 - ab) * beta;
            let sigma = var.sqrt();
            z = mean
                + Mat::from_fn(rows, cols, |_, _| {
                    sigma * rng.sample::<f64, _>(StandardNormal)
                });
        } else {
            z = mean;
        }
    }
    z
}

/// Samples a flow from seeded Gaussian noise under the given conditioning.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    params: &DenoiserParams,
    ctx_tokens: &Mat,
    schedule: &DiffusionSchedule,
    cfg: &ModelConfig,
    cam: &CameraModel,
    frames: usize,
    points: usize,
    seed: u64,
) -> Result<MotionFlow2D, DiffusionError> {
    if schedule.len() != params.time_embed.nrows() {
        return Err(DiffusionError::BadSchedule(format!(
            "schedule has {} steps, model expects {}",
            schedule.len(),
            params.time_embed.nrows()
        )));
    }
    let z = sample_latent_with(
        |zk, k| {
            denoiser_forward(zk, frames, points, k, ctx_tokens, params, cfg).0
        },
        schedule,
        seed,
        frames * points,
        2,
    );
    decode_flow(&FlowLatent::new(frames, points, z)?, cam)
}

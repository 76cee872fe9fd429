//! Joint training of the encoder and denoiser, gradient verification, and
//! checkpointing.
//!
//! One training step per sample: classify (cross-entropy), fuse every skill
//! row, run the denoiser once per skill on the same perturbed latent, take
//! the denoising MSE from the conditioning run, and contrast the true
//! skill's mid-feature against the features produced under the wrong skill
//! tokens. Gradients flow through all of it, including the negative runs,
//! and are verified elementwise against central finite differences by
//! [`grad_check`].
//!
//! Mini-batch SGD with momentum; per-sample step indices and noise are drawn
//! ahead of each batch from one seeded stream, so batch-parallel gradient
//! evaluation with an index-ordered reduction keeps runs bit-reproducible.

use super::denoiser::{denoiser_backward, denoiser_forward, DenoiserParams};
use super::losses::{
    loss_classify, loss_classify_grad, loss_contrastive_grads, loss_denoise, loss_denoise_grad,
    loss_total, LossParts, SkillPromptBank,
};
use super::schedule::{forward_diffuse, DiffusionSchedule};
use super::{DiffusionError, FlowLatent};
use crate::encoder::{
    encode_base, encode_base_backward, fuse_skill, fuse_skill_backward, EncoderParams,
    ModelConfig, TaskInput,
};
use crate::nn::{self, nest, nest_mut, Mat, TensorSet};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Full trainable state plus the fixed prompt bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: EncoderParams,
    pub denoiser: DenoiserParams,
    pub prompts: SkillPromptBank,
    pub skill_names: Vec<String>,
}

impl Model {
    pub fn init(cfg: ModelConfig, skill_names: Vec<String>, seed: u64) -> Self {
        assert_eq!(
            skill_names.len(),
            cfg.num_skills,
            "one name per skill required"
        );
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(&cfg, &mut rng);
        let denoiser = DenoiserParams::init(&cfg, &mut rng);
        let prompts = SkillPromptBank::from_names(&skill_names, cfg.dim, seed);
        Self {
            cfg,
            encoder,
            denoiser,
            prompts,
            skill_names,
        }
    }

    pub fn schedule(&self) -> DiffusionSchedule {
        DiffusionSchedule::linear(self.cfg.steps, BETA_START, BETA_END)
            .expect("stock schedule is valid")
    }
}

/// Gradient (or velocity) buffers matching the trainable tensors.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub encoder: EncoderParams,
    pub denoiser: DenoiserParams,
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            encoder: model.encoder.zeros_like(),
            denoiser: model.denoiser.zeros_like(),
        }
    }

    pub fn accumulate(&mut self, other: &ModelGrads) {
        nn::accumulate(&mut self.encoder, &other.encoder);
        nn::accumulate(&mut self.denoiser, &other.denoiser);
    }

    pub fn scale(&mut self, s: f64) {
        for (_, m) in self.encoder.tensors_mut() {
            *m *= s;
        }
        for (_, m) in self.denoiser.tensors_mut() {
            *m *= s;
        }
    }
}

impl TensorSet for ModelGrads {
    fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut v = nest("encoder", self.encoder.tensors());
        v.extend(nest("denoiser", self.denoiser.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut v = nest_mut("encoder", self.encoder.tensors_mut());
        v.extend(nest_mut("denoiser", self.denoiser.tensors_mut()));
        v
    }
}

/// One labeled training example: clean flow latent plus the task input.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub latent: FlowLatent,
    pub input: TaskInput,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Classification weight.
    pub w1: f64,
    /// Contrastive weight.
    pub w2: f64,
    pub tau: f64,
    pub seed: u64,
    /// Select the conditioning skill by label while training; the classifier
    /// output is used when this is off.
    pub teacher_forcing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            lr: 1e-2,
            momentum: 0.9,
            w1: 0.01,
            w2: 0.02,
            tau: 0.5,
            seed: 7,
            teacher_forcing: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_mse: f64,
    pub l_ce: f64,
    pub l_con: f64,
    pub l_total: f64,
    pub accuracy: f64,
}

/// Loss, classifier hit, and gradients for one sample at a fixed diffusion
/// step and noise draw. Pure in the model parameters.
pub fn sample_loss_grads(
    model: &Model,
    sample: &TrainSample,
    k: usize,
    eps: &Mat,
    tcfg: &TrainConfig,
    schedule: &DiffusionSchedule,
) -> Result<(LossParts, bool, ModelGrads), DiffusionError> {
    let cfg = &model.cfg;
    let ns = cfg.num_skills;
    let label = sample.label;
    debug_assert!(label < ns);

    let base = encode_base(&sample.input, &model.encoder, cfg);
    let correct = base.predicted == label;
    let ce = loss_classify(&base.logits, label);
    let i_mse = if tcfg.teacher_forcing {
        label
    } else {
        base.predicted
    };

    let z_k = forward_diffuse(&sample.latent.z, k, eps, schedule)?;
    let (frames, points) = (sample.latent.frames, sample.latent.points);

    // One fusion plus denoiser pass per skill row; the encoder's
    // self-attention stage is shared across all of them.
    let fuses: Vec<_> = (0..ns)
        .map(|j| fuse_skill(&base, j, &model.encoder, cfg))
        .collect();
    let runs: Vec<_> = fuses
        .iter()
        .map(|f| {
            denoiser_forward(
                &z_k,
                frames,
                points,
                k,
                &f.ctx.tokens(),
                &model.denoiser,
                cfg,
            )
        })
        .collect();

    let mse = loss_denoise(&runs[i_mse].0, eps);
    let h_negs: Vec<Mat> = (0..ns).filter(|j| *j != label).map(|j| runs[j].1.clone()).collect();
    let (con, d_h_pos, d_h_negs) =
        loss_contrastive_grads(&runs[label].1, &h_negs, &model.prompts, label, tcfg.tau)?;

    // Backward.
    let mut grads = ModelGrads::zeros_like(model);
    let d_eps_hat = loss_denoise_grad(&runs[i_mse].0, eps);
    let mut d_encoded = [
        Mat::zeros(base.encoded[0].nrows(), cfg.dim),
        Mat::zeros(base.encoded[1].nrows(), cfg.dim),
        Mat::zeros(base.encoded[2].nrows(), cfg.dim),
    ];
    let mut neg_iter = d_h_negs.into_iter();
    for (j, (fuse, run)) in fuses.iter().zip(&runs).enumerate() {
        let d_h = if j == label {
            &d_h_pos * tcfg.w2
        } else {
            neg_iter.next().expect("one gradient per negative") * tcfg.w2
        };
        let d_eps_opt = (j == i_mse).then_some(&d_eps_hat);
        let d_h_opt = (tcfg.w2 != 0.0).then_some(&d_h);
        if d_eps_opt.is_none() && d_h_opt.is_none() {
            continue;
        }
        let d_ctx = denoiser_backward(&run.2, &model.denoiser, d_eps_opt, d_h_opt, &mut grads.denoiser);
        let dm = fuse_skill_backward(fuse, &model.encoder, &d_ctx, &mut grads.encoder);
        for (acc, d) in d_encoded.iter_mut().zip(dm) {
            *acc += d;
        }
    }
    let d_logits = loss_classify_grad(&base.logits, label) * tcfg.w1;
    encode_base_backward(&base, &model.encoder, &d_encoded, &d_logits, &mut grads.encoder);

    Ok((
        LossParts {
            mse,
            ce,
            contrastive: con,
        },
        correct,
        grads,
    ))
}

fn sgd_update(model: &mut Model, velocity: &mut ModelGrads, grads: &ModelGrads, tcfg: &TrainConfig) {
    let mut vel = velocity.tensors_mut();
    let g = grads.tensors();
    for ((_, v), (_, gm)) in vel.iter_mut().zip(g.iter()) {
        **v *= tcfg.momentum;
        **v += *gm;
    }
    let mut params = nest_mut("encoder", model.encoder.tensors_mut());
    params.extend(nest_mut("denoiser", model.denoiser.tensors_mut()));
    for ((_, p), (_, v)) in params.iter_mut().zip(velocity.tensors().iter()) {
        **p -= *v * tcfg.lr;
    }
}

/// Seeded mini-batch SGD over the dataset; returns per-epoch metrics.
/// Deterministic given the seed: noise draws are made sequentially before
/// each batch and the batch-parallel gradient reduction is index-ordered.
pub fn train(
    model: &mut Model,
    dataset: &[TrainSample],
    tcfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>, DiffusionError> {
    if dataset.is_empty() {
        return Err(DiffusionError::ShapeMismatch("empty dataset".into()));
    }
    for s in dataset {
        if s.label >= model.cfg.num_skills {
            return Err(DiffusionError::ShapeMismatch(format!(
                "label {} out of range",
                s.label
            )));
        }
    }
    let schedule = model.schedule();
    let mut rng = ChaCha12Rng::seed_from_u64(tcfg.seed);
    let mut velocity = ModelGrads::zeros_like(model);
    let mut metrics = Vec::with_capacity(tcfg.epochs);
    let batch_size = tcfg.batch_size.max(1);

    for epoch in 1..=tcfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);

        let mut sums = LossParts {
            mse: 0.0,
            ce: 0.0,
            contrastive: 0.0,
        };
        let mut total = 0.0;
        let mut hits = 0usize;

        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            // Sequential draws keep the stream independent of thread timing.
            let draws: Vec<(usize, Mat)> = chunk
                .iter()
                .map(|&i| {
                    let k = rng.random_range(1..=schedule.len());
                    let eps = Mat::from_fn(
                        dataset[i].latent.z.nrows(),
                        2,
                        |_, _| rng.sample::<f64, _>(StandardNormal),
                    );
                    (k, eps)
                })
                .collect();

            let results: Vec<Result<(LossParts, bool, ModelGrads), DiffusionError>> = chunk
                .par_iter()
                .zip(draws.par_iter())
                .map(|(&i, (k, eps))| {
                    sample_loss_grads(model, &dataset[i], *k, eps, tcfg, &schedule)
                })
                .collect();

            let mut batch_grads = ModelGrads::zeros_like(model);
            for r in results {
                let (parts, correct, grads) = r?;
                if !parts.is_finite() {
                    return Err(DiffusionError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                        parts: format!("{parts:?}"),
                    });
                }
                sums.mse += parts.mse;
                sums.ce += parts.ce;
                sums.contrastive += parts.contrastive;
                total += loss_total(&parts, tcfg.w1, tcfg.w2);
                hits += correct as usize;
                batch_grads.accumulate(&grads);
            }
            batch_grads.scale(1.0 / chunk.len() as f64);
            sgd_update(model, &mut velocity, &batch_grads, tcfg);
        }

        let n = dataset.len() as f64;
        metrics.push(EpochMetrics {
            epoch,
            l_mse: sums.mse / n,
            l_ce: sums.ce / n,
            l_con: sums.contrastive / n,
            l_total: total / n,
            accuracy: hits as f64 / n,
        });
    }
    Ok(metrics)
}

/// Verifies the analytic gradient of the full training loss against central
/// finite differences, elementwise over every trainable tensor. Returns a
/// description of the first mismatch.
pub fn grad_check(
    model: &Model,
    samples: &[TrainSample],
    tcfg: &TrainConfig,
    rel_tol: f64,
) -> Result<(), String> {
    let schedule = model.schedule();
    let mut rng = ChaCha12Rng::seed_from_u64(tcfg.seed);
    let draws: Vec<(usize, Mat)> = samples
        .iter()
        .map(|s| {
            let k = rng.random_range(1..=schedule.len());
            let eps = Mat::from_fn(s.latent.z.nrows(), 2, |_, _| {
                rng.sample::<f64, _>(StandardNormal)
            });
            (k, eps)
        })
        .collect();

    let total_loss = |m: &Model| -> f64 {
        samples
            .iter()
            .zip(&draws)
            .map(|(s, (k, eps))| {
                let (parts, _, _) = sample_loss_grads(m, s, *k, eps, tcfg, &schedule)
                    .expect("loss evaluation failed");
                loss_total(&parts, tcfg.w1, tcfg.w2)
            })
            .sum()
    };

    let mut analytic = ModelGrads::zeros_like(model);
    for (s, (k, eps)) in samples.iter().zip(&draws) {
        let (_, _, g) = sample_loss_grads(model, s, *k, eps, tcfg, &schedule)
            .map_err(|e| format!("loss evaluation failed: {e}"))?;
        analytic.accumulate(&g);
    }

    let fd_eps = 1e-5;
    let mut probe = model.clone();
    let names: Vec<String> = analytic.tensors().iter().map(|(n, _)| n.clone()).collect();
    for name in &names {
        let (rows, cols) = {
            let t = analytic.tensors();
            let m = t.iter().find(|(n, _)| n == name).unwrap().1;
            (m.nrows(), m.ncols())
        };
        for i in 0..rows {
            for j in 0..cols {
                let set = |m: &mut Model, v: f64| {
                    let mut enc = nest_mut("encoder", m.encoder.tensors_mut());
                    enc.extend(nest_mut("denoiser", m.denoiser.tensors_mut()));
                    enc.iter_mut().find(|(n, _)| n == name).unwrap().1[(i, j)] = v;
                };
                let orig = {
                    let enc = nest("encoder", model.encoder.tensors());
                    let mut all = enc;
                    all.extend(nest("denoiser", model.denoiser.tensors()));
                    all.iter().find(|(n, _)| n == name).unwrap().1[(i, j)]
                };
                set(&mut probe, orig + fd_eps);
                let lp = total_loss(&probe);
                set(&mut probe, orig - fd_eps);
                let lm = total_loss(&probe);
                set(&mut probe, orig);
                let fd = (lp - lm) / (2.0 * fd_eps);
                let a = {
                    let t = analytic.tensors();
                    t.iter().find(|(n, _)| n == name).unwrap().1[(i, j)]
                };
                let denom = a.abs().max(fd.abs()).max(1e-6);
                if ((a - fd) / denom).abs() >= rel_tol {
                    return Err(format!(
                        "gradient mismatch at {name}[{i},{j}]: analytic {a:.9e}, finite-difference {fd:.9e}"
                    ));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: [usize; 2],
    /// Row-major float64.
    pub data: Vec<f64>,
}

fn to_tensor_data(m: &Mat) -> TensorData {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    TensorData {
        shape: [m.nrows(), m.ncols()],
        data,
    }
}

fn from_tensor_data(t: &TensorData) -> Mat {
    Mat::from_fn(t.shape[0], t.shape[1], |i, j| t.data[i * t.shape[1] + j])
}

/// Versioned tensor-map checkpoint. `extra` carries the producing tool's
/// configuration echo.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub skill_names: Vec<String>,
    pub tensors: BTreeMap<String, TensorData>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, m) in nest("encoder", model.encoder.tensors()) {
            tensors.insert(name, to_tensor_data(m));
        }
        for (name, m) in nest("denoiser", model.denoiser.tensors()) {
            tensors.insert(name, to_tensor_data(m));
        }
        tensors.insert("prompts".into(), to_tensor_data(&model.prompts.prompts));
        Checkpoint {
            version: CHECKPOINT_FORMAT_VERSION,
            model: model.cfg.clone(),
            skill_names: model.skill_names.clone(),
            tensors,
            extra: serde_json::Map::new(),
        }
    }

    pub fn into_model(self) -> Result<Model, DiffusionError> {
        if self.version != CHECKPOINT_FORMAT_VERSION {
            return Err(DiffusionError::BadCheckpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let mut model = Model::init(self.model.clone(), self.skill_names.clone(), 0);
        let mut targets = nest_mut("encoder", model.encoder.tensors_mut());
        targets.extend(nest_mut("denoiser", model.denoiser.tensors_mut()));
        targets.push(("prompts".into(), &mut model.prompts.prompts));
        for (name, dst) in targets {
            let src = self.tensors.get(&name).ok_or_else(|| {
                DiffusionError::BadCheckpoint(format!("missing tensor {name}"))
            })?;
            if src.shape != [dst.nrows(), dst.ncols()] {
                return Err(DiffusionError::BadCheckpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    src.shape,
                    [dst.nrows(), dst.ncols()]
                )));
            }
            dst.copy_from(&from_tensor_data(src));
        }
        Ok(model)
    }
}

//! Training losses: denoising MSE, skill classification cross-entropy, and
//! the skill-contrastive term over a fixed prompt bank.

use super::DiffusionError;
use crate::nn::{self, Mat};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Mean squared error over all elements.
pub fn loss_denoise(eps_hat: &Mat, eps: &Mat) -> f64 {
    debug_assert_eq!(eps_hat.shape(), eps.shape());
    let mut total = 0.0;
    for (a, b) in eps_hat.iter().zip(eps.iter()) {
        let d = a - b;
        total += d * d;
    }
    total / (eps_hat.nrows() * eps_hat.ncols()) as f64
}

/// `d loss / d eps_hat`.
pub fn loss_denoise_grad(eps_hat: &Mat, eps: &Mat) -> Mat {
    let scale = 2.0 / (eps_hat.nrows() * eps_hat.ncols()) as f64;
    (eps_hat - eps) * scale
}

fn log_softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let log_z = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.map(|v| v - log_z)
}

pub fn softmax_vec(logits: &DVector<f64>) -> DVector<f64> {
    log_softmax(logits).map(f64::exp)
}

/// Cross-entropy against a one-hot label.
pub fn loss_classify(logits: &DVector<f64>, label: usize) -> f64 {
    -log_softmax(logits)[label]
}

/// `d loss / d logits = softmax(logits) - onehot(label)`.
pub fn loss_classify_grad(logits: &DVector<f64>, label: usize) -> DVector<f64> {
    let mut g = softmax_vec(logits);
    g[label] -= 1.0;
    g
}

/// Fixed skill prompts: one seeded unit vector per skill name. A stand-in
/// text embedding; rows are L2-normalized and never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillPromptBank {
    pub prompts: Mat,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl SkillPromptBank {
    pub fn from_names(names: &[String], dim: usize, seed: u64) -> Self {
        let mut prompts = Mat::zeros(names.len(), dim);
        for (i, name) in names.iter().enumerate() {
            let mut rng =
                ChaCha12Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()).wrapping_add(i as u64));
            let row = nn::randn_mat(&mut rng, 1, dim, 1.0);
            let norm = row.norm();
            prompts.row_mut(i).copy_from(&(row / norm).row(0));
        }
        Self { prompts }
    }

    pub fn num_skills(&self) -> usize {
        self.prompts.nrows()
    }
}

fn cosine_and_grad(h: &Mat, prompt_row: &Mat) -> Result<(f64, Mat), DiffusionError> {
    let hn = h.norm();
    if hn == 0.0 {
        return Err(DiffusionError::ZeroVector);
    }
    let pn = prompt_row.norm();
    if pn == 0.0 {
        return Err(DiffusionError::ZeroVector);
    }
    let unit_p = prompt_row / pn;
    let unit_h = h / hn;
    let cos = (&unit_h * unit_p.transpose())[(0, 0)];
    let grad = (unit_p - &unit_h * cos) / hn;
    Ok((cos, grad))
}

/// Contrastive alignment of the positive feature with the anchor skill's
/// prompt against features produced under the wrong skill tokens:
/// `-log( exp(a_pos/tau) / (exp(a_pos/tau) + sum_j exp(a_j/tau)) )` with all
/// alignments measured against the anchor prompt.
pub fn loss_contrastive(
    h_pos: &Mat,
    h_negs: &[Mat],
    bank: &SkillPromptBank,
    skill: usize,
    tau: f64,
) -> Result<f64, DiffusionError> {
    loss_contrastive_grads(h_pos, h_negs, bank, skill, tau).map(|(l, _, _)| l)
}

/// Loss plus gradients w.r.t. the positive and each negative feature.
pub fn loss_contrastive_grads(
    h_pos: &Mat,
    h_negs: &[Mat],
    bank: &SkillPromptBank,
    skill: usize,
    tau: f64,
) -> Result<(f64, Mat, Vec<Mat>), DiffusionError> {
    assert!(tau > 0.0, "temperature must be positive");
    let anchor: Mat = Mat::from_fn(1, bank.prompts.ncols(), |_, j| bank.prompts[(skill, j)]);

    let (a_pos, g_pos) = cosine_and_grad(h_pos, &anchor)?;
    let mut a_negs = Vec::with_capacity(h_negs.len());
    let mut g_negs = Vec::with_capacity(h_negs.len());
    for h in h_negs {
        let (a, g) = cosine_and_grad(h, &anchor)?;
        a_negs.push(a);
        g_negs.push(g);
    }

    // Stable log-sum-exp over [pos, negs] scaled by 1/tau.
    let max = a_negs.iter().fold(a_pos, |m, a| m.max(*a));
    let e_pos = ((a_pos - max) / tau).exp();
    let e_sum = e_pos + a_negs.iter().map(|a| ((a - max) / tau).exp()).sum::<f64>();
    let loss = -(e_pos / e_sum).ln();

    // d loss / d a_pos = (w_pos - 1)/tau, d loss / d a_j = w_j / tau.
    let w_pos = e_pos / e_sum;
    let d_pos = g_pos * ((w_pos - 1.0) / tau);
    let d_negs = g_negs
        .into_iter()
        .zip(&a_negs)
        .map(|(g, a)| {
            let w = ((a - max) / tau).exp() / e_sum;
            g * (w / tau)
        })
        .collect();
    Ok((loss, d_pos, d_negs))
}

/// The three weighted loss terms of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub mse: f64,
    pub ce: f64,
    pub contrastive: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.mse.is_finite() && self.ce.is_finite() && self.contrastive.is_finite()
    }
}

/// `mse + w1 * ce + w2 * contrastive`.
pub fn loss_total(parts: &LossParts, w1: f64, w2: f64) -> f64 {
    parts.mse + w1 * parts.ce + w2 * parts.contrastive
}

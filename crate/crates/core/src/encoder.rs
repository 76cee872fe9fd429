//! Skill-aware multimodal encoding.
//!
//! Task inputs (a rendered image, an instruction token sequence, and object
//! bounding boxes) are featurized into token sequences of a shared width,
//! then fused with one row of a learnable skill-token bank: each modality is
//! self-encoded with MHSA, cross-attended with the skill token as the query,
//! and passed through a feed-forward block. The result is a four-token
//! conditioning context `[skill, image', language', boxes']`.
//!
//! The featurizers are deliberately small and deterministic: patch-mean plus
//! a linear map for images, an embedding table for instruction tokens, and a
//! sinusoidal corner encoding plus a linear map for boxes. An MLP classifier
//! over the pooled image and language features selects the skill row at
//! inference time; training selects it by label (teacher forcing) while the
//! classifier trains jointly.

use crate::nn::{
    self, attention_backward, attention_forward, ffn_backward, ffn_forward, linear_backward,
    linear_forward, nest, nest_mut, tanh_backward, tanh_forward, AttnCache, AttnParams, FfnCache,
    FfnParams, LinearCache, LinearParams, Mat, TensorSet,
};
use crate::skillbank::SkillId;
use crate::synth::SyntheticDemo;
use nalgebra::DVector;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("task input: {0}")]
    BadInput(String),
}

/// Shared architecture configuration for the encoder and the denoiser.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Token width shared by every sequence in the model.
    pub dim: usize,
    pub heads: usize,
    pub num_skills: usize,
    pub vocab_size: usize,
    /// Image tokens per side; the image is pooled into a grid of
    /// `image_patches^2` patch-mean tokens.
    pub image_patches: usize,
    /// Sin/cos frequency pairs per box coordinate.
    pub box_freqs: usize,
    /// Diffusion steps.
    pub steps: usize,
    /// Divide attention scores by sqrt(head dim); turning this off
    /// reproduces the plain softmax(QK^T)V formulation.
    pub scaled_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            heads: 4,
            num_skills: 5,
            vocab_size: VOCABULARY.len(),
            image_patches: 4,
            box_freqs: 8,
            steps: 50,
            scaled_attention: true,
        }
    }
}

impl ModelConfig {
    /// Tiny configuration used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            dim: 8,
            heads: 2,
            num_skills: 3,
            vocab_size: VOCABULARY.len(),
            image_patches: 2,
            box_freqs: 4,
            steps: 6,
            scaled_attention: true,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.dim % self.heads != 0 {
            return Err(EncoderError::BadInput(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.num_skills == 0 || self.steps == 0 {
            return Err(EncoderError::BadInput(
                "num_skills and steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Task inputs
// ---------------------------------------------------------------------------

/// Fixed instruction vocabulary.
pub const VOCABULARY: &[&str] = &[
    "pour", "the", "water", "from", "cup", "into", "bowl", "tilt", "to", "pick", "up", "block",
    "and", "place", "it", "on", "plate", "move", "onto", "push", "box", "across", "table",
    "forward", "slide", "drawer", "open", "pull", "swing", "cabinet", "door", "hinge",
];

/// Maps known words to token ids; unknown words are dropped.
pub fn tokenize(phrase: &str) -> Vec<usize> {
    phrase
        .split_whitespace()
        .filter_map(|w| VOCABULARY.iter().position(|v| *v == w))
        .collect()
}

/// Two instruction variants per stock skill.
pub fn instruction_for(skill_name: &str, variant: usize) -> &'static str {
    let options: [&str; 2] = match skill_name {
        "Pouring" => [
            "pour the water from the cup into the bowl",
            "tilt the cup to pour water into the bowl",
        ],
        "PickingPlacing" => [
            "pick up the block and place it on the plate",
            "move the block onto the plate",
        ],
        "Pushing" => [
            "push the box across the table",
            "push the box forward on the table",
        ],
        "SlideOpening" => ["slide the drawer open", "pull the drawer open"],
        "HingeOpening" => ["swing the cabinet door open", "open the hinge door"],
        _ => ["move the object on the table", "move the object forward"],
    };
    options[variant % 2]
}

/// Row-major interleaved RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageBuf {
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        if row < self.height && col < self.width {
            let i = (row * self.width + col) * 3;
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// One task observation: image, instruction tokens, object boxes, and an
/// optional ground-truth skill used for teacher forcing during training.
#[derive(Debug, Clone)]
pub struct TaskInput {
    pub image: ImageBuf,
    pub instruction: Vec<usize>,
    /// `(x1, y1, x2, y2)` in source-camera pixel coordinates.
    pub boxes: Vec<[f64; 4]>,
    /// Pixel bounds the boxes live in (source camera width/height).
    pub box_bounds: (f64, f64),
    pub skill_label: Option<SkillId>,
}

impl TaskInput {
    pub fn new(
        image: ImageBuf,
        instruction: Vec<usize>,
        boxes: Vec<[f64; 4]>,
        box_bounds: (f64, f64),
        skill_label: Option<SkillId>,
    ) -> Result<Self, EncoderError> {
        if boxes.is_empty() {
            return Err(EncoderError::BadInput("need at least one box".into()));
        }
        if instruction.is_empty() {
            return Err(EncoderError::BadInput("instruction is empty".into()));
        }
        for b in &boxes {
            if !(b[0] < b[2] && b[1] < b[3]) {
                return Err(EncoderError::BadInput(format!(
                    "box {b:?} has non-positive extent"
                )));
            }
            if b[0] < 0.0 || b[1] < 0.0 || b[2] > box_bounds.0 || b[3] > box_bounds.1 {
                return Err(EncoderError::BadInput(format!(
                    "box {b:?} outside bounds {box_bounds:?}"
                )));
            }
        }
        Ok(Self {
            image,
            instruction,
            boxes,
            box_bounds,
            skill_label,
        })
    }
}

/// Render resolution of the synthetic observation image.
pub const RENDER_WIDTH: usize = 64;
pub const RENDER_HEIGHT: usize = 48;

/// Derives the task observation for a generated demo: a small render of the
/// frame-1 keypoints, the keypoint bounding box, and a seeded instruction
/// variant. Only frame-1 information enters the observation.
pub fn task_input_from_demo(demo: &SyntheticDemo) -> TaskInput {
    let w = demo.cam.width;
    let h = demo.cam.height;
    let sx = RENDER_WIDTH as f64 / w;
    let sy = RENDER_HEIGHT as f64 / h;

    let frame1 = demo.flow.frame(0);
    let (mut x1, mut y1, mut x2, mut y2) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in frame1 {
        x1 = x1.min(p[0]);
        y1 = y1.min(p[1]);
        x2 = x2.max(p[0]);
        y2 = y2.max(p[1]);
    }
    x1 = x1.clamp(0.0, w - 1.0);
    y1 = y1.clamp(0.0, h - 1.0);
    x2 = x2.clamp(x1 + 1.0, w);
    y2 = y2.clamp(y1 + 1.0, h);

    let mut image = ImageBuf::filled(RENDER_HEIGHT, RENDER_WIDTH, 0.08);
    // Box outline, dim.
    let (bx1, by1) = ((x1 * sx) as usize, (y1 * sy) as usize);
    let (bx2, by2) = ((x2 * sx) as usize, (y2 * sy) as usize);
    for c in bx1..=bx2.min(RENDER_WIDTH - 1) {
        image.set(by1, c, [0.3; 3]);
        image.set(by2.min(RENDER_HEIGHT - 1), c, [0.3; 3]);
    }
    for r in by1..=by2.min(RENDER_HEIGHT - 1) {
        image.set(r, bx1, [0.3; 3]);
        image.set(r, bx2.min(RENDER_WIDTH - 1), [0.3; 3]);
    }
    // Keypoints, bright.
    for p in frame1 {
        let col = (p[0] * sx).round();
        let row = (p[1] * sy).round();
        if col >= 0.0 && row >= 0.0 {
            image.set(row as usize, col as usize, [0.95; 3]);
        }
    }

    let phrase = instruction_for(&demo.skill.name, (demo.seed % 2) as usize);
    TaskInput::new(
        image,
        tokenize(phrase),
        vec![[x1, y1, x2, y2]],
        (w, h),
        Some(demo.skill.clone()),
    )
    .expect("generated task inputs are valid")
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Learnable skill tokens, one row per skill.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillTokenBank {
    pub tokens: Mat,
}

impl SkillTokenBank {
    pub fn init<R: Rng>(rng: &mut R, num_skills: usize, dim: usize) -> Self {
        // Standard normal scaled by 1/sqrt(dim).
        Self {
            tokens: nn::randn_mat(rng, num_skills, dim, 1.0 / (dim as f64).sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub skill_tokens: SkillTokenBank,
    /// Patch-mean RGB -> token width.
    pub img_proj: LinearParams,
    /// Vocabulary embedding table.
    pub tok_embed: Mat,
    /// Concatenated corner sinusoids -> token width.
    pub box_proj: LinearParams,
    /// Skill token row -> query token.
    pub skill_proj: LinearParams,
    pub self_attn: AttnParams,
    pub cross_attn: AttnParams,
    pub ffn: FfnParams,
    pub cls_hidden: LinearParams,
    pub cls_out: LinearParams,
}

impl EncoderParams {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.dim;
        Self {
            skill_tokens: SkillTokenBank::init(rng, cfg.num_skills, d),
            img_proj: LinearParams::init(rng, 3, d),
            // Unit-scale embeddings keep the pooled language feature (and
            // with it the classifier gradient) from vanishing at this width.
            tok_embed: nn::randn_mat(rng, cfg.vocab_size, d, 1.0),
            box_proj: LinearParams::init(rng, 8 * cfg.box_freqs, d),
            skill_proj: LinearParams::init(rng, d, d),
            self_attn: AttnParams::init(rng, d),
            cross_attn: AttnParams::init(rng, d),
            ffn: FfnParams::init(rng, d, 2 * d),
            cls_hidden: LinearParams::init(rng, 2 * d, d),
            cls_out: LinearParams::init(rng, d, cfg.num_skills),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            skill_tokens: SkillTokenBank {
                tokens: Mat::zeros(
                    self.skill_tokens.tokens.nrows(),
                    self.skill_tokens.tokens.ncols(),
                ),
            },
            img_proj: self.img_proj.zeros_like(),
            tok_embed: Mat::zeros(self.tok_embed.nrows(), self.tok_embed.ncols()),
            box_proj: self.box_proj.zeros_like(),
            skill_proj: self.skill_proj.zeros_like(),
            self_attn: self.self_attn.zeros_like(),
            cross_attn: self.cross_attn.zeros_like(),
            ffn: self.ffn.zeros_like(),
            cls_hidden: self.cls_hidden.zeros_like(),
            cls_out: self.cls_out.zeros_like(),
        }
    }
}

impl TensorSet for EncoderParams {
    fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut v = vec![("skill_tokens".to_string(), &self.skill_tokens.tokens)];
        v.extend(nest("img_proj", self.img_proj.tensors()));
        v.push(("tok_embed".into(), &self.tok_embed));
        v.extend(nest("box_proj", self.box_proj.tensors()));
        v.extend(nest("skill_proj", self.skill_proj.tensors()));
        v.extend(nest("self_attn", self.self_attn.tensors()));
        v.extend(nest("cross_attn", self.cross_attn.tensors()));
        v.extend(nest("ffn", self.ffn.tensors()));
        v.extend(nest("cls_hidden", self.cls_hidden.tensors()));
        v.extend(nest("cls_out", self.cls_out.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut v = vec![("skill_tokens".to_string(), &mut self.skill_tokens.tokens)];
        v.extend(nest_mut("img_proj", self.img_proj.tensors_mut()));
        v.push(("tok_embed".into(), &mut self.tok_embed));
        v.extend(nest_mut("box_proj", self.box_proj.tensors_mut()));
        v.extend(nest_mut("skill_proj", self.skill_proj.tensors_mut()));
        v.extend(nest_mut("self_attn", self.self_attn.tensors_mut()));
        v.extend(nest_mut("cross_attn", self.cross_attn.tensors_mut()));
        v.extend(nest_mut("ffn", self.ffn.tensors_mut()));
        v.extend(nest_mut("cls_hidden", self.cls_hidden.tensors_mut()));
        v.extend(nest_mut("cls_out", self.cls_out.tensors_mut()));
        v
    }
}

// ---------------------------------------------------------------------------
// Featurizers
// ---------------------------------------------------------------------------

/// Per-channel patch means over an `image_patches x image_patches` grid.
fn patch_means(image: &ImageBuf, patches: usize) -> Mat {
    let mut means = Mat::zeros(patches * patches, 3);
    for pr in 0..patches {
        let r0 = pr * image.height / patches;
        let r1 = ((pr + 1) * image.height / patches).max(r0 + 1);
        for pc in 0..patches {
            let c0 = pc * image.width / patches;
            let c1 = ((pc + 1) * image.width / patches).max(c0 + 1);
            let mut acc = [0.0f64; 3];
            let mut count = 0.0;
            for r in r0..r1.min(image.height) {
                for c in c0..c1.min(image.width) {
                    let px = image.get(r, c);
                    acc[0] += px[0];
                    acc[1] += px[1];
                    acc[2] += px[2];
                    count += 1.0;
                }
            }
            let row = pr * patches + pc;
            for ch in 0..3 {
                means[(row, ch)] = acc[ch] / count;
            }
        }
    }
    means
}

/// Interleaved sin/cos features of one scalar at geometrically spaced
/// frequencies; `freqs` pairs per coordinate.
pub fn sinusoid_features(c: f64, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * freqs);
    for j in 0..freqs {
        let w = 1.0 / 10000f64.powf(j as f64 / freqs as f64);
        out.push((c * w).sin());
        out.push((c * w).cos());
    }
    out
}

fn box_features(boxes: &[[f64; 4]], freqs: usize) -> Mat {
    let width = 8 * freqs;
    let mut feats = Mat::zeros(boxes.len(), width);
    for (i, b) in boxes.iter().enumerate() {
        let mut col = 0;
        for coord in b {
            for v in sinusoid_features(*coord, freqs) {
                feats[(i, col)] = v;
                col += 1;
            }
        }
    }
    feats
}

/// The modality a token sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Language,
    Boxes,
    Skill,
}

/// A length-L sequence of width-D tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    pub tokens: Mat,
    pub modality: Modality,
}

struct FeaturizeCache {
    img_means: Mat,
    img_lin: LinearCache,
    token_ids: Vec<usize>,
    box_feats: Mat,
    box_lin: LinearCache,
}

fn featurize_cached(
    input: &TaskInput,
    params: &EncoderParams,
    cfg: &ModelConfig,
) -> (Mat, Mat, Mat, FeaturizeCache) {
    let img_means = patch_means(&input.image, cfg.image_patches);
    let (vi, img_lin) = linear_forward(&img_means, &params.img_proj);

    let mut vl = Mat::zeros(input.instruction.len(), cfg.dim);
    for (row, &tok) in input.instruction.iter().enumerate() {
        vl.row_mut(row).copy_from(&params.tok_embed.row(tok));
    }

    let box_feats = box_features(&input.boxes, cfg.box_freqs);
    let (vb, box_lin) = linear_forward(&box_feats, &params.box_proj);

    (
        vi,
        vl,
        vb,
        FeaturizeCache {
            img_means,
            img_lin,
            token_ids: input.instruction.clone(),
            box_feats,
            box_lin,
        },
    )
}

/// Featurizes a task input into image, language, and box token sequences.
pub fn featurize(
    input: &TaskInput,
    params: &EncoderParams,
    cfg: &ModelConfig,
) -> (TokenSeq, TokenSeq, TokenSeq) {
    let (vi, vl, vb, _) = featurize_cached(input, params, cfg);
    (
        TokenSeq { tokens: vi, modality: Modality::Image },
        TokenSeq { tokens: vl, modality: Modality::Language },
        TokenSeq { tokens: vb, modality: Modality::Boxes },
    )
}

/// Multi-head self-attention over one sequence.
pub fn mhsa(x: &TokenSeq, params: &AttnParams, cfg: &ModelConfig) -> TokenSeq {
    let (y, _) = attention_forward(&x.tokens, &x.tokens, params, cfg.heads, cfg.scaled_attention);
    TokenSeq { tokens: y, modality: x.modality }
}

/// Multi-head cross-attention: queries from `xq`, keys/values from `ykv`.
pub fn mhca(xq: &TokenSeq, ykv: &TokenSeq, params: &AttnParams, cfg: &ModelConfig) -> TokenSeq {
    let (y, _) = attention_forward(&xq.tokens, &ykv.tokens, params, cfg.heads, cfg.scaled_attention);
    TokenSeq { tokens: y, modality: xq.modality }
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

// Variance-preserving pooling (sum / sqrt(L)); plain averaging leaves the
// classifier gradient-starved at long sequence lengths.
fn pool_rows(m: &Mat) -> Mat {
    let mut out = Mat::zeros(1, m.ncols());
    for row in m.row_iter() {
        out += row;
    }
    out / (m.nrows() as f64).sqrt()
}

struct ClassifierCache {
    vi_rows: usize,
    vl_rows: usize,
    pooled: Mat,
    hid_lin: LinearCache,
    hid: Mat,
    out_lin: LinearCache,
}

fn classify_cached(
    vi: &Mat,
    vl: &Mat,
    params: &EncoderParams,
) -> (DVector<f64>, ClassifierCache) {
    let pi = pool_rows(vi);
    let pl = pool_rows(vl);
    let mut pooled = Mat::zeros(1, pi.ncols() + pl.ncols());
    pooled.columns_mut(0, pi.ncols()).copy_from(&pi);
    pooled.columns_mut(pi.ncols(), pl.ncols()).copy_from(&pl);
    let (pre, hid_lin) = linear_forward(&pooled, &params.cls_hidden);
    let hid = tanh_forward(&pre);
    let (logits_m, out_lin) = linear_forward(&hid, &params.cls_out);
    let logits = DVector::from_fn(logits_m.ncols(), |i, _| logits_m[(0, i)]);
    (
        logits,
        ClassifierCache {
            vi_rows: vi.nrows(),
            vl_rows: vl.nrows(),
            pooled,
            hid_lin,
            hid,
            out_lin,
        },
    )
}

/// Lowest index wins ties.
pub fn argmax(logits: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..logits.len() {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    best
}

/// Skill logits from the pooled image and language features, plus the
/// predicted index (lowest-index tie-break).
pub fn classify_skill(
    vi: &TokenSeq,
    vl: &TokenSeq,
    params: &EncoderParams,
) -> (DVector<f64>, usize) {
    let (logits, _) = classify_cached(&vi.tokens, &vl.tokens, params);
    let predicted = argmax(&logits);
    (logits, predicted)
}

// ---------------------------------------------------------------------------
// Skill-aware fusion
// ---------------------------------------------------------------------------

/// How the conditioning skill row is selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkillSelect {
    /// Use the task's ground-truth label (training-time teacher forcing).
    Label,
    /// Use the classifier argmax (inference).
    Classifier,
    /// Force a specific row (contrastive negatives).
    Forced(usize),
}

/// Fused conditioning context: the projected skill token plus one fused token
/// per modality.
#[derive(Debug, Clone)]
pub struct SkillAwareContext {
    pub skill_index: usize,
    pub v_skill: Mat,
    pub v_img: Mat,
    pub v_lang: Mat,
    pub v_box: Mat,
}

impl SkillAwareContext {
    /// Stacks the context into a 4 x D conditioning sequence
    /// `[skill, image, language, boxes]`.
    pub fn tokens(&self) -> Mat {
        let d = self.v_skill.ncols();
        let mut m = Mat::zeros(4, d);
        m.row_mut(0).copy_from(&self.v_skill.row(0));
        m.row_mut(1).copy_from(&self.v_img.row(0));
        m.row_mut(2).copy_from(&self.v_lang.row(0));
        m.row_mut(3).copy_from(&self.v_box.row(0));
        m
    }
}

/// Skill-independent part of the encoder: featurize, classify, and
/// self-encode each modality once.
pub struct EncodeBase {
    pub vi: Mat,
    pub vl: Mat,
    pub vb: Mat,
    pub logits: DVector<f64>,
    pub predicted: usize,
    feat: FeaturizeCache,
    cls: ClassifierCache,
    mhsa_caches: [AttnCache; 3],
    /// Self-encoded modality sequences, order `[image, language, boxes]`.
    pub encoded: [Mat; 3],
}

pub fn encode_base(input: &TaskInput, params: &EncoderParams, cfg: &ModelConfig) -> EncodeBase {
    let (vi, vl, vb, feat) = featurize_cached(input, params, cfg);
    let (logits, cls) = classify_cached(&vi, &vl, params);
    let predicted = argmax(&logits);
    let (mi, ci) = attention_forward(&vi, &vi, &params.self_attn, cfg.heads, cfg.scaled_attention);
    let (ml, cl) = attention_forward(&vl, &vl, &params.self_attn, cfg.heads, cfg.scaled_attention);
    let (mb, cb) = attention_forward(&vb, &vb, &params.self_attn, cfg.heads, cfg.scaled_attention);
    EncodeBase {
        vi,
        vl,
        vb,
        logits,
        predicted,
        feat,
        cls,
        mhsa_caches: [ci, cl, cb],
        encoded: [mi, ml, mb],
    }
}

/// Skill-dependent fusion trace for one skill row.
pub struct SkillFuse {
    pub skill_index: usize,
    skill_lin: LinearCache,
    pub s_tok: Mat,
    mhca_caches: [AttnCache; 3],
    ffn_caches: [FfnCache; 3],
    pub ctx: SkillAwareContext,
}

pub fn fuse_skill(
    base: &EncodeBase,
    skill_index: usize,
    params: &EncoderParams,
    cfg: &ModelConfig,
) -> SkillFuse {
    let row = Mat::from_fn(1, params.skill_tokens.tokens.ncols(), |_, j| {
        params.skill_tokens.tokens[(skill_index, j)]
    });
    let (s_tok, skill_lin) = linear_forward(&row, &params.skill_proj);

    let mut fused: Vec<Mat> = Vec::with_capacity(3);
    let mut mhca_caches = Vec::with_capacity(3);
    let mut ffn_caches = Vec::with_capacity(3);
    for m in &base.encoded {
        let (c, cc) =
            attention_forward(&s_tok, m, &params.cross_attn, cfg.heads, cfg.scaled_attention);
        let (f, fc) = ffn_forward(&c, &params.ffn);
        fused.push(f);
        mhca_caches.push(cc);
        ffn_caches.push(fc);
    }
    let v_box = fused.pop().unwrap();
    let v_lang = fused.pop().unwrap();
    let v_img = fused.pop().unwrap();
    let ctx = SkillAwareContext {
        skill_index,
        v_skill: s_tok.clone(),
        v_img,
        v_lang,
        v_box,
    };
    SkillFuse {
        skill_index,
        skill_lin,
        s_tok,
        mhca_caches: match <Vec<AttnCache> as TryInto<[AttnCache; 3]>>::try_into(mhca_caches) {
            Ok(a) => a,
            Err(_) => unreachable!(),
        },
        ffn_caches: match <Vec<FfnCache> as TryInto<[FfnCache; 3]>>::try_into(ffn_caches) {
            Ok(a) => a,
            Err(_) => unreachable!(),
        },
        ctx,
    }
}

/// Full encoding pass: featurize, classify, select a skill row, fuse.
pub fn skill_aware_encode(
    input: &TaskInput,
    params: &EncoderParams,
    cfg: &ModelConfig,
    select: SkillSelect,
) -> Result<SkillAwareContext, EncoderError> {
    let base = encode_base(input, params, cfg);
    let index = match select {
        SkillSelect::Label => input
            .skill_label
            .as_ref()
            .ok_or_else(|| EncoderError::BadInput("label selection without a label".into()))?
            .index,
        SkillSelect::Classifier => base.predicted,
        SkillSelect::Forced(i) => i,
    };
    if index >= cfg.num_skills {
        return Err(EncoderError::BadInput(format!(
            "skill index {index} out of range ({} skills)",
            cfg.num_skills
        )));
    }
    Ok(fuse_skill(&base, index, params, cfg).ctx)
}

// ---------------------------------------------------------------------------
// Backward passes
// ---------------------------------------------------------------------------

/// Backward through one skill fusion. `d_ctx` rows follow the context token
/// order. Returns the per-modality gradients w.r.t. the self-encoded
/// sequences; parameter and skill-token gradients accumulate into `grads`.
pub fn fuse_skill_backward(
    fuse: &SkillFuse,
    params: &EncoderParams,
    d_ctx: &Mat,
    grads: &mut EncoderParams,
) -> [Mat; 3] {
    let mut d_s_tok = Mat::from_fn(1, d_ctx.ncols(), |_, j| d_ctx[(0, j)]);
    let mut d_encoded: Vec<Mat> = Vec::with_capacity(3);
    for (i, (cc, fc)) in fuse
        .mhca_caches
        .iter()
        .zip(fuse.ffn_caches.iter())
        .enumerate()
    {
        let dv = Mat::from_fn(1, d_ctx.ncols(), |_, j| d_ctx[(1 + i, j)]);
        let (dc, ffn_g) = ffn_backward(fc, &params.ffn, &dv);
        nn::accumulate(&mut grads.ffn, &ffn_g);
        let (dq, dkv, attn_g) = attention_backward(cc, &params.cross_attn, &dc);
        nn::accumulate(&mut grads.cross_attn, &attn_g);
        d_s_tok += dq;
        d_encoded.push(dkv);
    }
    let (d_row, skill_lin_g) = linear_backward(&fuse.skill_lin, &params.skill_proj, &d_s_tok);
    nn::accumulate(&mut grads.skill_proj, &skill_lin_g);
    let mut row = grads.skill_tokens.tokens.row_mut(fuse.skill_index);
    row += d_row.row(0);
    match <Vec<Mat> as TryInto<[Mat; 3]>>::try_into(d_encoded) {
        Ok(a) => a,
        Err(_) => unreachable!(),
    }
}

/// Backward through the skill-independent stage. `d_encoded` holds gradients
/// w.r.t. the self-encoded sequences (summed over all fusions that consumed
/// them); `d_logits` is the classifier gradient.
pub fn encode_base_backward(
    base: &EncodeBase,
    params: &EncoderParams,
    d_encoded: &[Mat; 3],
    d_logits: &DVector<f64>,
    grads: &mut EncoderParams,
) {
    // Self-attention backward per modality.
    let mut d_feats: Vec<Mat> = Vec::with_capacity(3);
    for (cache, dm) in base.mhsa_caches.iter().zip(d_encoded) {
        let (dq, dkv, g) = attention_backward(cache, &params.self_attn, dm);
        nn::accumulate(&mut grads.self_attn, &g);
        d_feats.push(dq + dkv);
    }

    // Classifier backward.
    let d_logits_m = Mat::from_fn(1, d_logits.len(), |_, j| d_logits[j]);
    let (d_hid, out_g) = linear_backward(&base.cls.out_lin, &params.cls_out, &d_logits_m);
    nn::accumulate(&mut grads.cls_out, &out_g);
    let d_pre = tanh_backward(&base.cls.hid, &d_hid);
    let (d_pooled, hid_g) = linear_backward(&base.cls.hid_lin, &params.cls_hidden, &d_pre);
    nn::accumulate(&mut grads.cls_hidden, &hid_g);
    let d = params.cls_hidden.w.nrows() / 2;
    // Un-pool: broadcast back with the same 1/sqrt(L) factor.
    let d_pi = d_pooled.columns(0, d);
    let d_pl = d_pooled.columns(d, d);
    for r in 0..base.cls.vi_rows {
        let mut row = d_feats[0].row_mut(r);
        row += d_pi.row(0) / (base.cls.vi_rows as f64).sqrt();
    }
    for r in 0..base.cls.vl_rows {
        let mut row = d_feats[1].row_mut(r);
        row += d_pl.row(0) / (base.cls.vl_rows as f64).sqrt();
    }

    // Featurizer backward.
    let (_, img_g) = linear_backward(&base.feat.img_lin, &params.img_proj, &d_feats[0]);
    nn::accumulate(&mut grads.img_proj, &img_g);
    for (row, &tok) in base.feat.token_ids.iter().enumerate() {
        let mut dst = grads.tok_embed.row_mut(tok);
        dst += d_feats[1].row(row);
    }
    let (_, box_g) = linear_backward(&base.feat.box_lin, &params.box_proj, &d_feats[2]);
    nn::accumulate(&mut grads.box_proj, &box_g);
    let _ = &base.feat.box_feats;
    let _ = &base.feat.img_means;
    let _ = &base.cls.pooled;
}

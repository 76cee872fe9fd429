//! Small dense-layer and attention primitives with hand-derived backward
//! passes.
//!
//! Every forward returns a cache holding exactly what its backward needs.
//! Backward passes produce gradients in structs of the same shape as the
//! parameters, so accumulation, SGD updates, serialization, and
//! finite-difference enumeration all share one tensor-walking interface.
//!
//! Self-attention and cross-attention share one implementation: queries come
//! from `xq`, keys and values from `ykv`. For self-attention the two input
//! gradients are summed by the caller.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub type Mat = DMatrix<f64>;

/// Uniform access to every parameter tensor, keyed by a stable dotted name.
pub trait TensorSet {
    fn tensors(&self) -> Vec<(String, &Mat)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)>;
}

fn prefixed<'a>(prefix: &str, items: Vec<(String, &'a Mat)>) -> Vec<(String, &'a Mat)> {
    items
        .into_iter()
        .map(|(name, m)| (format!("{prefix}.{name}"), m))
        .collect()
}

fn prefixed_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut Mat)>,
) -> Vec<(String, &'a mut Mat)> {
    items
        .into_iter()
        .map(|(name, m)| (format!("{prefix}.{name}"), m))
        .collect()
}

/// Adds `other`'s tensors into `self`'s (same structure required).
pub fn accumulate<T: TensorSet>(into: &mut T, other: &T) {
    let mut dst = into.tensors_mut();
    let src = other.tensors();
    debug_assert_eq!(dst.len(), src.len());
    for ((_, d), (_, s)) in dst.iter_mut().zip(src.iter()) {
        **d += *s;
    }
}

pub fn randn_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `in x out`.
    pub w: Mat,
    /// `1 x out`, broadcast over rows.
    pub b: Mat,
}

impl LinearParams {
    pub fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: randn_mat(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt()),
            b: Mat::zeros(1, fan_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Mat::zeros(self.w.nrows(), self.w.ncols()),
            b: Mat::zeros(1, self.b.ncols()),
        }
    }
}

impl TensorSet for LinearParams {
    fn tensors(&self) -> Vec<(String, &Mat)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
    }
}

pub struct LinearCache {
    x: Mat,
}

pub fn linear_forward(x: &Mat, p: &LinearParams) -> (Mat, LinearCache) {
    let mut y = x * &p.w;
    for mut row in y.row_iter_mut() {
        row += &p.b;
    }
    (y, LinearCache { x: x.clone() })
}

pub fn linear_backward(cache: &LinearCache, p: &LinearParams, dy: &Mat) -> (Mat, LinearParams) {
    let dx = dy * p.w.transpose();
    let dw = cache.x.transpose() * dy;
    let mut db = Mat::zeros(1, p.b.ncols());
    for row in dy.row_iter() {
        db += row;
    }
    (dx, LinearParams { w: dw, b: db })
}

// ---------------------------------------------------------------------------
// Elementwise tanh
// ---------------------------------------------------------------------------

pub fn tanh_forward(x: &Mat) -> Mat {
    x.map(f64::tanh)
}

/// `y` is the tanh output; `dy * (1 - y^2)` elementwise.
pub fn tanh_backward(y: &Mat, dy: &Mat) -> Mat {
    Mat::from_fn(y.nrows(), y.ncols(), |i, j| {
        dy[(i, j)] * (1.0 - y[(i, j)] * y[(i, j)])
    })
}

// ---------------------------------------------------------------------------
// Softmax over rows
// ---------------------------------------------------------------------------

pub fn softmax_rows(scores: &Mat) -> Mat {
    let mut out = scores.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row /= sum;
    }
    out
}

/// Given attention weights `a = softmax(s)` and upstream `da`, returns `ds`:
/// `ds_ij = a_ij (da_ij - sum_j a_ij da_ij)`.
pub fn softmax_backward_rows(a: &Mat, da: &Mat) -> Mat {
    let mut ds = Mat::zeros(a.nrows(), a.ncols());
    for i in 0..a.nrows() {
        let dot: f64 = (0..a.ncols()).map(|j| a[(i, j)] * da[(i, j)]).sum();
        for j in 0..a.ncols() {
            ds[(i, j)] = a[(i, j)] * (da[(i, j)] - dot);
        }
    }
    ds
}

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
}

impl AttnParams {
    pub fn init<R: Rng>(rng: &mut R, dim: usize) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        Self {
            wq: randn_mat(rng, dim, dim, scale),
            wk: randn_mat(rng, dim, dim, scale),
            wv: randn_mat(rng, dim, dim, scale),
            wo: randn_mat(rng, dim, dim, scale),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Mat| Mat::zeros(m.nrows(), m.ncols());
        Self {
            wq: z(&self.wq),
            wk: z(&self.wk),
            wv: z(&self.wv),
            wo: z(&self.wo),
        }
    }
}

impl TensorSet for AttnParams {
    fn tensors(&self) -> Vec<(String, &Mat)> {
        vec![
            ("wq".into(), &self.wq),
            ("wk".into(), &self.wk),
            ("wv".into(), &self.wv),
            ("wo".into(), &self.wo),
        ]
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        vec![
            ("wq".into(), &mut self.wq),
            ("wk".into(), &mut self.wk),
            ("wv".into(), &mut self.wv),
            ("wo".into(), &mut self.wo),
        ]
    }
}

pub struct AttnCache {
    xq: Mat,
    ykv: Mat,
    /// Per-head projected queries/keys/values, owned and contiguous so the
    /// head-sized matmuls stay on the fast gemm path.
    q_heads: Vec<Mat>,
    k_heads: Vec<Mat>,
    v_heads: Vec<Mat>,
    /// Per-head attention weight matrices, `Lq x Lk`.
    attn: Vec<Mat>,
    /// Concatenated head outputs before the output map.
    o: Mat,
    heads: usize,
    scaled: bool,
}

impl AttnCache {
    /// Row-stochastic attention weights of head `h`.
    pub fn attention_weights(&self, h: usize) -> &Mat {
        &self.attn[h]
    }

    pub fn num_heads(&self) -> usize {
        self.heads
    }
}

/// Attention with queries from `xq` and keys/values from `ykv`. Output length
/// equals the query length. `scaled` divides scores by sqrt(head dim);
/// disabling it reproduces the unscaled formulation.
pub fn attention_forward(
    xq: &Mat,
    ykv: &Mat,
    p: &AttnParams,
    heads: usize,
    scaled: bool,
) -> (Mat, AttnCache) {
    let dim = p.wq.ncols();
    assert!(dim % heads == 0, "dim {dim} not divisible by heads {heads}");
    let dh = dim / heads;
    let q = xq * &p.wq;
    let k = ykv * &p.wk;
    let v = ykv * &p.wv;

    let mut o = Mat::zeros(xq.nrows(), dim);
    let mut attn = Vec::with_capacity(heads);
    let mut q_heads = Vec::with_capacity(heads);
    let mut k_heads = Vec::with_capacity(heads);
    let mut v_heads = Vec::with_capacity(heads);
    for h in 0..heads {
        let c0 = h * dh;
        let qh: Mat = q.columns(c0, dh).into_owned();
        let kh: Mat = k.columns(c0, dh).into_owned();
        let vh: Mat = v.columns(c0, dh).into_owned();
        let mut scores = &qh * kh.transpose();
        if scaled {
            scores /= (dh as f64).sqrt();
        }
        let a = softmax_rows(&scores);
        let oh = &a * &vh;
        o.columns_mut(c0, dh).copy_from(&oh);
        attn.push(a);
        q_heads.push(qh);
        k_heads.push(kh);
        v_heads.push(vh);
    }
    let y = &o * &p.wo;
    (
        y,
        AttnCache {
            xq: xq.clone(),
            ykv: ykv.clone(),
            q_heads,
            k_heads,
            v_heads,
            attn,
            o,
            heads,
            scaled,
        },
    )
}

/// Backward pass; returns `(dxq, dykv, grads)`. For self-attention the caller
/// adds the two input gradients.
pub fn attention_backward(
    cache: &AttnCache,
    p: &AttnParams,
    dy: &Mat,
) -> (Mat, Mat, AttnParams) {
    let dim = p.wq.ncols();
    let dh = dim / cache.heads;

    let d_o = dy * p.wo.transpose();
    let dwo = cache.o.tr_mul(dy);

    let lq = cache.xq.nrows();
    let lk = cache.ykv.nrows();
    let mut dq = Mat::zeros(lq, dim);
    let mut dk = Mat::zeros(lk, dim);
    let mut dv = Mat::zeros(lk, dim);
    for h in 0..cache.heads {
        let c0 = h * dh;
        let a = &cache.attn[h];
        let doh: Mat = d_o.columns(c0, dh).into_owned();
        let vh = &cache.v_heads[h];
        let qh = &cache.q_heads[h];
        let kh = &cache.k_heads[h];

        let da = &doh * vh.transpose();
        dv.columns_mut(c0, dh).copy_from(&a.tr_mul(&doh));
        let mut ds = softmax_backward_rows(a, &da);
        if cache.scaled {
            ds /= (dh as f64).sqrt();
        }
        dq.columns_mut(c0, dh).copy_from(&(&ds * kh));
        dk.columns_mut(c0, dh).copy_from(&ds.tr_mul(qh));
    }

    let dxq = &dq * p.wq.transpose();
    let dykv = &dk * p.wk.transpose() + &dv * p.wv.transpose();
    let grads = AttnParams {
        wq: cache.xq.tr_mul(&dq),
        wk: cache.ykv.tr_mul(&dk),
        wv: cache.ykv.tr_mul(&dv),
        wo: dwo,
    };
    (dxq, dykv, grads)
}

// ---------------------------------------------------------------------------
// Feed-forward block: linear -> tanh -> linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub l1: LinearParams,
    pub l2: LinearParams,
}

impl FfnParams {
    pub fn init<R: Rng>(rng: &mut R, dim: usize, hidden: usize) -> Self {
        Self {
            l1: LinearParams::init(rng, dim, hidden),
            l2: LinearParams::init(rng, hidden, dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            l1: self.l1.zeros_like(),
            l2: self.l2.zeros_like(),
        }
    }
}

impl TensorSet for FfnParams {
    fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut v = prefixed("l1", self.l1.tensors());
        v.extend(prefixed("l2", self.l2.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut v = prefixed_mut("l1", self.l1.tensors_mut());
        v.extend(prefixed_mut("l2", self.l2.tensors_mut()));
        v
    }
}

pub struct FfnCache {
    c1: LinearCache,
    h: Mat,
    c2: LinearCache,
}

pub fn ffn_forward(x: &Mat, p: &FfnParams) -> (Mat, FfnCache) {
    let (pre, c1) = linear_forward(x, &p.l1);
    let h = tanh_forward(&pre);
    let (y, c2) = linear_forward(&h, &p.l2);
    (y, FfnCache { c1, h, c2 })
}

pub fn ffn_backward(cache: &FfnCache, p: &FfnParams, dy: &Mat) -> (Mat, FfnParams) {
    let (dh, g2) = linear_backward(&cache.c2, &p.l2, dy);
    let dpre = tanh_backward(&cache.h, &dh);
    let (dx, g1) = linear_backward(&cache.c1, &p.l1, &dpre);
    (dx, FfnParams { l1: g1, l2: g2 })
}

/// Exposes nested tensor names for aggregate parameter structs.
pub fn nest<'a>(prefix: &str, items: Vec<(String, &'a Mat)>) -> Vec<(String, &'a Mat)> {
    prefixed(prefix, items)
}

pub fn nest_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut Mat)>,
) -> Vec<(String, &'a mut Mat)> {
    prefixed_mut(prefix, items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    /// Central-difference check of a scalar function of one tensor.
    fn fd_check<F: FnMut(&Mat) -> f64>(x: &Mat, analytic: &Mat, mut f: F, tol: f64) {
        let eps = 1e-6;
        let mut xp = x.clone();
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                xp[(i, j)] = x[(i, j)] + eps;
                let lp = f(&xp);
                xp[(i, j)] = x[(i, j)] - eps;
                let lm = f(&xp);
                xp[(i, j)] = x[(i, j)];
                let fd = (lp - lm) / (2.0 * eps);
                let a = analytic[(i, j)];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    ((a - fd) / denom).abs() < tol,
                    "grad mismatch at ({i},{j}): analytic {a} vs fd {fd}"
                );
            }
        }
    }

    fn loss_of(y: &Mat) -> f64 {
        // Simple nonlinear readout so upstream gradients are non-trivial.
        y.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum()
    }

    fn dloss_of(y: &Mat) -> Mat {
        let mut d = y.clone();
        for (i, v) in d.iter_mut().enumerate() {
            *v = 2.0 * (i as f64 + 1.0) * *v;
        }
        d
    }

    #[test]
    fn linear_backward_matches_fd() {
        let mut r = rng();
        let x = randn_mat(&mut r, 5, 3, 1.0);
        let p = LinearParams::init(&mut r, 3, 4);
        let (y, cache) = linear_forward(&x, &p);
        let (dx, grads) = linear_backward(&cache, &p, &dloss_of(&y));

        fd_check(&x, &dx, |xt| loss_of(&linear_forward(xt, &p).0), 1e-6);
        fd_check(&p.w, &grads.w, |wt| {
            let pt = LinearParams { w: wt.clone(), b: p.b.clone() };
            loss_of(&linear_forward(&x, &pt).0)
        }, 1e-6);
        fd_check(&p.b, &grads.b, |bt| {
            let pt = LinearParams { w: p.w.clone(), b: bt.clone() };
            loss_of(&linear_forward(&x, &pt).0)
        }, 1e-6);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut r = rng();
        let x = randn_mat(&mut r, 7, 8, 1.0);
        let p = AttnParams::init(&mut r, 8);
        let (_, cache) = attention_forward(&x, &x, &p, 2, true);
        for h in 0..cache.num_heads() {
            let a = cache.attention_weights(h);
            for row in a.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_self_attention_is_value_path() {
        let mut r = rng();
        let x = randn_mat(&mut r, 1, 8, 1.0);
        let p = AttnParams::init(&mut r, 8);
        let (y, _) = attention_forward(&x, &x, &p, 2, true);
        let expected = (&x * &p.wv) * &p.wo;
        assert!((y - expected).abs().max() < 1e-12);
    }

    #[test]
    fn single_kv_token_ignores_queries() {
        let mut r = rng();
        let y = randn_mat(&mut r, 1, 8, 1.0);
        let p = AttnParams::init(&mut r, 8);
        for n_q in [1usize, 3, 6] {
            let xq = randn_mat(&mut r, n_q, 8, 1.0);
            let (out, _) = attention_forward(&xq, &y, &p, 4, true);
            assert_eq!(out.nrows(), n_q);
            let broadcast = (&y * &p.wv) * &p.wo;
            for row in out.row_iter() {
                assert!((row - broadcast.row(0)).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn self_attention_is_permutation_equivariant() {
        let mut r = rng();
        let x = randn_mat(&mut r, 6, 8, 1.0);
        let p = AttnParams::init(&mut r, 8);
        let (y, _) = attention_forward(&x, &x, &p, 2, true);

        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut xp = Mat::zeros(6, 8);
        for (dst, &src) in perm.iter().enumerate() {
            xp.row_mut(dst).copy_from(&x.row(src));
        }
        let (yp, _) = attention_forward(&xp, &xp, &p, 2, true);
        for (dst, &src) in perm.iter().enumerate() {
            assert!((yp.row(dst) - y.row(src)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn cross_equals_self_when_inputs_tied() {
        let mut r = rng();
        let x = randn_mat(&mut r, 5, 8, 1.0);
        let p = AttnParams::init(&mut r, 8);
        let (a, _) = attention_forward(&x, &x, &p, 2, true);
        let (b, _) = attention_forward(&x, &x.clone(), &p, 2, true);
        assert_eq!(a, b);
    }

    #[test]
    fn cross_attention_output_length_is_query_length() {
        let mut r = rng();
        let p = AttnParams::init(&mut r, 8);
        for (lq, lk) in [(1usize, 4usize), (3, 1), (5, 7)] {
            let xq = randn_mat(&mut r, lq, 8, 1.0);
            let ykv = randn_mat(&mut r, lk, 8, 1.0);
            let (y, _) = attention_forward(&xq, &ykv, &p, 2, true);
            assert_eq!(y.nrows(), lq);
            assert_eq!(y.ncols(), 8);
        }
    }

    #[test]
    fn attention_backward_matches_fd() {
        let mut r = rng();
        let xq = randn_mat(&mut r, 4, 8, 1.0);
        let ykv = randn_mat(&mut r, 3, 8, 1.0);
        let p = AttnParams::init(&mut r, 8);
        for scaled in [true, false] {
            let (y, cache) = attention_forward(&xq, &ykv, &p, 2, scaled);
            let (dxq, dykv, grads) = attention_backward(&cache, &p, &dloss_of(&y));

            fd_check(&xq, &dxq, |x| {
                loss_of(&attention_forward(x, &ykv, &p, 2, scaled).0)
            }, 1e-5);
            fd_check(&ykv, &dykv, |yk| {
                loss_of(&attention_forward(&xq, yk, &p, 2, scaled).0)
            }, 1e-5);
            for (name, g) in grads.tensors() {
                let analytic = g.clone();
                let base = p.clone();
                fd_check(
                    base.tensors().iter().find(|(n, _)| *n == name).unwrap().1,
                    &analytic,
                    |wt| {
                        let mut pt = base.clone();
                        for (n, m) in pt.tensors_mut() {
                            if n == name {
                                m.copy_from(wt);
                            }
                        }
                        loss_of(&attention_forward(&xq, &ykv, &pt, 2, scaled).0)
                    },
                    1e-5,
                );
            }
        }
    }

    #[test]
    fn self_attention_input_grad_is_sum_of_paths() {
        let mut r = rng();
        let x = randn_mat(&mut r, 4, 8, 1.0);
        let p = AttnParams::init(&mut r, 8);
        let (y, cache) = attention_forward(&x, &x, &p, 2, true);
        let (dxq, dykv, _) = attention_backward(&cache, &p, &dloss_of(&y));
        let dx = dxq + dykv;
        fd_check(&x, &dx, |xt| {
            loss_of(&attention_forward(xt, xt, &p, 2, true).0)
        }, 1e-5);
    }

    #[test]
    fn ffn_backward_matches_fd() {
        let mut r = rng();
        let x = randn_mat(&mut r, 3, 6, 1.0);
        let p = FfnParams::init(&mut r, 6, 12);
        let (y, cache) = ffn_forward(&x, &p);
        let (dx, grads) = ffn_backward(&cache, &p, &dloss_of(&y));

        fd_check(&x, &dx, |xt| loss_of(&ffn_forward(xt, &p).0), 1e-5);
        for (name, g) in grads.tensors() {
            let analytic = g.clone();
            fd_check(
                p.tensors().iter().find(|(n, _)| *n == name).unwrap().1,
                &analytic,
                |wt| {
                    let mut pt = p.clone();
                    for (n, m) in pt.tensors_mut() {
                        if n == name {
                            m.copy_from(wt);
                        }
                    }
                    loss_of(&ffn_forward(&x, &pt).0)
                },
                1e-5,
            );
        }
    }

    #[test]
    fn accumulate_adds_tensors() {
        let mut r = rng();
        let mut a = LinearParams::init(&mut r, 3, 2);
        let b = LinearParams::init(&mut r, 3, 2);
        let expect = &a.w + &b.w;
        accumulate(&mut a, &b);
        assert_eq!(a.w, expect);
    }
}

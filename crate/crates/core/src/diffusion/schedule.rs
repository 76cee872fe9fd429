//! Forward noise schedule.

use super::{DiffusionError, FlowLatent};
use crate::nn::Mat;
use serde::{Deserialize, Serialize};

/// Beta schedule with cached alpha and cumulative-alpha arrays.
/// `alpha_bar(0) = 1` by convention; steps run `1..=len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// `m + 1` entries, index 0 is 1.
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear beta ramp; the stock schedule is `linear(m, 1e-4, 0.02)`.
    pub fn linear(m: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if m == 0 {
            return Err(DiffusionError::BadSchedule("schedule is empty".into()));
        }
        let betas: Vec<f64> = (0..m)
            .map(|k| {
                if m == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * k as f64 / (m - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::BadSchedule("schedule is empty".into()));
        }
        if betas.iter().any(|b| !(0.0 < *b && *b < 1.0)) {
            return Err(DiffusionError::BadSchedule(
                "betas must lie in (0, 1)".into(),
            ));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// `beta_k` for `k` in `1..=len()`.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    /// Cumulative product; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    pub fn check_step(&self, k: usize) -> Result<(), DiffusionError> {
        if k == 0 || k > self.len() {
            return Err(DiffusionError::BadStep { k, m: self.len() });
        }
        Ok(())
    }
}

/// `z_k = sqrt(abar_k) z0 + sqrt(1 - abar_k) eps`, elementwise.
pub fn forward_diffuse(
    z0: &Mat,
    k: usize,
    eps: &Mat,
    schedule: &DiffusionSchedule,
) -> Result<Mat, DiffusionError> {
    schedule.check_step(k)?;
    if eps.shape() != z0.shape() {
        return Err(DiffusionError::ShapeMismatch(format!(
            "noise is {:?}, latent is {:?}",
            eps.shape(),
            z0.shape()
        )));
    }
    let ab = schedule.alpha_bar(k);
    Ok(z0 * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

/// [`forward_diffuse`] on a [`FlowLatent`].
pub fn forward_diffuse_latent(
    z0: &FlowLatent,
    k: usize,
    eps: &Mat,
    schedule: &DiffusionSchedule,
) -> Result<FlowLatent, DiffusionError> {
    Ok(FlowLatent {
        frames: z0.frames,
        points: z0.points,
        z: forward_diffuse(&z0.z, k, eps, schedule)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::randn_mat;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stock_schedule_invariants() {
        let s = DiffusionSchedule::linear(50, 1e-4, 0.02).unwrap();
        assert_eq!(s.len(), 50);
        assert_eq!(s.alpha_bar(0), 1.0);
        for k in 1..=50 {
            assert!(s.alpha_bar(k) < s.alpha_bar(k - 1), "abar not decreasing");
            assert!(s.alpha_bar(k) > 0.0 && s.alpha_bar(k) <= 1.0);
            // sqrt(abar)^2 + (1 - abar) = 1 identically.
            let ab = s.alpha_bar(k);
            assert_eq!(ab.sqrt().powi(2) + (1.0 - ab), 1.0 + (ab.sqrt().powi(2) - ab));
        }
    }

    #[test]
    fn zero_noise_scales_by_sqrt_alpha_bar() {
        let s = DiffusionSchedule::linear(10, 1e-4, 0.02).unwrap();
        let z0 = Mat::from_row_slice(2, 2, &[1.0, -0.5, 0.25, 0.75]);
        let eps = Mat::zeros(2, 2);
        let zk = forward_diffuse(&z0, 7, &eps, &s).unwrap();
        let expect = &z0 * s.alpha_bar(7).sqrt();
        assert_eq!(zk, expect);
    }

    #[test]
    fn out_of_range_steps_are_rejected() {
        let s = DiffusionSchedule::linear(10, 1e-4, 0.02).unwrap();
        let z0 = Mat::zeros(2, 2);
        let eps = Mat::zeros(2, 2);
        assert!(matches!(
            forward_diffuse(&z0, 0, &eps, &s),
            Err(DiffusionError::BadStep { .. })
        ));
        assert!(matches!(
            forward_diffuse(&z0, 11, &eps, &s),
            Err(DiffusionError::BadStep { .. })
        ));
    }

    #[test]
    fn algebraic_inversion_recovers_z0() {
        let s = DiffusionSchedule::linear(25, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in [1usize, 5, 25] {
            let z0 = randn_mat(&mut rng, 4, 2, 1.0);
            let eps = randn_mat(&mut rng, 4, 2, 1.0);
            let zk = forward_diffuse(&z0, k, &eps, &s).unwrap();
            let ab = s.alpha_bar(k);
            let back = (zk - &eps * (1.0 - ab).sqrt()) / ab.sqrt();
            assert!((back - z0).abs().max() < 1e-10);
        }
    }

    #[test]
    fn forward_variance_matches_mixture() {
        // var(z_k) ~ abar * var(z0) + (1 - abar) for unit-variance z0,
        // Monte-Carlo over 1e4 noise draws, 5% tolerance.
        let s = DiffusionSchedule::linear(50, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = 40;
        let n = 10_000;
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let z0 = randn_mat(&mut rng, 1, 1, 1.0);
            let eps = randn_mat(&mut rng, 1, 1, 1.0);
            vals.push(forward_diffuse(&z0, k, &eps, &s).unwrap()[(0, 0)]);
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let expect = s.alpha_bar(k) * 1.0 + (1.0 - s.alpha_bar(k));
        assert!(
            (var - expect).abs() < 0.05 * expect,
            "var {var} vs expected {expect}"
        );
    }
}

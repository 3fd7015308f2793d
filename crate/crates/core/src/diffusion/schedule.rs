use serde::{Deserialize, Serialize};

use crate::error::{GaudaError, Result};
use crate::numeric::Tensor;

/// Variance schedule over `T` steps. Timesteps are 1-based: `t ∈ 1..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly interpolated betas, both endpoints included.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(GaudaError::invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(GaudaError::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(GaudaError::invalid("every beta must lie in (0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn idx(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(GaudaError::invalid(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.idx(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.idx(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.idx(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Stable identifier for provenance records.
    pub fn hash(&self) -> String {
        let t = Tensor::new(vec![self.steps()], self.betas.clone()).expect("betas are finite");
        crate::numeric::content_hash([&t])
    }

    /// `z_t = √ᾱ_t z_0 + √(1-ᾱ_t) ε`.
    pub fn forward_noise(&self, z0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        let ab = self.alpha_bar(t)?;
        z0.scale(ab.sqrt())?.add(&eps.scale((1.0 - ab).sqrt())?)
    }

    /// Row-wise forward noising where each row has its own timestep.
    pub fn forward_noise_rows(&self, z0: &Tensor, ts: &[usize], eps: &Tensor) -> Result<Tensor> {
        if z0.shape() != eps.shape() || z0.rows() != ts.len() {
            return Err(GaudaError::ShapeMismatch {
                op: "forward_noise_rows",
                lhs: z0.shape().to_vec(),
                rhs: eps.shape().to_vec(),
            });
        }
        let d = z0.cols();
        let mut out = vec![0.0; z0.len()];
        for (i, &t) in ts.iter().enumerate() {
            let ab = self.alpha_bar(t)?;
            let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
            for j in 0..d {
                out[i * d + j] = a * z0.data()[i * d + j] + b * eps.data()[i * d + j];
            }
        }
        Tensor::new(z0.shape().to_vec(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_step_hand_example() {
        let s = NoiseSchedule::linear(4, 0.1, 0.4).unwrap();
        let betas = [0.1, 0.2, 0.3, 0.4];
        let bars = [0.9, 0.72, 0.504, 0.3024];
        for t in 1..=4 {
            assert!((s.beta(t).unwrap() - betas[t - 1]).abs() < 1e-15);
            assert!((s.alpha_bar(t).unwrap() - bars[t - 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step() {
        let s = NoiseSchedule::linear(1, 0.05, 0.3).unwrap();
        assert_eq!(s.alpha_bar(1).unwrap(), 0.95);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(NoiseSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        let s = NoiseSchedule::linear(3, 0.1, 0.2).unwrap();
        assert!(s.alpha_bar(0).is_err() && s.alpha_bar(4).is_err());
    }

    #[test]
    fn zero_noise_scales_signal() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.05).unwrap();
        let z0 = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let zt = s.forward_noise(&z0, 7, &Tensor::zeros(vec![3])).unwrap();
        let k = s.alpha_bar(7).unwrap().sqrt();
        for (a, b) in zt.data().iter().zip(z0.data()) {
            assert!((a - k * b).abs() < 1e-15);
        }
    }

    #[test]
    fn aggressive_schedule_forgets_signal() {
        let s = NoiseSchedule::linear(100, 0.2, 0.5).unwrap();
        let z0 = Tensor::new(vec![2], vec![3.0, -1.0]).unwrap();
        let eps = Tensor::new(vec![2], vec![0.3, 0.7]).unwrap();
        let zt = s.forward_noise(&z0, 100, &eps).unwrap();
        let ab = s.alpha_bar(100).unwrap();
        let bound = ab.sqrt() * z0.norm_sq().sqrt() + (1.0 - (1.0 - ab).sqrt()) * eps.norm_sq().sqrt();
        assert!(zt.sub(&eps).unwrap().norm_sq().sqrt() <= bound + 1e-15);
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{GaudaError, Result};
use crate::numeric::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// AdamW: decay applied directly to the weights, not via the gradient.
    pub decoupled: bool,
}

impl AdamConfig {
    /// Downstream-model settings: Adam(0.9, 0.999), constant lr 1e-3.
    pub fn downstream() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: false,
        }
    }

    /// Generative-model settings: AdamW(0.5, 0.999) with the given lr and decay.
    pub fn generative(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            decoupled: true,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
}

/// First/second moment state for one parameter list.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[Vec<usize>]) -> Self {
        Adam {
            config,
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> impl Iterator<Item = &Tensor> {
        self.m.iter().chain(self.v.iter())
    }

    /// Restores moments saved via [`Adam::moments`].
    pub fn restore(&mut self, step: u64, moments: Vec<Tensor>) -> Result<()> {
        let n = self.m.len();
        if moments.len() != 2 * n {
            return Err(GaudaError::invalid("moment count mismatch"));
        }
        let mut it = moments.into_iter();
        self.m = it.by_ref().take(n).collect();
        self.v = it.collect();
        self.step = step;
        Ok(())
    }

    /// One bias-corrected update. Non-finite gradients abort before any
    /// parameter is touched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(GaudaError::invalid(format!(
                "optimizer tracks {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(GaudaError::ShapeMismatch {
                    op: "Adam::step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(GaudaError::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let gd = g.data();
            let pd_snapshot: Vec<f64> = p.data().to_vec();
            m.update(|md| {
                for (mi, (&gi, &pi)) in md.iter_mut().zip(gd.iter().zip(&pd_snapshot)) {
                    let gi = if c.decoupled { gi } else { gi + c.weight_decay * pi };
                    *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                }
            })?;
            v.update(|vd| {
                for (vi, (&gi, &pi)) in vd.iter_mut().zip(gd.iter().zip(&pd_snapshot)) {
                    let gi = if c.decoupled { gi } else { gi + c.weight_decay * pi };
                    *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                }
            })?;
            let (md, vd) = (m.data(), v.data());
            p.update(|pd| {
                for (i, pi) in pd.iter_mut().enumerate() {
                    if c.decoupled && c.weight_decay > 0.0 {
                        *pi -= c.lr * c.weight_decay * *pi;
                    }
                    let mh = md[i] / bc1;
                    let vh = vd[i] / bc2;
                    *pi -= c.lr * mh / (vh.sqrt() + c.eps);
                }
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::full(vec![3], 0.7);
        let mut opt = Adam::new(AdamConfig::downstream(), &[vec![3]]);
        for _ in 0..10 {
            opt.step(&mut [&mut p], &[Tensor::zeros(vec![3])]).unwrap();
        }
        assert_eq!(p, Tensor::full(vec![3], 0.7));
        assert_eq!(opt.steps(), 10);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let cfg = AdamConfig::downstream();
        let mut p = Tensor::zeros(vec![1]);
        let mut opt = Adam::new(cfg, &[vec![1]]);
        let g = Tensor::full(vec![1], 0.37);
        let mut prev = 0.0;
        for _ in 0..200 {
            opt.step(&mut [&mut p], &[g.clone()]).unwrap();
            let now = p.data()[0];
            assert!(((prev - now) - cfg.lr).abs() < 1e-9);
            prev = now;
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [1.5, -2.0, 0.25];
        let mut p = Tensor::zeros(vec![3]);
        let mut opt = Adam::new(AdamConfig::downstream().with_lr(1e-2), &[vec![3]]);
        for _ in 0..5000 {
            let g: Vec<f64> = p.data().iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            opt.step(&mut [&mut p], &[Tensor::new(vec![3], g).unwrap()]).unwrap();
        }
        for (x, t) in p.data().iter().zip(&target) {
            assert!((x - t).abs() < 1e-6, "{x} vs {t}");
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = Tensor::full(vec![2], 1.0);
        let mut opt = Adam::new(AdamConfig::downstream(), &[vec![2]]);
        // Tensor rejects NaN at construction, so a non-finite gradient can only
        // arrive through a mismatched optimizer; check the shape path instead.
        assert!(opt.step(&mut [&mut p], &[Tensor::zeros(vec![3])]).is_err());
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn adamw_decays_weights_without_gradient() {
        let mut p = Tensor::full(vec![1], 1.0);
        let mut opt = Adam::new(AdamConfig::generative(0.1, 0.5), &[vec![1]]);
        opt.step(&mut [&mut p], &[Tensor::zeros(vec![1])]).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-12);
    }
}

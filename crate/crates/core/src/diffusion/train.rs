use serde::{Deserialize, Serialize};

use super::{ConditionalDenoiser, NoiseSchedule};
use crate::error::{GaudaError, Result};
use crate::nn::{Adam, AdamConfig, Parameterized};
use crate::numeric::{RngStream, Tensor};
use crate::sampling::WeightedIndex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Probability of replacing the class with the null token.
    pub cond_drop: f64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        DiffusionTrainConfig {
            steps: 4000,
            batch: 64,
            lr: 2e-3,
            weight_decay: 0.0,
            cond_drop: 0.2,
        }
    }
}

/// Trains the denoiser on rows of `latents`.
///
/// `labels[i]` lists the classes row `i` may be conditioned on; one is drawn
/// uniformly per visit. Returns the per-step loss curve.
pub fn train_denoiser(
    model: &mut ConditionalDenoiser,
    latents: &Tensor,
    labels: &[Vec<usize>],
    sched: &NoiseSchedule,
    cfg: &DiffusionTrainConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    train_denoiser_weighted(model, latents, labels, None, sched, cfg, rng)
}

/// As [`train_denoiser`], drawing rows proportionally to `row_weights`
/// instead of uniformly when given.
pub fn train_denoiser_weighted(
    model: &mut ConditionalDenoiser,
    latents: &Tensor,
    labels: &[Vec<usize>],
    row_weights: Option<&[f64]>,
    sched: &NoiseSchedule,
    cfg: &DiffusionTrainConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let n = latents.rows();
    if n == 0 || labels.len() != n || labels.iter().any(|l| l.is_empty()) {
        return Err(GaudaError::invalid("every latent row needs at least one conditioning label"));
    }
    let index = match row_weights {
        Some(w) if w.len() == n => Some(WeightedIndex::new(w)?),
        Some(_) => return Err(GaudaError::invalid("one weight per latent row required")),
        None => None,
    };
    let mut opt = Adam::new(
        AdamConfig::generative(cfg.lr, cfg.weight_decay),
        &model.param_shapes(),
    );
    let d = latents.cols();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch)
            .map(|_| match &index {
                Some(w) => w.draw(rng),
                None => rng.below(n),
            })
            .collect();
        let z0 = latents.select_rows(&idx)?;
        let ts: Vec<usize> = (0..cfg.batch).map(|_| 1 + rng.below(sched.steps())).collect();
        let eps = rng.gaussian(&[cfg.batch, d]);
        let classes: Vec<usize> = idx
            .iter()
            .map(|&i| {
                let c = &labels[i];
                if rng.bernoulli(cfg.cond_drop) {
                    model.null_class()
                } else {
                    c[rng.below(c.len())]
                }
            })
            .collect();
        let (loss, grads) = model
            .simple_loss(&z0, &ts, &eps, &classes, sched)
            .map_err(|e| GaudaError::NumericFailure { step, context: e.to_string() })?;
        opt.step(&mut model.params_mut(), &grads)
            .map_err(|e| GaudaError::NumericFailure { step, context: e.to_string() })?;
        curve.push(loss);
    }
    Ok(curve)
}

use serde::{Deserialize, Serialize};

use super::{ConditionalDenoiser, EpsPredictor, NoiseSchedule};
use crate::error::{GaudaError, Result};
use crate::numeric::{RngStream, Tensor};

/// Default guidance strength.
pub const DEFAULT_GUIDANCE: f64 = 3.0;

/// Classifier-free guidance: `(1 + ω) ε_cond − ω ε_uncond`, evaluated as
/// `ε_cond + ω (ε_cond − ε_uncond)` so equal inputs come back unchanged.
pub fn cfg_combine(eps_cond: &Tensor, eps_uncond: &Tensor, omega: f64) -> Result<Tensor> {
    eps_cond.add(&eps_cond.sub(eps_uncond)?.scale(omega)?)
}

fn at_step(step: usize) -> impl Fn(GaudaError) -> GaudaError {
    move |e| match e {
        GaudaError::NonFinite(ctx) => GaudaError::NumericFailure { step, context: ctx },
        other => other,
    }
}

/// DDPM ancestral sampling of `n` latents, with reverse-step variance `β_t`.
///
/// With `class = Some(c)` and `omega > 0` each step combines the conditional
/// and null-class predictions; with `omega == 0` only the conditional branch
/// is evaluated.
pub fn reverse_sample<P: EpsPredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    class: Option<usize>,
    omega: f64,
    rng: &mut RngStream,
    n: usize,
) -> Result<Tensor> {
    if n == 0 {
        return Err(GaudaError::invalid("requested zero samples"));
    }
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(GaudaError::invalid(format!("guidance strength {omega} must be >= 0")));
    }
    let d = model.latent_dim();
    let mut z = rng.gaussian(&[n, d]);
    for t in (1..=sched.steps()).rev() {
        let eps = match class {
            Some(c) if omega > 0.0 => {
                let cond = model.predict_eps(&z, t, Some(c)).map_err(at_step(t))?;
                let uncond = model.predict_eps(&z, t, None).map_err(at_step(t))?;
                cfg_combine(&cond, &uncond, omega).map_err(at_step(t))?
            }
            _ => model.predict_eps(&z, t, class).map_err(at_step(t))?,
        };
        z = ancestral_step(sched, t, &z, &eps, rng).map_err(at_step(t))?;
    }
    Ok(z)
}

/// One reverse step: posterior mean from the predicted noise, plus `√β_t ξ`
/// for `t > 1`.
pub fn ancestral_step(
    sched: &NoiseSchedule,
    t: usize,
    z: &Tensor,
    eps: &Tensor,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let beta = sched.beta(t)?;
    let alpha = sched.alpha(t)?;
    let ab = sched.alpha_bar(t)?;
    let coef = beta / (1.0 - ab).sqrt();
    let mean = z.sub(&eps.scale(coef)?)?.scale(1.0 / alpha.sqrt())?;
    if t > 1 {
        let noise = rng.gaussian(z.shape()).scale(beta.sqrt())?;
        mean.add(&noise)
    } else {
        Ok(mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub class: Option<usize>,
    pub omega: f64,
    pub count: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub schedule_hash: String,
    pub checkpoint_hash: String,
}

#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub latents: Tensor,
    pub provenance: SampleProvenance,
}

/// Samples `count` latents from a seed and records where they came from.
pub fn sample_with_provenance(
    model: &ConditionalDenoiser,
    sched: &NoiseSchedule,
    class: Option<usize>,
    omega: f64,
    count: usize,
    rng: &mut RngStream,
) -> Result<SampleBatch> {
    let (seed, stream_id) = (rng.seed(), rng.stream_id());
    let latents = reverse_sample(model, sched, class, omega, rng, count)?;
    Ok(SampleBatch {
        latents,
        provenance: SampleProvenance {
            class,
            omega,
            count,
            seed,
            stream_id,
            schedule_hash: sched.hash(),
            checkpoint_hash: model.checkpoint_hash(),
        },
    })
}

use serde::{Deserialize, Serialize};

use super::NoiseSchedule;
use crate::error::{GaudaError, Result};
use crate::nn::{mse, Mlp, Mode, Parameterized};
use crate::numeric::{grad, RngStream, Tensor};

/// Default width of the sinusoidal time features.
pub const TIME_EMBED_DIM: usize = 16;

/// Sinusoidal features of a timestep: `dim/2` sines followed by `dim/2` cosines
/// on a geometric frequency ladder.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// An ε-prediction model usable by the reverse sampler.
pub trait EpsPredictor {
    fn latent_dim(&self) -> usize;

    /// Predicted noise for each row of `z_t` at timestep `t`. `class = None`
    /// requests the unconditional prediction.
    fn predict_eps(&self, z_t: &Tensor, t: usize, class: Option<usize>) -> Result<Tensor>;
}

/// Class-conditional ε-predictor: an MLP over
/// `[noised latent | time features | class embedding]`. The class table has
/// one extra row at index `num_classes` used as the null (unconditional) token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDenoiser {
    body: Mlp,
    class_table: Tensor,
    latent_dim: usize,
    num_classes: usize,
    time_dim: usize,
}

struct DenoiserPass {
    body: crate::nn::ForwardPass,
    classes: Vec<usize>,
}

impl ConditionalDenoiser {
    pub fn new(
        latent_dim: usize,
        num_classes: usize,
        hidden: &[usize],
        class_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if latent_dim == 0 || num_classes == 0 || class_dim == 0 {
            return Err(GaudaError::invalid("denoiser dims must be positive"));
        }
        let mut widths = vec![latent_dim + TIME_EMBED_DIM + class_dim];
        widths.extend_from_slice(hidden);
        widths.push(latent_dim);
        let body = Mlp::new(&widths, 0.0, rng)?;
        let class_table = rng.gaussian(&[num_classes + 1, class_dim]);
        let null = class_table.row(num_classes);
        if (0..num_classes).any(|c| class_table.row(c) == null) {
            return Err(GaudaError::invalid("null class embedding collides with a real class"));
        }
        Ok(ConditionalDenoiser {
            body,
            class_table,
            latent_dim,
            num_classes,
            time_dim: TIME_EMBED_DIM,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn null_class(&self) -> usize {
        self.num_classes
    }

    pub fn class_table(&self) -> &Tensor {
        &self.class_table
    }

    pub fn checkpoint_hash(&self) -> String {
        crate::numeric::content_hash(self.params())
    }

    fn pass(&self, z_t: &Tensor, ts: &[usize], classes: &[usize]) -> Result<DenoiserPass> {
        let n = z_t.rows();
        if z_t.cols() != self.latent_dim || ts.len() != n || classes.len() != n {
            return Err(GaudaError::ShapeMismatch {
                op: "ConditionalDenoiser",
                lhs: z_t.shape().to_vec(),
                rhs: vec![ts.len(), classes.len(), self.latent_dim],
            });
        }
        if let Some(&c) = classes.iter().find(|&&c| c > self.num_classes) {
            return Err(GaudaError::invalid(format!("class {c} out of range")));
        }
        let temb: Vec<f64> = ts.iter().flat_map(|&t| time_embedding(t, self.time_dim)).collect();
        let temb = Tensor::new(vec![n, self.time_dim], temb)?;
        let cemb = self.class_table.select_rows(classes)?;
        let input = Tensor::concat_cols(&[z_t, &temb, &cemb])?;
        Ok(DenoiserPass {
            body: self.body.forward(&input, Mode::Eval)?,
            classes: classes.to_vec(),
        })
    }

    /// Batched prediction with per-row timesteps and classes (null allowed).
    pub fn predict(&self, z_t: &Tensor, ts: &[usize], classes: &[usize]) -> Result<Tensor> {
        Ok(self.pass(z_t, ts, classes)?.body.output)
    }

    fn backward(&self, pass: &DenoiserPass, grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let (mut grads, g_in) = self.body.backward(&pass.body, grad_out)?;
        let parts = grad::concat_cols(&g_in, &[self.latent_dim, self.time_dim, self.class_table.cols()])?;
        grads.push(grad::select_rows(self.num_classes + 1, &pass.classes, &parts[2])?);
        Ok(grads)
    }

    /// ε-prediction MSE on a joint latent batch with explicit timesteps,
    /// noise and (already dropped) classes. Gradients follow
    /// [`Parameterized`] order.
    pub fn simple_loss(
        &self,
        z0: &Tensor,
        ts: &[usize],
        eps: &Tensor,
        classes: &[usize],
        sched: &NoiseSchedule,
    ) -> Result<(f64, Vec<Tensor>)> {
        let z_t = sched.forward_noise_rows(z0, ts, eps)?;
        let pass = self.pass(&z_t, ts, classes)?;
        let (loss, g) = mse(&pass.body.output, eps)?;
        Ok((loss, self.backward(&pass, &g)?))
    }

    /// Semantic loss on the joint `(z_x, z_m)` latent. With `cond_drop =
    /// Some((p, rng))` each row's class is replaced by the null token with
    /// probability `p`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_semantic(
        &self,
        z_x0: &Tensor,
        z_m0: &Tensor,
        classes: &[usize],
        ts: &[usize],
        eps: &Tensor,
        sched: &NoiseSchedule,
        cond_drop: Option<(f64, &mut RngStream)>,
    ) -> Result<(f64, Vec<Tensor>)> {
        let z0 = Tensor::concat_cols(&[z_x0, z_m0])?;
        let mut classes = classes.to_vec();
        if let Some((p, rng)) = cond_drop {
            for c in classes.iter_mut() {
                if rng.bernoulli(p) {
                    *c = self.null_class();
                }
            }
        }
        let (loss, grads) = self.simple_loss(&z0, ts, eps, &classes, sched)?;
        if !loss.is_finite() {
            return Err(GaudaError::NonFinite("semantic loss".into()));
        }
        Ok((loss, grads))
    }
}

impl EpsPredictor for ConditionalDenoiser {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn predict_eps(&self, z_t: &Tensor, t: usize, class: Option<usize>) -> Result<Tensor> {
        let n = z_t.rows();
        let c = class.unwrap_or(self.null_class());
        if c >= self.num_classes && class.is_some() {
            return Err(GaudaError::invalid(format!("class {c} out of range")));
        }
        self.predict(z_t, &vec![t; n], &vec![c; n])
    }
}

impl Parameterized for ConditionalDenoiser {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.body.params();
        p.push(&self.class_table);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.body.params_mut();
        p.push(&mut self.class_table);
        p
    }
}

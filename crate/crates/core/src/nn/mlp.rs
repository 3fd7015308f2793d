use serde::{Deserialize, Serialize};

use crate::error::{GaudaError, Result};
use crate::numeric::{grad, RngStream, Tensor};

/// Forward mode. Dropout masks are drawn from the stream only in training.
pub enum Mode<'a> {
    Train(&'a mut RngStream),
    Eval,
}

/// Anything whose trainable state is a flat list of tensors.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|p| p.shape().to_vec()).collect()
    }
}

/// Fully connected network with ReLU hidden layers and inverted dropout
/// after each hidden activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    dropout_p: f64,
}

/// Intermediates recorded by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Input to each layer (after dropout for hidden layers).
    layer_inputs: Vec<Tensor>,
    /// Hidden pre-activations.
    pre: Vec<Tensor>,
    /// Scaled keep-masks per hidden layer, `None` when dropout was inactive.
    masks: Vec<Option<Tensor>>,
    pub output: Tensor,
}

fn validate_widths(widths: &[usize], dropout_p: f64) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(GaudaError::invalid(format!("bad layer widths {widths:?}")));
    }
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(GaudaError::invalid(format!("dropout_p {dropout_p} not in [0,1)")));
    }
    Ok(())
}

impl Mlp {
    /// He-normal weights, zero biases.
    pub fn new(widths: &[usize], dropout_p: f64, rng: &mut RngStream) -> Result<Self> {
        validate_widths(widths, dropout_p)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let std = (2.0 / w[0] as f64).sqrt();
            weights.push(rng.gaussian(&[w[0], w[1]]).scale(std)?);
            biases.push(Tensor::zeros(vec![1, w[1]]));
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            weights,
            biases,
            dropout_p,
        })
    }

    pub fn zeros(widths: &[usize], dropout_p: f64) -> Result<Self> {
        validate_widths(widths, dropout_p)?;
        let weights = widths.windows(2).map(|w| Tensor::zeros(vec![w[0], w[1]])).collect();
        let biases = widths.windows(2).map(|w| Tensor::zeros(vec![1, w[1]])).collect();
        Ok(Mlp {
            widths: widths.to_vec(),
            weights,
            biases,
            dropout_p,
        })
    }

    /// Rebuilds a model from a flat parameter list in [`Parameterized`] order.
    pub fn from_params(widths: &[usize], dropout_p: f64, params: Vec<Tensor>) -> Result<Self> {
        let mut m = Self::zeros(widths, dropout_p)?;
        if params.len() != 2 * (widths.len() - 1) {
            return Err(GaudaError::invalid("parameter count does not match widths"));
        }
        for (dst, src) in m.params_mut().into_iter().zip(params) {
            if dst.shape() != src.shape() {
                return Err(GaudaError::ShapeMismatch {
                    op: "Mlp::from_params",
                    lhs: dst.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            *dst = src;
        }
        Ok(m)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn forward(&self, x: &Tensor, mode: Mode<'_>) -> Result<ForwardPass> {
        if x.shape().len() != 2 || x.cols() != self.input_width() {
            return Err(GaudaError::ShapeMismatch {
                op: "Mlp::forward",
                lhs: x.shape().to_vec(),
                rhs: vec![self.input_width()],
            });
        }
        let mut rng = match mode {
            Mode::Train(r) if self.dropout_p > 0.0 => Some(r),
            _ => None,
        };
        let n_layers = self.weights.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut masks = Vec::with_capacity(n_layers - 1);
        let mut h = x.clone();
        for l in 0..n_layers {
            let z = h.matmul(&self.weights[l])?.add_row(&self.biases[l])?;
            layer_inputs.push(h);
            if l + 1 == n_layers {
                return Ok(ForwardPass {
                    layer_inputs,
                    pre,
                    masks,
                    output: z,
                });
            }
            let mut a = z.relu();
            let mask = match rng.as_deref_mut() {
                Some(r) => {
                    let keep = 1.0 - self.dropout_p;
                    let data = (0..a.len())
                        .map(|_| if r.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                        .collect();
                    let m = Tensor::new(a.shape().to_vec(), data)?;
                    a = a.mul(&m)?;
                    Some(m)
                }
                None => None,
            };
            pre.push(z);
            masks.push(mask);
            h = a;
        }
        unreachable!("loop returns at the output layer")
    }

    /// Deterministic evaluation-mode output.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Eval)?.output)
    }

    /// Returns parameter gradients (in [`Parameterized`] order) and the
    /// gradient with respect to the input.
    pub fn backward(&self, pass: &ForwardPass, grad_out: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        if grad_out.shape() != pass.output.shape() {
            return Err(GaudaError::ShapeMismatch {
                op: "Mlp::backward",
                lhs: pass.output.shape().to_vec(),
                rhs: grad_out.shape().to_vec(),
            });
        }
        let n_layers = self.weights.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; 2 * n_layers];
        let mut g = grad_out.clone();
        for l in (0..n_layers).rev() {
            let (g_lin, g_bias) = grad::add_row(&g)?;
            let (g_in, g_w) = grad::matmul(&pass.layer_inputs[l], &self.weights[l], &g_lin)?;
            grads[2 * l] = Some(g_w);
            grads[2 * l + 1] = Some(g_bias);
            g = g_in;
            if l > 0 {
                if let Some(mask) = &pass.masks[l - 1] {
                    g = g.mul(mask)?;
                }
                g = grad::relu(&pass.pre[l - 1], &g)?;
            }
        }
        Ok((grads.into_iter().map(|g| g.unwrap()).collect(), g))
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }
}

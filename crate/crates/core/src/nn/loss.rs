use crate::error::{GaudaError, Result};
use crate::numeric::Tensor;

/// Mean negative log-likelihood of one-hot `target` rows under the row
/// softmax of `logits`, with its gradient `(softmax - target) / N`.
pub fn cross_entropy(logits: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape() != target.shape() || logits.shape().len() != 2 {
        return Err(GaudaError::ShapeMismatch {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let (n, k) = (logits.rows(), logits.cols());
    for i in 0..n {
        let row = target.row(i);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != k {
            return Err(GaudaError::invalid(format!("target row {i} is not one-hot")));
        }
    }
    let probs = logits.softmax_rows()?;
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let hot = target.row(i).iter().position(|&v| v == 1.0).unwrap();
        loss += lse - row[hot];
    }
    let grad = probs.sub(target)?.scale(1.0 / n as f64)?;
    Ok((loss / n as f64, grad))
}

/// Per-row class labels to one-hot rows.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &c) in labels.iter().enumerate() {
        if c >= classes {
            return Err(GaudaError::invalid(format!("label {c} >= {classes} classes")));
        }
        data[i * classes + c] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Mean squared error over all elements with gradient `2 (pred - target) / N`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let diff = pred.sub(target)?;
    let n = diff.len() as f64;
    Ok((diff.norm_sq() / n, diff.scale(2.0 / n)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, RngStream};

    #[test]
    fn saturated_logits_give_tiny_loss() {
        let logits = Tensor::from_rows(&[vec![50.0, 0.0, 0.0]]).unwrap();
        let t = one_hot(&[0], 3).unwrap();
        assert!(cross_entropy(&logits, &t).unwrap().0 < 1e-3);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::zeros(vec![3, 4]);
        let t = one_hot(&[0, 2, 3], 4).unwrap();
        let (l, _) = cross_entropy(&logits, &t).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_one_hot() {
        let logits = Tensor::zeros(vec![1, 3]);
        let bad = Tensor::from_rows(&[vec![0.5, 0.5, 0.0]]).unwrap();
        assert!(cross_entropy(&logits, &bad).is_err());
    }

    #[test]
    fn cross_entropy_gradient() {
        let mut rng = RngStream::new(21, 0);
        let logits = rng.gaussian(&[5, 3]);
        let t = one_hot(&[0, 1, 2, 1, 0], 3).unwrap();
        let err = grad_check(|z| cross_entropy(z, &t), &logits, 1e-5).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn mse_cases() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(mse(&a, &a).unwrap().0, 0.0);
        let b = Tensor::from_rows(&[vec![2.0, 3.0]]).unwrap();
        assert_eq!(mse(&b, &a).unwrap().0, 1.0);
        let mut rng = RngStream::new(22, 0);
        let p = rng.gaussian(&[4, 3]);
        let t = rng.gaussian(&[4, 3]);
        let err = grad_check(|x| mse(x, &t), &p, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
        assert!(mse(&a, &Tensor::zeros(vec![2, 1])).is_err());
    }
}

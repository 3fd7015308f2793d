use serde::{Deserialize, Serialize};

use crate::error::{GaudaError, Result};
use crate::numeric::Tensor;

/// Minimum number of disjoint subsets used for the spread estimate.
pub const MIN_SUBSETS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// Unbiased MMD² over the full sets.
    pub mmd2: f64,
    /// Standard deviation of the estimate across disjoint subsets.
    pub std: f64,
    pub subsets: usize,
}

/// `k(x, y) = (xᵀy / dim + 1)³`.
pub fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / x.len() as f64 + 1.0).powi(3)
}

fn rows(t: &Tensor) -> Vec<&[f64]> {
    (0..t.rows()).map(|i| t.row(i)).collect()
}

/// Unbiased U-statistic for MMD² on row sets.
pub fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]]) -> Result<f64> {
    let (m, n) = (x.len(), y.len());
    if m < 2 || n < 2 {
        return Err(GaudaError::invalid("MMD needs at least two vectors per set"));
    }
    let within = |s: &[&[f64]]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                acc += poly_kernel(s[i], s[j]);
            }
        }
        2.0 * acc / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += poly_kernel(a, b);
        }
    }
    Ok(within(x) + within(y) - 2.0 * cross / (m * n) as f64)
}

/// Kernel MMD² between two feature sets with a subset-based spread.
pub fn kernel_mmd(real: &Tensor, synth: &Tensor, subsets: usize) -> Result<MmdEstimate> {
    if real.shape().len() != 2 || synth.shape().len() != 2 || real.cols() != synth.cols() {
        return Err(GaudaError::ShapeMismatch {
            op: "kernel_mmd",
            lhs: real.shape().to_vec(),
            rhs: synth.shape().to_vec(),
        });
    }
    let (x, y) = (rows(real), rows(synth));
    let mmd2 = mmd2_unbiased(&x, &y)?;
    let subsets = subsets.max(MIN_SUBSETS);
    let (sx, sy) = (x.len() / subsets, y.len() / subsets);
    if sx < 2 || sy < 2 {
        return Err(GaudaError::invalid(format!("need at least {} vectors per set", 2 * subsets)));
    }
    let parts: Vec<f64> = (0..subsets)
        .map(|s| mmd2_unbiased(&x[s * sx..(s + 1) * sx], &y[s * sy..(s + 1) * sy]))
        .collect::<Result<_>>()?;
    let mean = parts.iter().sum::<f64>() / subsets as f64;
    let var = parts.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (subsets - 1) as f64;
    Ok(MmdEstimate {
        mmd2,
        std: var.sqrt(),
        subsets,
    })
}

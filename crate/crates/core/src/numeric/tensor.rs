//! Dense row-major `f64` tensors and the closed set of differentiable ops.
//!
//! Every public constructor and op rejects non-finite results, so a tensor
//! that exists is always finite. Ops that can produce NaN/Inf return
//! `Result`; purely structural ops (transpose, relu) cannot and return the
//! tensor directly.

use serde::{Deserialize, Serialize};

use crate::error::{GaudaError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_finite(data: &[f64], op: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GaudaError::NonFinite(op.to_string()))
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(GaudaError::invalid(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(GaudaError::ShapeMismatch {
                op: "Tensor::new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        check_finite(&data, "Tensor::new")?;
        Ok(Tensor { shape, data })
    }

    // Callers guarantee the length matches and values are finite.
    fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    fn checked(shape: Vec<usize>, data: Vec<f64>, op: &str) -> Result<Self> {
        check_finite(&data, op)?;
        Ok(Self::from_parts(shape, data))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        assert!(value.is_finite(), "Tensor::full needs a finite fill value");
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "invalid shape {shape:?}"
        );
        let n = shape.iter().product();
        Self::from_parts(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1], vec![value])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(GaudaError::invalid("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Applies `f` to the raw buffer and re-validates finiteness.
    pub fn update(&mut self, f: impl FnOnce(&mut [f64])) -> Result<()> {
        f(&mut self.data);
        check_finite(&self.data, "Tensor::update")
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(GaudaError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: vec![],
            }),
        }
    }

    /// Rows of a 2-D tensor. Panics on other ranks.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on rank-{} tensor", self.shape.len());
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on rank-{} tensor", self.shape.len());
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(GaudaError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Self::from_parts(shape, self.data))
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(GaudaError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(GaudaError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Self::checked(vec![m, n], out, "matmul")
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.dims2("t_matmul")?;
        let (k2, n) = other.dims2("t_matmul")?;
        if k != k2 {
            return Err(GaudaError::ShapeMismatch {
                op: "t_matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Self::checked(vec![m, n], out, "t_matmul")
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul_t")?;
        let (n, k2) = other.dims2("matmul_t")?;
        if k != k2 {
            return Err(GaudaError::ShapeMismatch {
                op: "matmul_t",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Self::checked(vec![m, n], out, "matmul_t")
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self::from_parts(vec![n, m], out))
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self::checked(self.shape.clone(), data, op)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|&a| a * s).collect();
        Self::checked(self.shape.clone(), data, "scale")
    }

    pub fn map(&self, op: &str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data = self.data.iter().map(|&a| f(a)).collect();
        Self::checked(self.shape.clone(), data, op)
    }

    /// Adds a `1×n` (or `[n]`) row to every row of an `m×n` tensor.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (m, n) = self.dims2("add_row")?;
        if row.len() != n {
            return Err(GaudaError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape.clone(),
                rhs: row.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        for i in 0..m {
            for (o, &b) in data[i * n..(i + 1) * n].iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        Self::checked(vec![m, n], data, "add_row")
    }

    /// Column sums of an `m×n` tensor as `1×n`; the adjoint of `add_row`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("sum_rows")?;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, &v) in out.iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        Self::checked(vec![1, n], out, "sum_rows")
    }

    pub fn relu(&self) -> Tensor {
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| v.max(0.0)).collect(),
        )
    }

    /// Numerically stable per-row softmax of a 2-D tensor.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("softmax_rows")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for (o, &v) in o.iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            for v in o.iter_mut() {
                *v /= total;
            }
        }
        Self::checked(vec![m, n], out, "softmax_rows")
    }

    pub fn log(&self) -> Result<Tensor> {
        self.map("log", f64::ln)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| GaudaError::invalid("concat of nothing"))?;
        let m = first.dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.dims2("concat_cols")?;
            if r != m {
                return Err(GaudaError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
            }
        }
        Ok(Self::from_parts(vec![m, n], data))
    }

    /// Inverse of [`Tensor::concat_cols`].
    pub fn split_cols(&self, widths: &[usize]) -> Result<Vec<Tensor>> {
        let (m, n) = self.dims2("split_cols")?;
        if widths.iter().sum::<usize>() != n || widths.contains(&0) {
            return Err(GaudaError::ShapeMismatch {
                op: "split_cols",
                lhs: self.shape.clone(),
                rhs: widths.to_vec(),
            });
        }
        let mut outs: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(m * w)).collect();
        for i in 0..m {
            let mut off = i * n;
            for (o, &w) in outs.iter_mut().zip(widths) {
                o.extend_from_slice(&self.data[off..off + w]);
                off += w;
            }
        }
        Ok(outs
            .into_iter()
            .zip(widths)
            .map(|(d, &w)| Self::from_parts(vec![m, w], d))
            .collect())
    }

    /// Gathers rows of a 2-D tensor by index (embedding lookup).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (m, n) = self.dims2("select_rows")?;
        if idx.is_empty() {
            return Err(GaudaError::invalid("select_rows with no indices"));
        }
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(GaudaError::invalid(format!("row {i} out of range for {m} rows")));
            }
            data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        Ok(Self::from_parts(vec![idx.len(), n], data))
    }

    /// Stacks equally shaped 2-D row blocks (or 1-row tensors) vertically.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| GaudaError::invalid("vstack of nothing"))?;
        let n = first.dims2("vstack")?.1;
        let mut data = Vec::new();
        let mut m = 0;
        for p in parts {
            let (r, c) = p.dims2("vstack")?;
            if c != n {
                return Err(GaudaError::ShapeMismatch {
                    op: "vstack",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            data.extend_from_slice(&p.data);
            m += r;
        }
        Ok(Self::from_parts(vec![m, n], data))
    }
}

/// Vector-Jacobian products for the closed op set. Each takes the forward
/// inputs (or outputs, where cheaper) and the upstream gradient.
pub mod grad {
    use super::Tensor;
    use crate::error::Result;

    /// Returns `(dL/da, dL/db)` for `c = a · b`.
    pub fn matmul(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((grad_out.matmul_t(b)?, a.t_matmul(grad_out)?))
    }

    /// Returns `(dL/dx, dL/drow)` for `y = x + row` broadcast over rows.
    pub fn add_row(grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((grad_out.clone(), grad_out.sum_rows()?))
    }

    pub fn mul(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((grad_out.mul(b)?, grad_out.mul(a)?))
    }

    /// Gradient through ReLU given the pre-activation input. The kink at zero
    /// takes the zero branch.
    pub fn relu(pre: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let data = pre
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        Tensor::new(pre.shape().to_vec(), data)
    }

    /// Gradient through row softmax given its output `y`.
    pub fn softmax_rows(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let n = y.cols();
        let mut data = vec![0.0; y.len()];
        for i in 0..y.rows() {
            let yr = y.row(i);
            let gr = &grad_out.data()[i * n..(i + 1) * n];
            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for j in 0..n {
                data[i * n + j] = yr[j] * (gr[j] - dot);
            }
        }
        Tensor::new(y.shape().to_vec(), data)
    }

    pub fn log(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        grad_out.zip_with(x, "log_backward", |g, v| g / v)
    }

    /// Gradient of `mean(x)` for a scalar upstream gradient.
    pub fn mean(shape: &[usize], grad_out: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::full(shape.to_vec(), grad_out / n as f64)
    }

    /// Splits a gradient for `concat_cols` back to its parts.
    pub fn concat_cols(grad_out: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
        grad_out.split_cols(widths)
    }

    /// Scatter-add adjoint of `select_rows` into a `rows×cols` table.
    pub fn select_rows(rows: usize, idx: &[usize], grad_out: &Tensor) -> Result<Tensor> {
        let n = grad_out.cols();
        let mut data = vec![0.0; rows * n];
        for (k, &i) in idx.iter().enumerate() {
            for (o, &g) in data[i * n..(i + 1) * n].iter_mut().zip(grad_out.row(k)) {
                *o += g;
            }
        }
        Tensor::new(vec![rows, n], data)
    }
}

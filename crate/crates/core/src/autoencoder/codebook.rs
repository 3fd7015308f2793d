use serde::{Deserialize, Serialize};

use crate::error::{GaudaError, Result};
use crate::numeric::{RngStream, Tensor};

/// Vector-quantization codebook of `V` entries of width `d_code`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    entries: Tensor,
    pub commitment: f64,
}

/// Output of [`Codebook::quantize`].
#[derive(Clone, Debug)]
pub struct Quantized {
    pub z_q: Tensor,
    /// One index per sub-vector, row-major over `(row, chunk)`.
    pub indices: Vec<usize>,
    /// `mean ‖sg(z) − e‖²`, drives the codebook entries.
    pub codebook_loss: f64,
    /// `mean ‖z − sg(e)‖²`, before the commitment weight.
    pub commitment_loss: f64,
}

impl Codebook {
    pub fn new(size: usize, code_dim: usize, commitment: f64, rng: &mut RngStream) -> Result<Self> {
        if size == 0 || code_dim == 0 {
            return Err(GaudaError::invalid("empty codebook"));
        }
        Ok(Codebook {
            entries: rng.gaussian(&[size, code_dim]),
            commitment,
        })
    }

    pub fn from_entries(entries: Tensor, commitment: f64) -> Result<Self> {
        if entries.shape().len() != 2 {
            return Err(GaudaError::invalid("codebook entries must be 2-D"));
        }
        Ok(Codebook { entries, commitment })
    }

    pub fn entries(&self) -> &Tensor {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut Tensor {
        &mut self.entries
    }

    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    pub fn code_dim(&self) -> usize {
        self.entries.cols()
    }

    /// Nearest entry by squared distance; the lowest index wins ties.
    pub fn nearest(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for e in 0..self.size() {
            let d: f64 = self.entries.row(e).iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best_d {
                best_d = d;
                best = e;
            }
        }
        best
    }

    /// Replaces each `d_code`-wide chunk of every row by its nearest entry.
    pub fn quantize(&self, z: &Tensor) -> Result<Quantized> {
        let dc = self.code_dim();
        if z.shape().len() != 2 || z.cols() % dc != 0 {
            return Err(GaudaError::invalid(format!(
                "code width {dc} does not divide latent shape {:?}",
                z.shape()
            )));
        }
        let mut out = Vec::with_capacity(z.len());
        let mut indices = Vec::with_capacity(z.len() / dc);
        for chunk in z.data().chunks(dc) {
            let e = self.nearest(chunk);
            indices.push(e);
            out.extend_from_slice(self.entries.row(e));
        }
        let z_q = Tensor::new(z.shape().to_vec(), out)?;
        let dist = z_q.sub(z)?.norm_sq() / z.len() as f64;
        Ok(Quantized {
            z_q,
            indices,
            codebook_loss: dist,
            commitment_loss: dist,
        })
    }

    /// Backward of the straight-through quantizer plus both VQ terms.
    ///
    /// The decoder gradient on `z_q` is copied to `z` unchanged, the
    /// commitment term adds `2λ (z − z_q) / n` to it, and the codebook term
    /// sends `2 (e − z) / n` to each selected entry. Returns
    /// `(dL/dz, dL/dentries)`.
    pub fn backward(&self, z: &Tensor, q: &Quantized, grad_zq: &Tensor) -> Result<(Tensor, Tensor)> {
        let n = z.len() as f64;
        let commit = z.sub(&q.z_q)?.scale(2.0 * self.commitment / n)?;
        let grad_z = grad_zq.add(&commit)?;
        let dc = self.code_dim();
        let mut g_entries = vec![0.0; self.entries.len()];
        for (k, &e) in q.indices.iter().enumerate() {
            for j in 0..dc {
                let zi = z.data()[k * dc + j];
                let ei = self.entries.data()[e * dc + j];
                g_entries[e * dc + j] += 2.0 * (ei - zi) / n;
            }
        }
        Ok((grad_z, Tensor::new(self.entries.shape().to_vec(), g_entries)?))
    }

    /// Re-seeds entries that no index in `used` selects with random chunks of
    /// `z`. Returns the number of restarted entries.
    pub fn restart_unused(&mut self, used: &[usize], z: &Tensor, rng: &mut RngStream) -> Result<usize> {
        let dc = self.code_dim();
        let mut hit = vec![false; self.size()];
        for &u in used {
            hit[u] = true;
        }
        let chunks = z.len() / dc;
        let mut restarted = 0;
        let src = z.data().to_vec();
        self.entries.update(|d| {
            for (e, &h) in hit.iter().enumerate() {
                if !h {
                    let k = rng.below(chunks);
                    for j in 0..dc {
                        d[e * dc + j] = src[k * dc + j] + 1e-3 * rng.normal();
                    }
                    restarted += 1;
                }
            }
        })?;
        Ok(restarted)
    }

    /// True when two entries coincide, a sign of codebook collapse.
    pub fn has_duplicates(&self) -> bool {
        (0..self.size()).any(|a| (a + 1..self.size()).any(|b| self.entries.row(a) == self.entries.row(b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book() -> Codebook {
        let e = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 3.0],
            vec![-1.0, -1.0],
        ])
        .unwrap();
        Codebook::from_entries(e, 0.25).unwrap()
    }

    #[test]
    fn exact_entry_has_zero_loss() {
        let b = book();
        let z = Tensor::from_rows(&[vec![-1.0, -1.0]]).unwrap();
        let q = b.quantize(&z).unwrap();
        assert_eq!(q.indices, vec![3]);
        assert_eq!(q.codebook_loss, 0.0);
        assert_eq!(q.commitment_loss, 0.0);
    }

    #[test]
    fn equidistant_takes_lowest_index() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(book().quantize(&z).unwrap().indices, vec![0]);
    }

    #[test]
    fn chunking_and_width_check() {
        let b = book();
        let z = Tensor::from_rows(&[vec![2.1, 0.1, 0.0, 2.5]]).unwrap();
        assert_eq!(b.quantize(&z).unwrap().indices, vec![1, 2]);
        assert!(b.quantize(&Tensor::zeros(vec![1, 3])).is_err());
        assert!(Codebook::new(0, 2, 0.25, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn nearest_matches_exhaustive_scan() {
        let mut rng = RngStream::new(41, 0);
        let b = Codebook::new(64, 4, 0.25, &mut rng).unwrap();
        let z = rng.gaussian(&[50, 8]);
        let q = b.quantize(&z).unwrap();
        for (k, chunk) in z.data().chunks(4).enumerate() {
            let chosen: f64 = b.entries().row(q.indices[k]).iter().zip(chunk).map(|(a, c)| (a - c).powi(2)).sum();
            for e in 0..64 {
                let d: f64 = b.entries().row(e).iter().zip(chunk).map(|(a, c)| (a - c).powi(2)).sum();
                assert!(chosen <= d);
            }
        }
    }

    #[test]
    fn straight_through_passes_decoder_gradient() {
        let mut b = book();
        b.commitment = 0.0;
        let z = Tensor::from_rows(&[vec![0.3, 2.2, 1.7, 0.1]]).unwrap();
        let q = b.quantize(&z).unwrap();
        let g = Tensor::from_rows(&[vec![0.5, -1.0, 2.0, 0.25]]).unwrap();
        let (gz, _) = b.backward(&z, &q, &g).unwrap();
        assert_eq!(gz, g);
    }

    #[test]
    fn restart_moves_dead_entries() {
        let mut rng = RngStream::new(1, 0);
        let mut b = book();
        let z = Tensor::from_rows(&[vec![5.0, 5.0]]).unwrap();
        assert_eq!(b.restart_unused(&[0, 1], &z, &mut rng).unwrap(), 2);
        assert!((b.entries().row(2)[0] - 5.0).abs() < 0.1);
        assert!(!b.has_duplicates());
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{GaudaError, Result};
use crate::numeric::Tensor;

/// An image `[C, H, W]` with values in `[0, 1]` and its one-hot mask `[K, H, W]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    image: Tensor,
    mask: Tensor,
    presence: Vec<usize>,
}

impl PairedSample {
    pub fn new(image: Tensor, mask: Tensor) -> Result<Self> {
        let (&[c, h, w], &[k, mh, mw]) = (image.shape(), mask.shape()) else {
            return Err(GaudaError::invalid("image and mask must both be rank 3"));
        };
        if (h, w) != (mh, mw) || c == 0 || k < 2 {
            return Err(GaudaError::ShapeMismatch {
                op: "PairedSample::new",
                lhs: image.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        if image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(GaudaError::invalid("image values must lie in [0, 1]"));
        }
        let pixels = h * w;
        let mut present = vec![false; k];
        for p in 0..pixels {
            let mut hot = None;
            for ch in 0..k {
                match mask.data()[ch * pixels + p] {
                    v if v == 1.0 && hot.is_none() => hot = Some(ch),
                    v if v == 0.0 => {}
                    _ => return Err(GaudaError::invalid(format!("mask pixel {p} is not one-hot"))),
                }
            }
            match hot {
                Some(ch) => present[ch] = true,
                None => return Err(GaudaError::invalid(format!("mask pixel {p} has no class"))),
            }
        }
        let presence = (0..k).filter(|&c| present[c]).collect();
        Ok(PairedSample { image, mask, presence })
    }

    /// Builds the one-hot mask from per-pixel labels (row-major `H×W`).
    pub fn from_labels(image: Tensor, labels: &[usize], classes: usize) -> Result<Self> {
        let &[_, h, w] = image.shape() else {
            return Err(GaudaError::invalid("image must be rank 3"));
        };
        if labels.len() != h * w {
            return Err(GaudaError::invalid("label count does not match image size"));
        }
        let pixels = h * w;
        let mut data = vec![0.0; classes * pixels];
        for (p, &c) in labels.iter().enumerate() {
            if c >= classes {
                return Err(GaudaError::invalid(format!("label {c} >= {classes}")));
            }
            data[c * pixels + p] = 1.0;
        }
        Self::new(image, Tensor::new(vec![classes, h, w], data)?)
    }

    pub fn image(&self) -> &Tensor {
        &self.image
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    /// Sorted set of classes occurring in the mask.
    pub fn presence(&self) -> &[usize] {
        &self.presence
    }

    pub fn contains(&self, class: usize) -> bool {
        self.presence.binary_search(&class).is_ok()
    }

    pub fn num_classes(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    /// Per-pixel class labels, row-major.
    pub fn labels(&self) -> Vec<usize> {
        let (k, p) = (self.num_classes(), self.pixels());
        (0..p)
            .map(|px| (0..k).find(|&c| self.mask.data()[c * p + px] == 1.0).unwrap())
            .collect()
    }

    /// Mask as pixel-major one-hot values (`pixel * K + class`).
    pub fn mask_pixel_major(&self) -> Vec<f64> {
        let (k, p) = (self.num_classes(), self.pixels());
        let mut out = vec![0.0; k * p];
        for c in 0..k {
            for px in 0..p {
                out[px * k + c] = self.mask.data()[c * p + px];
            }
        }
        out
    }
}

/// Flattened latent pair for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedLatent {
    pub z_x: Tensor,
    pub z_m: Tensor,
}

impl PairedLatent {
    pub fn joined(&self) -> Result<Tensor> {
        let d = self.z_x.len() + self.z_m.len();
        let mut data = self.z_x.data().to_vec();
        data.extend_from_slice(self.z_m.data());
        Tensor::new(vec![d], data)
    }

    /// Splits a joint vector at its midpoint.
    pub fn from_joined(joined: &[f64]) -> Result<Self> {
        if joined.len() % 2 != 0 || joined.is_empty() {
            return Err(GaudaError::invalid("joint latent must have even positive length"));
        }
        let d = joined.len() / 2;
        Ok(PairedLatent {
            z_x: Tensor::new(vec![d], joined[..d].to_vec())?,
            z_m: Tensor::new(vec![d], joined[d..].to_vec())?,
        })
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, v: f64) -> Tensor {
        Tensor::full(vec![1, h, w], v)
    }

    #[test]
    fn presence_follows_labels() {
        let s = PairedSample::from_labels(image(2, 2, 0.5), &[0, 2, 2, 0], 4).unwrap();
        assert_eq!(s.presence(), &[0, 2]);
        assert_eq!(s.labels(), vec![0, 2, 2, 0]);
        assert!(s.contains(2) && !s.contains(1));
        let pm = s.mask_pixel_major();
        assert_eq!(&pm[4..8], &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_invalid_masks_and_images() {
        let bad = Tensor::new(vec![2, 1, 1], vec![0.5, 0.5]).unwrap();
        assert!(PairedSample::new(image(1, 1, 0.2), bad).is_err());
        let empty = Tensor::new(vec![2, 1, 1], vec![0.0, 0.0]).unwrap();
        assert!(PairedSample::new(image(1, 1, 0.2), empty).is_err());
        let ok = Tensor::new(vec![2, 1, 1], vec![0.0, 1.0]).unwrap();
        assert!(PairedSample::new(image(1, 1, 1.5), ok).is_err());
    }

    #[test]
    fn argmax_tie_takes_lowest() {
        assert_eq!(argmax_lowest(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax_lowest(&[0.5, 0.5]), 0);
    }

    #[test]
    fn joined_latent_splits_back() {
        let l = PairedLatent::from_joined(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(l.z_m.data(), &[3.0, 4.0]);
        assert_eq!(l.joined().unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}

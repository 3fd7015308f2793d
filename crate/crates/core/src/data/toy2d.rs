use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{stratified_split, Example, Split};
use crate::error::{GaudaError, Result};
use crate::numeric::{RngStream, Tensor};

/// Two classes separated by distance from the origin. Class 1 lies outside
/// `threshold`, class 0 inside; `minority` names the class that gets
/// `imbalance · n_major` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toy2dSpec {
    pub n_major: usize,
    pub imbalance: f64,
    pub noise: f64,
    pub threshold: f64,
    pub outer_radius: f64,
    pub minority: usize,
}

impl Default for Toy2dSpec {
    fn default() -> Self {
        Toy2dSpec {
            n_major: 2000,
            imbalance: 0.1,
            noise: 0.25,
            threshold: 1.0,
            outer_radius: 2.0,
            minority: 0,
        }
    }
}

impl Toy2dSpec {
    pub fn n_minor(&self) -> usize {
        (self.n_major as f64 * self.imbalance).round() as usize
    }

    pub fn count(&self, class: usize) -> usize {
        if class == self.minority {
            self.n_minor()
        } else {
            self.n_major
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0) {
            return Err(GaudaError::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        if !(self.imbalance > 0.0 && self.imbalance <= 1.0) {
            return Err(GaudaError::Config("imbalance must lie in (0, 1]".into()));
        }
        if !(self.threshold > 0.0 && self.outer_radius > self.threshold) {
            return Err(GaudaError::Config("need 0 < threshold < outer_radius".into()));
        }
        if self.minority > 1 {
            return Err(GaudaError::Config("minority must be class 0 or 1".into()));
        }
        if self.n_minor() < 20 {
            return Err(GaudaError::Config("need at least 20 points per class".into()));
        }
        Ok(())
    }

    /// Noise-free radius of a fresh point of `class`, uniform over the area.
    fn radius(&self, class: usize, rng: &mut RngStream) -> f64 {
        let (lo, hi) = if class == 0 {
            (0.0, self.threshold)
        } else {
            (self.threshold, self.outer_radius)
        };
        (lo * lo + rng.uniform() * (hi * hi - lo * lo)).sqrt()
    }

    /// One point of `class`; also serves as an exact class-conditional
    /// generator for the toy studies.
    pub fn sample_class(&self, class: usize, rng: &mut RngStream) -> [f64; 2] {
        let r = self.radius(class, rng);
        let theta = 2.0 * PI * rng.uniform();
        [
            r * theta.cos() + self.noise * rng.normal(),
            r * theta.sin() + self.noise * rng.normal(),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Toy2dData {
    pub spec: Toy2dSpec,
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Toy2dData {
    pub fn example(&self, i: usize) -> Example {
        Example::classification(self.points[i].to_vec(), self.labels[i])
    }

    pub fn examples(&self, ids: &[usize]) -> Vec<Example> {
        ids.iter().map(|&i| self.example(i)).collect()
    }

    pub fn points_tensor(&self, ids: &[usize]) -> Result<Tensor> {
        Tensor::new(
            vec![ids.len(), 2],
            ids.iter().flat_map(|&i| self.points[i]).collect(),
        )
    }
}

/// Generates the point set and its stratified 90/5/5 split.
pub fn gen_toy2d(spec: &Toy2dSpec, rng: &mut RngStream) -> Result<Toy2dData> {
    spec.validate()?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2 {
        let mut class_rng = rng.split(class as u64);
        for _ in 0..spec.count(class) {
            points.push(spec.sample_class(class, &mut class_rng));
            labels.push(class);
        }
    }
    let split = stratified_split(&labels, &mut rng.derive("split"))?;
    Ok(Toy2dData {
        spec: spec.clone(),
        points,
        labels,
        split,
    })
}

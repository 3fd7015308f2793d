use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stratified_split, Example, Split};
use crate::autoencoder::PairedSample;
use crate::error::{GaudaError, Result};
use crate::numeric::io::{load_tensors, save_tensors};
use crate::numeric::{RngStream, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Background,
    Disk { min_radius: f64, max_radius: f64 },
    /// Full-length horizontal or vertical strip.
    Bar { width: usize },
    Rectangle { min_side: usize, max_side: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAppearance {
    pub shape: ShapeKind,
    pub intensity: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapesSegSpec {
    pub height: usize,
    pub width: usize,
    /// Class 0 must be the background; later classes paint over earlier ones.
    pub classes: Vec<ClassAppearance>,
    pub noise: f64,
    pub samples: usize,
}

impl Default for ShapesSegSpec {
    fn default() -> Self {
        ShapesSegSpec {
            height: 8,
            width: 8,
            classes: vec![
                ClassAppearance { shape: ShapeKind::Background, intensity: 0.1, probability: 1.0 },
                ClassAppearance {
                    shape: ShapeKind::Disk { min_radius: 2.0, max_radius: 2.6 },
                    intensity: 0.4,
                    probability: 0.9,
                },
                ClassAppearance { shape: ShapeKind::Bar { width: 1 }, intensity: 0.65, probability: 0.7 },
                ClassAppearance {
                    shape: ShapeKind::Rectangle { min_side: 2, max_side: 3 },
                    intensity: 0.9,
                    probability: 0.05,
                },
            ],
            noise: 0.08,
            samples: 600,
        }
    }
}

impl ShapesSegSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 || self.classes[0].shape != ShapeKind::Background {
            return Err(GaudaError::Config("class 0 must be the background".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(GaudaError::Config("noise must be >= 0".into()));
        }
        let side = self.height.min(self.width);
        for (c, a) in self.classes.iter().enumerate() {
            if !(0.0..=1.0).contains(&a.probability) || !(0.0..=1.0).contains(&a.intensity) {
                return Err(GaudaError::Config(format!("class {c}: probability and intensity must lie in [0, 1]")));
            }
            let fits = match a.shape {
                ShapeKind::Background => c == 0,
                ShapeKind::Disk { min_radius, max_radius } => {
                    min_radius > 0.0 && min_radius <= max_radius && 2 * max_radius.floor() as usize + 1 <= side
                }
                ShapeKind::Bar { width } => width >= 1 && width <= side,
                ShapeKind::Rectangle { min_side, max_side } => min_side >= 1 && min_side <= max_side && max_side <= side,
            };
            if !fits {
                return Err(GaudaError::Config(format!("class {c}: shape does not fit the grid")));
            }
        }
        Ok(())
    }

    /// Labels of one sample; shapes drawn in class order.
    fn paint(&self, rng: &mut RngStream) -> Vec<usize> {
        let (h, w) = (self.height, self.width);
        let mut labels = vec![0; h * w];
        for (c, a) in self.classes.iter().enumerate().skip(1) {
            if !rng.bernoulli(a.probability) {
                continue;
            }
            match a.shape {
                ShapeKind::Background => {}
                ShapeKind::Disk { min_radius, max_radius } => {
                    let r = min_radius + (max_radius - min_radius) * rng.uniform();
                    let reach = r.floor() as usize;
                    let cy = reach + rng.below(h - 2 * reach);
                    let cx = reach + rng.below(w - 2 * reach);
                    for y in 0..h {
                        for x in 0..w {
                            let dy = y as f64 - cy as f64;
                            let dx = x as f64 - cx as f64;
                            if dy * dy + dx * dx <= r * r {
                                labels[y * w + x] = c;
                            }
                        }
                    }
                }
                ShapeKind::Bar { width } => {
                    if rng.bernoulli(0.5) {
                        let y0 = rng.below(h - width + 1);
                        for y in y0..y0 + width {
                            labels[y * w..(y + 1) * w].fill(c);
                        }
                    } else {
                        let x0 = rng.below(w - width + 1);
                        for y in 0..h {
                            labels[y * w + x0..y * w + x0 + width].fill(c);
                        }
                    }
                }
                ShapeKind::Rectangle { min_side, max_side } => {
                    let rh = min_side + rng.below(max_side - min_side + 1);
                    let rw = min_side + rng.below(max_side - min_side + 1);
                    let y0 = rng.below(h - rh + 1);
                    let x0 = rng.below(w - rw + 1);
                    for y in y0..y0 + rh {
                        labels[y * w + x0..y * w + x0 + rw].fill(c);
                    }
                }
            }
        }
        labels
    }

    /// One sample. Each pixel shows the intensity of the class painted on top
    /// plus Gaussian noise, clamped to `[0, 1]`.
    pub fn sample(&self, rng: &mut RngStream) -> Result<PairedSample> {
        let labels = self.paint(rng);
        let image: Vec<f64> = labels
            .iter()
            .map(|&c| {
                let v = self.classes[c].intensity;
                let n = if self.noise > 0.0 { self.noise * rng.normal() } else { 0.0 };
                (v + n).clamp(0.0, 1.0)
            })
            .collect();
        let image = Tensor::new(vec![1, self.height, self.width], image)?;
        PairedSample::from_labels(image, &labels, self.num_classes())
    }
}

#[derive(Serialize, Deserialize)]
struct ShapesManifest {
    spec: ShapesSegSpec,
    seed: u64,
    stream_id: u64,
    split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapesData {
    pub spec: ShapesSegSpec,
    pub samples: Vec<PairedSample>,
    pub split: Split,
    /// Number of training samples containing each class.
    pub histogram: Vec<usize>,
    pub seed: u64,
    pub stream_id: u64,
}

impl ShapesData {
    pub fn examples(&self, ids: &[usize]) -> Vec<Example> {
        ids.iter().map(|&i| Example::from(&self.samples[i])).collect()
    }

    pub fn subset(&self, ids: &[usize]) -> Vec<&PairedSample> {
        ids.iter().map(|&i| &self.samples[i]).collect()
    }

    /// Writes images and masks to a tensor container and the spec, seed and
    /// split to `dataset.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut tensors = Vec::with_capacity(2 * self.samples.len());
        for s in &self.samples {
            tensors.push(s.image());
            tensors.push(s.mask());
        }
        save_tensors(dir.join("dataset.gaud"), &tensors)?;
        let manifest = ShapesManifest {
            spec: self.spec.clone(),
            seed: self.seed,
            stream_id: self.stream_id,
            split: self.split.clone(),
        };
        fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("dataset.json");
        if !path.exists() {
            return Err(GaudaError::MissingArtifact(path));
        }
        let manifest: ShapesManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        let tensors = load_tensors(dir.join("dataset.gaud"))?;
        if tensors.len() % 2 != 0 {
            return Err(GaudaError::Format("dataset container has an odd tensor count".into()));
        }
        let mut samples = Vec::with_capacity(tensors.len() / 2);
        let mut it = tensors.into_iter();
        while let (Some(img), Some(mask)) = (it.next(), it.next()) {
            samples.push(PairedSample::new(img, mask)?);
        }
        let histogram = histogram(&samples, &manifest.split.train, manifest.spec.num_classes());
        Ok(ShapesData {
            spec: manifest.spec,
            samples,
            split: manifest.split,
            histogram,
            seed: manifest.seed,
            stream_id: manifest.stream_id,
        })
    }
}

fn histogram(samples: &[PairedSample], ids: &[usize], classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for &i in ids {
        for &c in samples[i].presence() {
            h[c] += 1;
        }
    }
    h
}

/// Generates `spec.samples` pairs, each from its own split stream, and a
/// 90/5/5 split stratified by the rarest class each sample contains.
pub fn gen_shapes_seg(spec: &ShapesSegSpec, rng: &mut RngStream) -> Result<ShapesData> {
    spec.validate()?;
    let base = rng.derive("samples");
    let samples = (0..spec.samples)
        .into_par_iter()
        .map(|i| spec.sample(&mut base.split(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let rarity = |c: usize| spec.classes[c].probability;
    let strata: Vec<usize> = samples
        .iter()
        .map(|s| {
            *s.presence()
                .iter()
                .min_by(|&&a, &&b| rarity(a).total_cmp(&rarity(b)).then(b.cmp(&a)))
                .expect("every sample has a class")
        })
        .collect();
    let split = stratified_split(&strata, &mut rng.derive("split"))?;
    let histogram = histogram(&samples, &split.train, spec.num_classes());
    Ok(ShapesData {
        spec: spec.clone(),
        samples,
        split,
        histogram,
        seed: rng.seed(),
        stream_id: rng.stream_id(),
    })
}

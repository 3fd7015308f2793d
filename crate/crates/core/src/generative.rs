//! The pretrained generative stack: paired autoencoders, latent
//! standardisation, and a class-conditional denoiser over joint latents.
//! Also the stand-in generators used to test the augmentation plumbing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{train_autoencoders, AeConfig, AeDims, AeReport, PairedAutoencoder, PairedSample};
use crate::diffusion::{reverse_sample, train_denoiser_weighted, ConditionalDenoiser, DiffusionTrainConfig, NoiseSchedule};
use crate::error::{GaudaError, Result};
use crate::nn::Parameterized;
use crate::numeric::io::{load_tensors, save_tensors};
use crate::numeric::{RngStream, Tensor};
use crate::sampling::{freq_weights, sample_weights, SampleWeighting};

/// Something that can produce paired samples, optionally for a class.
pub trait PairGenerator: Sync {
    fn generate(&self, class: Option<usize>, omega: f64, count: usize, rng: &mut RngStream) -> Result<Vec<PairedSample>>;

    fn name(&self) -> &str;
}

/// Per-dimension standardisation of joint latents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentScaler {
    pub fn fit(z: &Tensor) -> Self {
        let (n, d) = (z.rows() as f64, z.cols());
        let mut mean = vec![0.0; d];
        for i in 0..z.rows() {
            for (m, v) in mean.iter_mut().zip(z.row(i)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for i in 0..z.rows() {
            for j in 0..d {
                var[j] += (z.row(i)[j] - mean[j]).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| v.sqrt().max(1e-6)).collect();
        LatentScaler { mean, std }
    }

    fn apply(&self, z: &Tensor, forward: bool) -> Result<Tensor> {
        let d = self.mean.len();
        let mut out = z.data().to_vec();
        for (k, v) in out.iter_mut().enumerate() {
            let j = k % d;
            *v = if forward {
                (*v - self.mean[j]) / self.std[j]
            } else {
                *v * self.std[j] + self.mean[j]
            };
        }
        Tensor::new(z.shape().to_vec(), out)
    }

    pub fn normalize(&self, z: &Tensor) -> Result<Tensor> {
        self.apply(z, true)
    }

    pub fn denormalize(&self, z: &Tensor) -> Result<Tensor> {
        self.apply(z, false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackConfig {
    pub latent_dim: usize,
    pub autoencoder: AeConfig,
    pub diffusion: DiffusionTrainConfig,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub denoiser_hidden: Vec<usize>,
    pub class_dim: usize,
    /// Draw denoiser training rows with inverse-root class frequency weights.
    pub class_balanced: bool,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            latent_dim: 16,
            autoencoder: AeConfig::default(),
            diffusion: DiffusionTrainConfig::default(),
            timesteps: 100,
            beta_start: 1e-4,
            beta_end: 0.05,
            denoiser_hidden: vec![128, 128],
            class_dim: 8,
            class_balanced: false,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StackReport {
    pub autoencoder: AeReport,
    pub diffusion_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeStack {
    pub config: StackConfig,
    pub autoencoder: PairedAutoencoder,
    pub denoiser: ConditionalDenoiser,
    pub schedule: NoiseSchedule,
    pub scaler: LatentScaler,
}

#[derive(Serialize, Deserialize)]
struct StackManifest {
    config: StackConfig,
    scaler: LatentScaler,
    num_classes: usize,
}

/// Classes a training pair may be conditioned on: every non-background
/// class it contains, or the background when nothing else is present.
pub fn conditioning_labels(sample: &PairedSample) -> Vec<usize> {
    let fg: Vec<usize> = sample.presence().iter().copied().filter(|&c| c != 0).collect();
    if fg.is_empty() {
        vec![0]
    } else {
        fg
    }
}

impl GenerativeStack {
    /// Trains the autoencoders, freezes them, then trains the denoiser on
    /// the standardised joint latents of `samples`.
    pub fn pretrain(samples: &[&PairedSample], cfg: &StackConfig, rng: &mut RngStream) -> Result<(Self, StackReport)> {
        let first = samples.first().ok_or_else(|| GaudaError::invalid("no samples to pretrain on"))?;
        let dims = AeDims {
            channels: first.channels(),
            height: first.height(),
            width: first.width(),
            classes: first.num_classes(),
            latent_dim: cfg.latent_dim,
        };
        let ae_cfg = AeConfig { latent_dim: cfg.latent_dim, ..cfg.autoencoder.clone() };
        let (autoencoder, ae_report) = train_autoencoders(samples, dims, &ae_cfg, &mut rng.derive("autoencoder"), None)?;
        Self::pretrain_diffusion(autoencoder, ae_report, samples, cfg, rng)
    }

    /// Second stage on top of already trained autoencoders.
    pub fn pretrain_diffusion(
        autoencoder: PairedAutoencoder,
        ae_report: AeReport,
        samples: &[&PairedSample],
        cfg: &StackConfig,
        rng: &mut RngStream,
    ) -> Result<(Self, StackReport)> {
        let (zx, zm) = autoencoder.encode_batch(samples)?;
        let joint = Tensor::concat_cols(&[&zx, &zm])?;
        let scaler = LatentScaler::fit(&joint);
        let latents = scaler.normalize(&joint)?;
        let labels: Vec<Vec<usize>> = samples.iter().map(|s| conditioning_labels(s)).collect();
        let schedule = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)?;
        let mut den_rng = rng.derive("denoiser");
        let mut denoiser = ConditionalDenoiser::new(
            2 * cfg.latent_dim,
            autoencoder.dims.classes,
            &cfg.denoiser_hidden,
            cfg.class_dim,
            &mut den_rng,
        )?;
        let row_weights = if cfg.class_balanced {
            let mut counts = vec![0; autoencoder.dims.classes];
            for l in &labels {
                for &c in l {
                    counts[c] += 1;
                }
            }
            let cw = freq_weights(&counts)?;
            let sets: Vec<&[usize]> = labels.iter().map(Vec::as_slice).collect();
            Some(sample_weights(&sets, &cw, SampleWeighting::Mean))
        } else {
            None
        };
        let curve = train_denoiser_weighted(
            &mut denoiser,
            &latents,
            &labels,
            row_weights.as_deref(),
            &schedule,
            &cfg.diffusion,
            &mut den_rng,
        )?;
        Ok((
            GenerativeStack {
                config: cfg.clone(),
                autoencoder,
                denoiser,
                schedule,
                scaler,
            },
            StackReport {
                autoencoder: ae_report,
                diffusion_curve: curve,
            },
        ))
    }

    pub fn num_classes(&self) -> usize {
        self.autoencoder.dims.classes
    }

    /// Standardised joint latents of `samples`.
    pub fn encode(&self, samples: &[&PairedSample]) -> Result<Tensor> {
        let (zx, zm) = self.autoencoder.encode_batch(samples)?;
        self.scaler.normalize(&Tensor::concat_cols(&[&zx, &zm])?)
    }

    /// Decodes standardised joint latent rows into pairs.
    pub fn decode(&self, latents: &Tensor) -> Result<Vec<PairedSample>> {
        let z = self.scaler.denormalize(latents)?;
        let d = self.config.latent_dim;
        let parts = z.split_cols(&[d, d])?;
        self.autoencoder.decode_batch(&parts[0], &parts[1])
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.autoencoder.save(&dir.join("autoencoder"))?;
        fs::create_dir_all(dir)?;
        save_tensors(dir.join("denoiser.gaud"), &self.denoiser.params())?;
        let manifest = StackManifest {
            config: self.config.clone(),
            scaler: self.scaler.clone(),
            num_classes: self.num_classes(),
        };
        fs::write(dir.join("stack.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("stack.json");
        if !path.exists() {
            return Err(GaudaError::MissingArtifact(path));
        }
        let manifest: StackManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        let autoencoder = PairedAutoencoder::load(&dir.join("autoencoder"))?;
        let cfg = manifest.config;
        let mut denoiser = ConditionalDenoiser::new(
            2 * cfg.latent_dim,
            manifest.num_classes,
            &cfg.denoiser_hidden,
            cfg.class_dim,
            &mut RngStream::new(0, 0),
        )?;
        let params = load_tensors(dir.join("denoiser.gaud"))?;
        let mut slots = denoiser.params_mut();
        if params.len() != slots.len() {
            return Err(GaudaError::Format("denoiser checkpoint has the wrong tensor count".into()));
        }
        for (slot, p) in slots.iter_mut().zip(params) {
            if slot.shape() != p.shape() {
                return Err(GaudaError::Format("denoiser checkpoint shape mismatch".into()));
            }
            **slot = p;
        }
        let schedule = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)?;
        Ok(GenerativeStack {
            config: cfg,
            autoencoder,
            denoiser,
            schedule,
            scaler: manifest.scaler,
        })
    }
}

impl PairGenerator for GenerativeStack {
    fn generate(&self, class: Option<usize>, omega: f64, count: usize, rng: &mut RngStream) -> Result<Vec<PairedSample>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let z = reverse_sample(&self.denoiser, &self.schedule, class, omega, rng, count)?;
        self.decode(&z)
    }

    fn name(&self) -> &str {
        "diffusion"
    }
}

/// Returns real held-back pairs that contain the requested class.
#[derive(Clone, Debug)]
pub struct OracleGenerator {
    pub pool: Vec<PairedSample>,
}

impl PairGenerator for OracleGenerator {
    fn generate(&self, class: Option<usize>, _omega: f64, count: usize, rng: &mut RngStream) -> Result<Vec<PairedSample>> {
        let matching: Vec<&PairedSample> = match class {
            Some(c) => self.pool.iter().filter(|s| s.contains(c)).collect(),
            None => self.pool.iter().collect(),
        };
        if matching.is_empty() {
            return Ok(Vec::new());
        }
        Ok((0..count).map(|_| matching[rng.below(matching.len())].clone()).collect())
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

/// Ignores the class and returns random real pairs.
#[derive(Clone, Debug)]
pub struct EchoGenerator {
    pub pool: Vec<PairedSample>,
}

impl PairGenerator for EchoGenerator {
    fn generate(&self, _class: Option<usize>, _omega: f64, count: usize, rng: &mut RngStream) -> Result<Vec<PairedSample>> {
        if self.pool.is_empty() {
            return Err(GaudaError::invalid("echo generator has an empty pool"));
        }
        Ok((0..count).map(|_| self.pool[rng.below(self.pool.len())].clone()).collect())
    }

    fn name(&self) -> &str {
        "echo"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaler_roundtrip() {
        let mut rng = RngStream::new(0, 0);
        let z = rng.gaussian(&[50, 3]).scale(4.0).unwrap();
        let s = LatentScaler::fit(&z);
        let n = s.normalize(&z).unwrap();
        let back = s.denormalize(&n).unwrap();
        assert!(back.max_abs_diff(&z) < 1e-12);
        let col_mean: f64 = (0..50).map(|i| n.row(i)[1]).sum::<f64>() / 50.0;
        assert!(col_mean.abs() < 1e-12);
    }

    #[test]
    fn conditioning_prefers_foreground() {
        let img = Tensor::full(vec![1, 1, 3], 0.5);
        let s = PairedSample::from_labels(img.clone(), &[0, 2, 3], 4).unwrap();
        assert_eq!(conditioning_labels(&s), vec![2, 3]);
        let bg = PairedSample::from_labels(img, &[0, 0, 0], 4).unwrap();
        assert_eq!(conditioning_labels(&bg), vec![0]);
    }

    #[test]
    fn oracle_only_returns_matching_pairs() {
        let img = Tensor::full(vec![1, 1, 2], 0.5);
        let pool = vec![
            PairedSample::from_labels(img.clone(), &[0, 1], 3).unwrap(),
            PairedSample::from_labels(img, &[0, 2], 3).unwrap(),
        ];
        let g = OracleGenerator { pool };
        let out = g.generate(Some(2), 0.0, 20, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(out.len(), 20);
        assert!(out.iter().all(|s| s.contains(2)));
    }
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::AeConfig;
use crate::data::{ShapesSegSpec, Toy2dSpec};
use crate::diffusion::DiffusionTrainConfig;
use crate::ensemble::EnsembleConfig;
use crate::error::{GaudaError, Result};
use crate::generative::StackConfig;
use crate::trainer::{GaudaConfig, Policy, PolicyName};

/// Where GAUDA's synthetic pairs come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// The pretrained autoencoder + diffusion stack.
    Stack,
    /// Real pairs from a held-back set disjoint from the dataset.
    Oracle,
}

/// Output-quality evaluation of the generative stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    pub omegas: Vec<f64>,
    /// Conditional samples per class and guidance strength.
    pub fidelity_samples: usize,
    /// Vectors per set for kernel MMD.
    pub mmd_samples: usize,
    pub mmd_subsets: usize,
    /// Synthetic pairs for the real-only / synthetic-only protocol.
    pub ro_so_samples: usize,
    pub ro_so_steps: usize,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            omegas: vec![0.0, 1.0, 2.0, 3.0, 5.0],
            fidelity_samples: 100,
            mmd_samples: 500,
            mmd_subsets: 10,
            ro_so_samples: 500,
            ro_so_steps: 1000,
        }
    }
}

/// The two point-cloud studies on sampling and online augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub toy: Toy2dSpec,
    pub seeds: Vec<u64>,
    pub ensemble: EnsembleConfig,
    pub trainer: GaudaConfig,
    /// Published accuracy gain of uncertainty-based over score-based
    /// sampling, in percentage points.
    pub reference_delta: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            toy: Toy2dSpec {
                minority: 1,
                ..Toy2dSpec::default()
            },
            seeds: (0..10).collect(),
            ensemble: EnsembleConfig {
                members: 20,
                hidden: vec![10],
                dropout: 0.5,
                lr: 1e-2,
            },
            trainer: GaudaConfig {
                total_steps: 1000,
                batch: 32,
                val_interval: 50,
                n_c: 1,
                synth_batch: 100,
                aug_probability: 0.0,
                ..GaudaConfig::default()
            },
            reference_delta: 6.1,
        }
    }
}

/// Everything one experiment directory is built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: ShapesSegSpec,
    pub data_seed: u64,
    pub stack: StackConfig,
    pub stack_seed: u64,
    pub generator: GeneratorKind,
    /// Size of the held-back set the oracle draws from.
    pub held_back: usize,
    pub gauda: GaudaConfig,
    pub ensemble: EnsembleConfig,
    pub policies: Vec<PolicyName>,
    pub seeds: Vec<u64>,
    pub quality: QualityConfig,
    pub studies: StudyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let latent_dim = 32;
        ExperimentConfig {
            name: "shapes".into(),
            dataset: ShapesSegSpec {
                samples: 2400,
                ..ShapesSegSpec::default()
            },
            data_seed: 7,
            stack: StackConfig {
                latent_dim,
                autoencoder: AeConfig {
                    latent_dim,
                    ..AeConfig::default()
                },
                diffusion: DiffusionTrainConfig {
                    steps: 8000,
                    lr: 1e-3,
                    ..DiffusionTrainConfig::default()
                },
                beta_end: 0.1,
                denoiser_hidden: vec![256, 256],
                class_balanced: true,
                ..StackConfig::default()
            },
            stack_seed: 1,
            generator: GeneratorKind::Stack,
            held_back: 2400,
            gauda: GaudaConfig {
                total_steps: 3000,
                ..GaudaConfig::default()
            },
            ensemble: EnsembleConfig {
                lr: 3e-3,
                ..EnsembleConfig::default()
            },
            policies: Policy::comparison_set().into_iter().map(PolicyName).collect(),
            seeds: (0..10).collect(),
            quality: QualityConfig::default(),
            studies: StudyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(GaudaError::MissingArtifact(path.to_path_buf()));
        }
        let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| GaudaError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.studies.toy.validate()?;
        self.gauda.validate(self.dataset.num_classes())?;
        if self.seeds.is_empty() || self.policies.is_empty() {
            return Err(GaudaError::Config("seeds and policies must be nonempty".into()));
        }
        if self.ensemble.members < 2 || self.studies.ensemble.members < 2 {
            return Err(GaudaError::Config("ensembles need at least two members".into()));
        }
        if self.stack.latent_dim != self.stack.autoencoder.latent_dim {
            return Err(GaudaError::Config("stack and autoencoder latent sizes differ".into()));
        }
        Ok(())
    }

    pub fn policies(&self) -> Vec<Policy> {
        self.policies.iter().map(|p| p.0).collect()
    }

    pub fn trainer_config(&self, policy: Policy) -> crate::trainer::TrainerConfig {
        crate::trainer::TrainerConfig::new(policy, self.gauda.clone(), self.ensemble.clone())
    }
}

/// Parses `"0,1,5"`, `"0..10"` or a mix such as `"0..3,7"`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let bad = || GaudaError::Config(format!("bad seed list '{s}'"));
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a >= b {
                    return Err(bad());
                }
                seeds.extend(a..b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Parses a comma-separated policy list.
pub fn parse_policies(s: &str) -> Result<Vec<PolicyName>> {
    let out: Vec<PolicyName> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map(PolicyName))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(GaudaError::Config("empty policy list".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("0..3,7").unwrap(), vec![0, 1, 2, 7]);
        assert_eq!(parse_seed_list("4").unwrap(), vec![4]);
        assert!(parse_seed_list("3..1").is_err());
        assert!(parse_seed_list("x").is_err());
    }

    #[test]
    fn config_roundtrips_and_fills_defaults() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seeds": [3], "policies": ["gauda+aug"]}"#).unwrap();
        assert_eq!(partial.seeds, vec![3]);
        assert_eq!(partial.policies[0].0.to_string(), "gauda+aug");
        assert_eq!(partial.dataset, cfg.dataset);
    }

    #[test]
    fn policies_parse() {
        let p = parse_policies("none, as+aug").unwrap();
        assert_eq!(p.len(), 2);
        assert!(parse_policies("nope").is_err());
    }
}

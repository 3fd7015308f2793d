//! Experiment drivers behind the command-line harness: dataset preparation,
//! generative pretraining and quality checks, policy comparisons and the two
//! point-cloud studies. Each driver writes its artefacts under one output
//! directory and can resume from what is already there.

mod compare;
mod config;
mod pretrain;
mod studies;

use std::path::Path;

pub use compare::{
    cmd_compare_policies, run_dir, ComparisonReport, EffectSize, RunFailure, SeedOutcome, REFERENCE_EFFECT_SIZE,
};
pub use config::{parse_policies, parse_seed_list, ExperimentConfig, GeneratorKind, QualityConfig, StudyConfig};
pub use pretrain::{
    cmd_pretrain_generative, conditional_fidelity, fit_plain, generative_dir, train_or_load_stack, FidelityRow,
    QualityReport,
};
pub use studies::{
    cmd_supp_studies, run_augmentation_study, run_sampling_study, AugmentationSeed, AugmentationStudy, SamplingSeed,
    SamplingStudy, StudyReports,
};

use crate::autoencoder::PairedSample;
use crate::data::{gen_shapes_seg, ShapesData, ShapesSegSpec};
use crate::error::Result;
use crate::numeric::RngStream;

/// Loads `out/data` when it was built from the configured spec and seed,
/// otherwise generates the dataset and saves it there.
pub fn prepare_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<ShapesData> {
    let dir = out.join("data");
    if let Ok(d) = ShapesData::load(&dir) {
        if d.spec == cfg.dataset && d.seed == cfg.data_seed && d.stream_id == 0 {
            return Ok(d);
        }
        log::info!("dataset in {} was built from another config; regenerating", dir.display());
    }
    let d = gen_shapes_seg(&cfg.dataset, &mut RngStream::new(cfg.data_seed, 0))?;
    d.save(&dir)?;
    Ok(d)
}

/// Real pairs from the dataset distribution but a separate stream, disjoint
/// from every split; the oracle generator draws from these.
pub fn held_back_pool(cfg: &ExperimentConfig) -> Result<Vec<PairedSample>> {
    let spec = ShapesSegSpec {
        samples: cfg.held_back,
        ..cfg.dataset.clone()
    };
    Ok(gen_shapes_seg(&spec, &mut RngStream::new(cfg.data_seed, 1))?.samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_cached_and_regenerated_on_change() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.samples = 120;
        let a = prepare_dataset(&cfg, dir.path()).unwrap();
        let b = prepare_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(a, b);
        cfg.data_seed += 1;
        let c = prepare_dataset(&cfg, dir.path()).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn held_back_pool_differs_from_dataset() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.samples = 60;
        cfg.held_back = 60;
        let d = gen_shapes_seg(&cfg.dataset, &mut RngStream::new(cfg.data_seed, 0)).unwrap();
        let pool = held_back_pool(&cfg).unwrap();
        assert_eq!(pool.len(), 60);
        assert!(pool.iter().all(|p| !d.samples.contains(p)));
    }
}

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::{gen_toy2d, Example, Toy2dData};
use crate::error::{GaudaError, Result};
use crate::metrics::{median, ALL_LABELS};
use crate::numeric::RngStream;
use crate::trainer::{
    classic_augment, run_training, Geometry, Policy, PolicyKind, RunOptions, RunResult, Toy2dSimulator, TrainerConfig,
    TrainingData,
};

/// Accuracy gain, in percentage points, that counts as a clear win.
pub const CLEAR_WIN_PP: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSeed {
    pub seed: u64,
    pub score_accuracy: f64,
    pub uncertainty_accuracy: f64,
    /// Uncertainty-based minus score-based test accuracy, in points.
    pub delta_pp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingStudy {
    pub seeds: Vec<SamplingSeed>,
    pub median_delta_pp: f64,
    pub clear_wins: usize,
    pub reference_delta_pp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSeed {
    pub seed: u64,
    pub train_size: usize,
    pub minority_fraction_train: f64,
    pub pretrain_added: usize,
    pub pretrain_minority_fraction: f64,
    pub online_added: usize,
    pub online_minority_fraction: f64,
    /// Online over pretrain minority fraction.
    pub ratio: f64,
    pub pretrain_accuracy: f64,
    pub online_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationStudy {
    pub seeds: Vec<AugmentationSeed>,
    pub median_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReports {
    pub sampling: SamplingStudy,
    pub augmentation: AugmentationStudy,
}

/// One point set per seed, each from its own stream.
fn toy_data(cfg: &ExperimentConfig, seed: u64) -> Result<Toy2dData> {
    gen_toy2d(
        &cfg.studies.toy,
        &mut RngStream::new(cfg.data_seed, 0).derive("toy2d").split(seed),
    )
}

fn study_trainer(cfg: &ExperimentConfig, kind: PolicyKind) -> TrainerConfig {
    TrainerConfig::new(
        Policy::new(kind, false),
        cfg.studies.trainer.clone(),
        cfg.studies.ensemble.clone(),
    )
}

fn test_accuracy(r: &RunResult) -> Result<f64> {
    r.test
        .as_ref()
        .map(|t| t.accuracy)
        .ok_or_else(|| GaudaError::invalid("run did not complete"))
}

fn run_opts<'a>(out: Option<&Path>, study: &str, policy: &str, seed: u64, resume: bool) -> RunOptions<'a> {
    let opts = RunOptions::new(seed);
    match out {
        Some(o) => opts.with_run_dir(
            o.join("studies").join(study).join(policy).join(format!("seed-{seed}")),
            resume,
        ),
        None => opts,
    }
}

/// Score-based against uncertainty-based adaptive sampling on the point
/// task. Also returns the validation accuracy curves as CSV text.
pub fn run_sampling_study(cfg: &ExperimentConfig, out: Option<&Path>, resume: bool) -> Result<(SamplingStudy, String)> {
    let results: Vec<(SamplingSeed, Vec<(String, usize, f64)>)> = cfg
        .studies
        .seeds
        .par_iter()
        .map(|&seed| {
            let data = TrainingData::from_toy2d(&toy_data(cfg, seed)?);
            let mut curve = Vec::new();
            let mut acc = [0.0; 2];
            for (slot, kind) in [PolicyKind::As, PolicyKind::UncertaintyAs].into_iter().enumerate() {
                let tc = study_trainer(cfg, kind);
                let name = tc.policy().to_string();
                let r = run_training(&tc, &data, run_opts(out, "sampling", &name, seed, resume))?;
                acc[slot] = test_accuracy(&r)?;
                curve.extend(
                    r.metrics
                        .find("val", "accuracy", ALL_LABELS)
                        .map(|row| (name.clone(), row.step, row.value)),
                );
            }
            let s = SamplingSeed {
                seed,
                score_accuracy: acc[0],
                uncertainty_accuracy: acc[1],
                delta_pp: 100.0 * (acc[1] - acc[0]),
            };
            Ok((s, curve))
        })
        .collect::<Result<_>>()?;

    let mut csv = String::from("seed,policy,step,val_accuracy\n");
    for (s, curve) in &results {
        for (policy, step, v) in curve {
            csv.push_str(&format!("{},{policy},{step},{v}\n", s.seed));
        }
    }
    let seeds: Vec<SamplingSeed> = results.into_iter().map(|(s, _)| s).collect();
    let deltas: Vec<f64> = seeds.iter().map(|s| s.delta_pp).collect();
    let study = SamplingStudy {
        median_delta_pp: median(&deltas).unwrap_or(f64::NAN),
        clear_wins: deltas.iter().filter(|&&d| d >= CLEAR_WIN_PP).count(),
        reference_delta_pp: cfg.studies.reference_delta,
        seeds,
    };
    Ok((study, csv))
}

/// Adds |train| samples two ways: random augmentation of uniformly drawn
/// training points before training, and online uncertainty-targeted
/// synthesis during training. Compares the minority share of each.
pub fn run_augmentation_study(cfg: &ExperimentConfig, out: Option<&Path>, resume: bool) -> Result<AugmentationStudy> {
    let spec = &cfg.studies.toy;
    let minority = spec.minority;
    let seeds: Vec<AugmentationSeed> = cfg
        .studies
        .seeds
        .par_iter()
        .map(|&seed| {
            let toy = toy_data(cfg, seed)?;
            let data = TrainingData::from_toy2d(&toy);
            let n = data.train.len();
            let share = |v: &[Example]| v.iter().filter(|e| e.labels[0] == minority).count() as f64 / v.len().max(1) as f64;

            let mut rng = RngStream::new(seed, 0).derive("pretrain-augment");
            let added: Vec<Example> = (0..n)
                .map(|_| {
                    let e = &data.train[rng.below(n)];
                    classic_augment(e, Geometry::Point, 1.0, &mut rng)
                })
                .collect();
            let pretrain_minority_fraction = share(&added);
            let mut doubled = data.clone();
            doubled.train.extend(added);
            let pre = run_training(
                &study_trainer(cfg, PolicyKind::None),
                &doubled,
                run_opts(out, "augmentation", "pretrain", seed, resume),
            )?;

            let mut tc = study_trainer(cfg, PolicyKind::Gauda);
            let g = &mut tc.gauda;
            let rounds = g.total_steps.div_ceil(g.val_interval);
            g.synthesis = true;
            g.synth_budget = Some(n);
            g.synth_batch = n.div_ceil(rounds);
            let sim = Toy2dSimulator(spec.clone());
            let online = run_training(
                &tc,
                &data,
                run_opts(out, "augmentation", "online", seed, resume).with_synthesizer(&sim),
            )?;
            let by_class = &online.pool.added_by_class;
            let online_added: usize = by_class.values().sum();
            let online_minority_fraction =
                by_class.get(&minority).copied().unwrap_or(0) as f64 / online_added.max(1) as f64;

            Ok(AugmentationSeed {
                seed,
                train_size: n,
                minority_fraction_train: share(&data.train),
                pretrain_added: n,
                pretrain_minority_fraction,
                online_added,
                online_minority_fraction,
                ratio: online_minority_fraction / pretrain_minority_fraction,
                pretrain_accuracy: test_accuracy(&pre)?,
                online_accuracy: test_accuracy(&online)?,
            })
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = seeds.iter().map(|s| s.ratio).collect();
    Ok(AugmentationStudy {
        median_ratio: median(&ratios).unwrap_or(f64::NAN),
        seeds,
    })
}

/// Runs both point-cloud studies and writes their reports under
/// `out/studies`.
pub fn cmd_supp_studies(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<StudyReports> {
    cfg.validate()?;
    let dir = out.join("studies");
    fs::create_dir_all(&dir)?;
    let (sampling, curves) = run_sampling_study(cfg, Some(out), resume)?;
    fs::write(dir.join("sampling_curves.csv"), curves)?;
    let augmentation = run_augmentation_study(cfg, Some(out), resume)?;
    let reports = StudyReports { sampling, augmentation };
    fs::write(dir.join("studies.json"), serde_json::to_string_pretty(&reports)?)?;
    fs::write(dir.join("studies.md"), studies_markdown(&reports))?;
    Ok(reports)
}

fn studies_markdown(r: &StudyReports) -> String {
    let s = &r.sampling;
    let mut md = String::from("## Score-based vs uncertainty-based sampling\n\n");
    md.push_str("| Seed | Score acc | Uncertainty acc | Delta (pp) |\n|---|---|---|---|\n");
    for x in &s.seeds {
        md.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:+.2} |\n",
            x.seed, x.score_accuracy, x.uncertainty_accuracy, x.delta_pp
        ));
    }
    md.push_str(&format!(
        "\nMedian delta {:+.2} pp; {} of {} seeds gain at least {CLEAR_WIN_PP} pp; reference {:+.1} pp.\n\n",
        s.median_delta_pp,
        s.clear_wins,
        s.seeds.len(),
        s.reference_delta_pp
    ));
    let a = &r.augmentation;
    md.push_str("## Pretrain vs online augmentation\n\n");
    md.push_str("| Seed | Added | Pretrain minority | Online minority | Ratio | Pretrain acc | Online acc |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    for x in &a.seeds {
        md.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} | {:.2} | {:.4} | {:.4} |\n",
            x.seed,
            x.pretrain_added,
            x.pretrain_minority_fraction,
            x.online_minority_fraction,
            x.ratio,
            x.pretrain_accuracy,
            x.online_accuracy
        ));
    }
    md.push_str(&format!("\nMedian minority ratio {:.2}.\n", a.median_ratio));
    md
}

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, GeneratorKind};
use super::pretrain::generative_dir;
use super::{held_back_pool, prepare_dataset};
use crate::error::{GaudaError, Result};
use crate::generative::{GenerativeStack, OracleGenerator, PairGenerator};
use crate::metrics::{cohens_d, AggregateMode, Evaluation};
use crate::trainer::{run_training, PairSynthesizer, Policy, PolicyKind, RunOptions, Synthesizer, TrainingData};

/// Published effect size of GAUDA over the best baseline.
pub const REFERENCE_EFFECT_SIZE: f64 = 0.714;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub policy: String,
    pub seed: u64,
    pub per_label_iou: Vec<Option<f64>>,
    pub iou: [f64; 3],
    pub dice: [f64; 3],
    pub ap: [f64; 3],
    pub accuracy: f64,
    /// Per-sample mean scores of the test split, for violin plots.
    #[serde(skip)]
    pub per_sample: Vec<(&'static str, Vec<Option<f64>>)>,
}

impl SeedOutcome {
    fn from_evaluation(policy: &str, seed: u64, ev: &Evaluation) -> Result<Self> {
        let agg = |t: &crate::metrics::ScoreTable| -> Result<[f64; 3]> {
            Ok([
                t.aggregate(AggregateMode::LabelMean)?,
                t.aggregate(AggregateMode::SampleMean)?,
                t.aggregate(AggregateMode::SampleMedian)?,
            ])
        };
        Ok(SeedOutcome {
            policy: policy.to_string(),
            seed,
            per_label_iou: ev.iou.per_label(),
            iou: agg(&ev.iou)?,
            dice: agg(&ev.dice)?,
            ap: agg(&ev.ap)?,
            accuracy: ev.accuracy,
            per_sample: vec![
                ("iou", ev.iou.per_sample()),
                ("dice", ev.dice.per_sample()),
                ("ap", ev.ap.per_sample()),
            ],
        })
    }

    pub fn label_mean_iou(&self) -> f64 {
        self.iou[0]
    }

    /// Test IoU of one label; zero when never defined.
    pub fn label_iou(&self, label: usize) -> f64 {
        self.per_label_iou.get(label).copied().flatten().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub policy: String,
    pub baseline: String,
    pub label_mean_d: Option<f64>,
    pub rare_class_d: Option<f64>,
    pub reference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub policy: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub policies: Vec<String>,
    pub classes: usize,
    /// Class with the fewest training samples.
    pub rare_class: usize,
    pub outcomes: Vec<SeedOutcome>,
    pub failures: Vec<RunFailure>,
    pub effects: Vec<EffectSize>,
}

impl ComparisonReport {
    pub fn outcomes_for<'a>(&'a self, policy: &'a str) -> impl Iterator<Item = &'a SeedOutcome> {
        self.outcomes.iter().filter(move |o| o.policy == policy)
    }

    /// `(seed, a − b)` for seeds both policies completed.
    pub fn paired_deltas(&self, a: &str, b: &str, score: impl Fn(&SeedOutcome) -> f64) -> Vec<(u64, f64)> {
        self.outcomes_for(a)
            .filter_map(|x| {
                self.outcomes_for(b)
                    .find(|y| y.seed == x.seed)
                    .map(|y| (x.seed, score(x) - score(y)))
            })
            .collect()
    }

    fn mean_of(&self, policy: &str, score: impl Fn(&SeedOutcome) -> f64) -> Option<f64> {
        let v: Vec<f64> = self.outcomes_for(policy).map(score).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Labels × policies table of seed-averaged test IoU with the three
    /// aggregate rows.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| Label | {} |", self.policies.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(self.policies.len()));
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.4}", v));
        for label in 0..self.classes {
            let cells: Vec<String> = self
                .policies
                .iter()
                .map(|p| {
                    let v: Vec<f64> = self
                        .outcomes_for(p)
                        .filter_map(|o| o.per_label_iou.get(label).copied().flatten())
                        .collect();
                    cell((!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64))
                })
                .collect();
            let _ = writeln!(s, "| {label} | {} |", cells.join(" | "));
        }
        for (i, mode) in AggregateMode::ALL.iter().enumerate() {
            let cells: Vec<String> = self
                .policies
                .iter()
                .map(|p| cell(self.mean_of(p, |o| o.iou[i])))
                .collect();
            let _ = writeln!(s, "| {} | {} |", mode.title(), cells.join(" | "));
        }
        if !self.effects.is_empty() {
            let _ = writeln!(s, "\n| Policy | Baseline | d (label mean) | d (label {}) | reference |", self.rare_class);
            let _ = writeln!(s, "|---|---|---|---|---|");
            for e in &self.effects {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {:.3} |",
                    e.policy,
                    e.baseline,
                    cell(e.label_mean_d),
                    cell(e.rare_class_d),
                    e.reference
                );
            }
        }
        if !self.failures.is_empty() {
            let _ = writeln!(s, "\nExcluded runs:");
            for f in &self.failures {
                let _ = writeln!(s, "- {} seed {}: {}", f.policy, f.seed, f.error);
            }
        }
        s
    }

    fn effect_sizes(&mut self) -> Result<()> {
        let generative = |p: &str| p.starts_with("gauda");
        let best = self
            .policies
            .iter()
            .filter(|p| !generative(p))
            .filter_map(|p| self.mean_of(p, SeedOutcome::label_mean_iou).map(|m| (p.clone(), m)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(p, _)| p);
        let Some(baseline) = best else {
            return Ok(());
        };
        let rare = self.rare_class;
        let base_lm: Vec<f64> = self.outcomes_for(&baseline).map(SeedOutcome::label_mean_iou).collect();
        let base_rare: Vec<f64> = self.outcomes_for(&baseline).map(|o| o.label_iou(rare)).collect();
        for p in self.policies.iter().filter(|p| generative(p)) {
            let lm: Vec<f64> = self.outcomes_for(p).map(SeedOutcome::label_mean_iou).collect();
            let rr: Vec<f64> = self.outcomes_for(p).map(|o| o.label_iou(rare)).collect();
            if lm.len() < 2 || base_lm.len() < 2 {
                continue;
            }
            self.effects.push(EffectSize {
                policy: p.clone(),
                baseline: baseline.clone(),
                label_mean_d: cohens_d(&lm, &base_lm)?,
                rare_class_d: cohens_d(&rr, &base_rare)?,
                reference: REFERENCE_EFFECT_SIZE,
            });
        }
        Ok(())
    }
}

pub fn run_dir(out: &Path, policy: &str, seed: u64) -> PathBuf {
    out.join("runs").join(policy).join(format!("seed-{seed}"))
}

/// Trains every policy × seed, then writes `report.md`, `report.json` and
/// `violin.csv`. Failed runs are excluded and listed in the report.
pub fn cmd_compare_policies(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<ComparisonReport> {
    cfg.validate()?;
    let data = prepare_dataset(cfg, out)?;
    let training = TrainingData::from_shapes(&data);
    let policies = cfg.policies();
    let needs_generator = policies.iter().any(|p| p.kind == PolicyKind::Gauda) && cfg.gauda.synthesis;

    let stack;
    let oracle;
    let generator: Option<&dyn PairGenerator> = match (needs_generator, cfg.generator) {
        (false, _) => None,
        (true, GeneratorKind::Stack) => {
            stack = GenerativeStack::load(&generative_dir(out))?;
            Some(&stack)
        }
        (true, GeneratorKind::Oracle) => {
            oracle = OracleGenerator {
                pool: held_back_pool(cfg)?,
            };
            Some(&oracle)
        }
    };
    let synth = generator.map(PairSynthesizer);
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;

    let jobs: Vec<(Policy, u64)> = policies
        .iter()
        .flat_map(|&p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<(Policy, u64, Result<Evaluation>)> = jobs
        .par_iter()
        .map(|&(policy, seed)| {
            let mut opts = RunOptions::new(seed).with_run_dir(run_dir(out, &policy.to_string(), seed), resume);
            if let Some(s) = &synth {
                opts = opts.with_synthesizer(s as &dyn Synthesizer);
            }
            let res = run_training(&cfg.trainer_config(policy), &training, opts)
                .and_then(|r| r.test.ok_or_else(|| GaudaError::invalid("run did not complete")));
            (policy, seed, res)
        })
        .collect();

    let rare_class = (0..training.histogram.len())
        .min_by_key(|&c| (training.histogram[c], std::cmp::Reverse(c)))
        .unwrap_or(0);
    let mut report = ComparisonReport {
        policies: policies.iter().map(Policy::to_string).collect(),
        classes: training.task.classes(),
        rare_class,
        outcomes: Vec::new(),
        failures: Vec::new(),
        effects: Vec::new(),
    };
    for (policy, seed, res) in results {
        match res.and_then(|ev| SeedOutcome::from_evaluation(&policy.to_string(), seed, &ev)) {
            Ok(o) => report.outcomes.push(o),
            Err(e) => {
                log::warn!("excluding {policy} seed {seed}: {e}");
                report.failures.push(RunFailure {
                    policy: policy.to_string(),
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    report.effect_sizes()?;

    fs::write(out.join("report.md"), report.to_markdown())?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    write_violin_csv(&report, &out.join("violin.csv"))?;
    Ok(report)
}

#[derive(Serialize)]
struct ViolinRow<'a> {
    policy: &'a str,
    seed: u64,
    sample_id: usize,
    metric: &'a str,
    value: f64,
}

fn write_violin_csv(report: &ComparisonReport, path: &Path) -> Result<()> {
    let fmt = |e: csv::Error| GaudaError::Format(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    for o in &report.outcomes {
        for (metric, values) in &o.per_sample {
            for (sample_id, v) in values.iter().enumerate() {
                if let Some(value) = v {
                    w.serialize(ViolinRow {
                        policy: &o.policy,
                        seed: o.seed,
                        sample_id,
                        metric,
                        value: *value,
                    })
                    .map_err(fmt)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

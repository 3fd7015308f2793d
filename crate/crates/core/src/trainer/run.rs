use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::augment::{classic_augment, Geometry};
use super::config::{PolicyKind, TrainerConfig};
use super::pool::{mix_batch, select_uncertain_classes, spread_requests, synthesize_for_classes, SynthPool, Synthesizer};
use crate::data::{Example, ShapesData, Toy2dData};
use crate::ensemble::{EnsembleModel, Task, Uncertainty};
use crate::error::{GaudaError, Result};
use crate::metrics::{evaluate, AggregateMode, Evaluation, RunMetrics, ALL_LABELS};
use crate::numeric::{RngState, RngStream};
use crate::sampling::{
    freq_weights, sample_weights, score_adaptive_update, uncertainty_adaptive_update, ClassWeights, WeightedIndex,
};

/// Train / validation / test examples of one downstream task.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    pub task: Task,
    pub geometry: Geometry,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    /// Training samples containing each class.
    pub histogram: Vec<usize>,
}

impl TrainingData {
    pub fn from_shapes(d: &ShapesData) -> Self {
        TrainingData {
            task: Task::Segmentation {
                classes: d.spec.num_classes(),
                pixels: d.spec.pixels(),
            },
            geometry: Geometry::Image {
                channels: 1,
                height: d.spec.height,
                width: d.spec.width,
            },
            train: d.examples(&d.split.train),
            val: d.examples(&d.split.val),
            test: d.examples(&d.split.test),
            histogram: d.histogram.clone(),
        }
    }

    pub fn from_toy2d(d: &Toy2dData) -> Self {
        let mut histogram = vec![0; 2];
        for &i in &d.split.train {
            histogram[d.labels[i]] += 1;
        }
        TrainingData {
            task: Task::Classification { classes: 2 },
            geometry: Geometry::Point,
            train: d.examples(&d.split.train),
            val: d.examples(&d.split.val),
            test: d.examples(&d.split.test),
            histogram,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.train.first().map_or(0, |e| e.input.len())
    }
}

/// Per-run options that are not part of the saved configuration.
pub struct RunOptions<'a> {
    pub seed: u64,
    pub synthesizer: Option<&'a dyn Synthesizer>,
    /// Directory for checkpoints, `metrics.csv`, `pool_manifest.json` and
    /// `events.log`.
    pub run_dir: Option<PathBuf>,
    pub resume: bool,
    /// Stop after the checkpoint at this step, leaving the run resumable.
    pub halt_after: Option<usize>,
}

impl<'a> RunOptions<'a> {
    pub fn new(seed: u64) -> Self {
        RunOptions {
            seed,
            synthesizer: None,
            run_dir: None,
            resume: false,
            halt_after: None,
        }
    }

    pub fn with_synthesizer(mut self, s: &'a dyn Synthesizer) -> Self {
        self.synthesizer = Some(s);
        self
    }

    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>, resume: bool) -> Self {
        self.run_dir = Some(dir.into());
        self.resume = resume;
        self
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub policy: String,
    pub seed: u64,
    pub steps: usize,
    pub completed: bool,
    pub metrics: RunMetrics,
    /// Test-split scores; `None` for a halted run.
    pub test: Option<Evaluation>,
    pub ensemble: EnsembleModel,
    pub pool: SynthPool,
    pub weights: ClassWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunIdentity {
    config: TrainerConfig,
    seed: u64,
    train_size: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainerState {
    step: usize,
    round: usize,
    completed: bool,
    checkpoint: String,
    weights: ClassWeights,
    pool: SynthPool,
    synth_requested: usize,
    draw: Vec<RngState>,
    dropout: Vec<RngState>,
    aug: RngState,
    mix: RngState,
}

struct Streams {
    draw: Vec<RngStream>,
    dropout: Vec<RngStream>,
    aug: RngStream,
    mix: RngStream,
    synth: RngStream,
}

impl Streams {
    fn new(root: &RngStream, k: usize) -> Self {
        let draw = root.derive("draw");
        let dropout = root.derive("dropout");
        Streams {
            draw: (0..k).map(|i| draw.split(i as u64)).collect(),
            dropout: (0..k).map(|i| dropout.split(i as u64)).collect(),
            aug: root.derive("aug"),
            mix: root.derive("mix"),
            synth: root.derive("synth"),
        }
    }

    fn restore(&mut self, s: &TrainerState) {
        self.draw = s.draw.iter().map(RngStream::from_state).collect();
        self.dropout = s.dropout.iter().map(RngStream::from_state).collect();
        self.aug = RngStream::from_state(&s.aug);
        self.mix = RngStream::from_state(&s.mix);
    }
}

/// How original batch members are drawn.
enum Draw {
    Uniform,
    Weighted(WeightedIndex),
}

impl Draw {
    fn next(&self, n: usize, rng: &mut RngStream) -> usize {
        match self {
            Draw::Uniform => rng.below(n),
            Draw::Weighted(w) => w.draw(rng),
        }
    }
}

struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn state_path(&self) -> PathBuf {
        self.root.join("state.json")
    }

    fn event(&self, line: &str) -> Result<()> {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join("events.log"))?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    fn write_atomic(&self, name: &str, contents: &str) -> Result<()> {
        let tmp = self.root.join(format!("{name}.tmp"));
        fs::write(&tmp, contents)?;
        fs::rename(tmp, self.root.join(name))?;
        Ok(())
    }

    fn write_pool_manifest(&self, pool: &SynthPool) -> Result<()> {
        #[derive(Serialize)]
        struct Item {
            round: usize,
            class: usize,
            seed: u64,
            stream_id: u64,
            presence: Vec<usize>,
        }
        let manifest = serde_json::json!({
            "capacity": pool.capacity,
            "added": pool.added,
            "dropped_off_target": pool.dropped_off_target,
            "evicted": pool.evicted,
            "added_by_class": pool.added_by_class,
            "entries": pool.entries.iter().map(|e| Item {
                round: e.round,
                class: e.class,
                seed: e.seed,
                stream_id: e.stream_id,
                presence: e.example.presence.clone(),
            }).collect::<Vec<_>>(),
        });
        self.write_atomic("pool_manifest.json", &serde_json::to_string_pretty(&manifest)?)
    }
}

/// Whole-run mutable state, kept together so checkpoints capture all of it.
struct Trainer<'a> {
    config: &'a TrainerConfig,
    data: &'a TrainingData,
    synthesizer: Option<&'a dyn Synthesizer>,
    policy_name: String,
    kind: PolicyKind,
    ensemble: EnsembleModel,
    streams: Streams,
    weights: ClassWeights,
    draw: Draw,
    pool: SynthPool,
    metrics: RunMetrics,
    step: usize,
    round: usize,
    synth_requested: usize,
    loss_sum: f64,
    loss_count: usize,
    dir: Option<RunDir>,
}

impl<'a> Trainer<'a> {
    fn rebuild_draw(&mut self) -> Result<()> {
        self.draw = match self.kind {
            PolicyKind::None | PolicyKind::Gauda => Draw::Uniform,
            PolicyKind::As | PolicyKind::UncertaintyAs => {
                let presence: Vec<&[usize]> = self.data.train.iter().map(|e| e.presence.as_slice()).collect();
                let w = sample_weights(&presence, &self.weights, self.config.gauda.sample_weighting);
                Draw::Weighted(WeightedIndex::new(&w)?)
            }
        };
        Ok(())
    }

    fn log(&mut self, split: &str, metric: &str, label: impl ToString, value: f64) {
        self.metrics.push(self.step, split, &self.policy_name, metric, label, value);
    }

    fn event(&self, line: &str) -> Result<()> {
        log::debug!("[{}] {line}", self.policy_name);
        match &self.dir {
            Some(d) => d.event(line),
            None => Ok(()),
        }
    }

    fn train_step(&mut self) -> Result<()> {
        let g = &self.config.gauda;
        let n = self.data.train.len();
        for i in 0..self.ensemble.k() {
            let originals: Vec<&Example> = (0..g.batch)
                .map(|_| &self.data.train[self.draw.next(n, &mut self.streams.draw[i])])
                .collect();
            let mixed = if self.kind == PolicyKind::Gauda {
                mix_batch(originals, &self.pool, g.replace_fraction, &mut self.streams.mix)
            } else {
                originals
            };
            let owned: Vec<Example>;
            let batch: Vec<&Example> = if self.config.policy().aug {
                owned = mixed
                    .iter()
                    .map(|e| classic_augment(e, self.data.geometry, g.aug_probability, &mut self.streams.aug))
                    .collect();
                owned.iter().collect()
            } else {
                mixed
            };
            let loss = self
                .ensemble
                .member_step(i, &batch, &mut self.streams.dropout[i])
                .map_err(|e| self.numeric_failure(i, e))?;
            if !loss.is_finite() {
                return Err(self.numeric_failure(i, GaudaError::NonFinite(format!("loss = {loss}"))));
            }
            self.loss_sum += loss;
            self.loss_count += 1;
        }
        Ok(())
    }

    fn numeric_failure(&self, member: usize, e: GaudaError) -> GaudaError {
        match e {
            GaudaError::NonFinite(what) => {
                let context = format!("member {member}, policy {}: {what}", self.policy_name);
                let _ = self.event(&format!("step {}: numeric failure: {context}", self.step + 1));
                GaudaError::NumericFailure {
                    step: self.step + 1,
                    context,
                }
            }
            other => other,
        }
    }

    fn validate(&mut self) -> Result<()> {
        let val: Vec<&Example> = self.data.val.iter().collect();
        let ev = evaluate(&self.ensemble, &val)?;
        let mean_loss = self.loss_sum / self.loss_count.max(1) as f64;
        self.loss_sum = 0.0;
        self.loss_count = 0;
        self.log("val", "loss", ALL_LABELS, mean_loss);
        self.log("val", "accuracy", ALL_LABELS, ev.accuracy);
        if let Task::Segmentation { .. } = self.data.task {
            let iou = ev.iou.aggregate(AggregateMode::LabelMean)?;
            self.log("val", "iou", ALL_LABELS, iou);
        }
        for (&c, &s) in &ev.class_scores {
            self.log("val", "score", c, s);
        }
        for (&c, u) in &ev.uncertainty {
            match u {
                Uncertainty::Value(v) => self.log("val", "ue", c, *v),
                Uncertainty::Absent => self.log("val", "ue_absent", c, 1.0),
            }
        }

        let prev = self.weights.clone();
        self.weights = match self.kind {
            PolicyKind::As => score_adaptive_update(&prev, &ev.class_scores, self.step)?,
            PolicyKind::UncertaintyAs => uncertainty_adaptive_update(&prev, &ev.uncertainty, self.step)?,
            PolicyKind::None | PolicyKind::Gauda => prev,
        };
        self.rebuild_draw()?;
        for (c, w) in self.weights.normalized() {
            self.log("val", "weight", c, w);
        }

        if self.kind == PolicyKind::Gauda && self.config.gauda.synthesis {
            self.synthesis_round(&ev.uncertainty)?;
        }
        let pool_size = self.pool.len() as f64;
        self.log("val", "pool_size", ALL_LABELS, pool_size);
        self.event(&format!(
            "step {}: validation accuracy {:.4}, loss {:.4}, pool {}",
            self.step, ev.accuracy, mean_loss, self.pool.len()
        ))?;
        self.round += 1;
        Ok(())
    }

    fn synthesis_round(&mut self, ue: &BTreeMap<usize, Uncertainty>) -> Result<()> {
        let g = &self.config.gauda;
        let Some(synth) = self.synthesizer else {
            return Ok(());
        };
        let selected = select_uncertain_classes(ue, g.n_c);
        let max_ue = ue.values().filter_map(|u| u.value()).fold(0.0, f64::max);
        let sel_ue: f64 =
            selected.iter().map(|c| ue[c].value().unwrap_or(max_ue)).sum::<f64>() / selected.len().max(1) as f64;
        for (rank, &c) in selected.iter().enumerate() {
            self.log("val", "selected", c, rank as f64);
        }
        self.log("val", "selected_ue", ALL_LABELS, sel_ue);

        let remaining = g.synth_budget.map_or(usize::MAX, |b| b.saturating_sub(self.synth_requested));
        let total = g.synth_batch.min(remaining);
        let requests = spread_requests(&selected, total);
        let round = synthesize_for_classes(
            synth,
            &requests,
            g.omega,
            self.round,
            g.keep_off_target,
            &self.streams.synth.split(self.round as u64),
        )?;
        self.synth_requested += total;
        let added = round.entries.len();
        self.pool.dropped_off_target += round.dropped_off_target;
        for e in round.entries {
            self.pool.push(e);
        }
        self.log("val", "synth_added", ALL_LABELS, added as f64);
        self.log("val", "synth_dropped", ALL_LABELS, round.dropped_off_target as f64);
        self.event(&format!(
            "step {}: synthesised {added} for classes {selected:?} (dropped {} off-target)",
            self.step, round.dropped_off_target
        ))
    }

    fn checkpoint(&self, completed: bool) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let name = format!("weights/step-{}", self.step);
        self.ensemble.save(&dir.root.join(&name))?;
        self.metrics.write_csv(&dir.root.join("metrics.csv"))?;
        dir.write_pool_manifest(&self.pool)?;
        let state = TrainerState {
            step: self.step,
            round: self.round,
            completed,
            checkpoint: name.clone(),
            weights: self.weights.clone(),
            pool: self.pool.clone(),
            synth_requested: self.synth_requested,
            draw: self.streams.draw.iter().map(RngStream::state).collect(),
            dropout: self.streams.dropout.iter().map(RngStream::state).collect(),
            aug: self.streams.aug.state(),
            mix: self.streams.mix.state(),
        };
        dir.write_atomic("state.json", &serde_json::to_string(&state)?)?;
        // older checkpoints are superseded once the state points past them
        for entry in fs::read_dir(dir.root.join("weights"))? {
            let path = entry?.path();
            if path.file_name().and_then(|n| n.to_str()) != name.strip_prefix("weights/") {
                fs::remove_dir_all(path)?;
            }
        }
        Ok(())
    }

    fn test(&mut self) -> Result<Evaluation> {
        let test: Vec<&Example> = self.data.test.iter().collect();
        let ev = evaluate(&self.ensemble, &test)?;
        self.log("test", "accuracy", ALL_LABELS, ev.accuracy);
        for (&c, &s) in &ev.class_scores {
            self.log("test", "score", c, s);
        }
        if let Task::Segmentation { .. } = self.data.task {
            for (name, table) in [("iou", &ev.iou), ("dice", &ev.dice), ("ap", &ev.ap)] {
                for (c, v) in table.per_label().into_iter().enumerate() {
                    if let Some(v) = v {
                        self.log("test", name, c, v);
                    }
                }
                for mode in AggregateMode::ALL {
                    let v = table.aggregate(mode)?;
                    self.log("test", &format!("{name}_{}", mode.key()), ALL_LABELS, v);
                }
            }
        }
        Ok(ev)
    }
}

/// Trains a downstream ensemble under one policy.
///
/// With a run directory, the trainer checkpoints at every validation round;
/// resuming from a checkpoint reproduces the uninterrupted run exactly.
pub fn run_training(config: &TrainerConfig, data: &TrainingData, opts: RunOptions<'_>) -> Result<RunResult> {
    let classes = data.task.classes();
    config.gauda.validate(classes)?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(GaudaError::invalid("training and validation splits must be nonempty"));
    }
    let policy = config.policy();
    let mut kind = policy.kind;
    if kind == PolicyKind::Gauda && opts.synthesizer.is_none() && config.gauda.synthesis {
        log::warn!("policy {policy} has no generator; falling back to score-based sampling");
        kind = PolicyKind::As;
    }
    let root = RngStream::new(opts.seed, 0);
    let ensemble = EnsembleModel::new(data.task, data.input_dim(), &config.ensemble, &root.derive("init"))?;
    let k = ensemble.k();
    let weights = match kind {
        PolicyKind::As => freq_weights(&data.histogram)?,
        _ => ClassWeights::uniform(classes),
    };
    let identity = RunIdentity {
        config: config.clone(),
        seed: opts.seed,
        train_size: data.train.len(),
    };

    let mut t = Trainer {
        config,
        data,
        synthesizer: opts.synthesizer,
        policy_name: policy.to_string(),
        kind,
        ensemble,
        streams: Streams::new(&root, k),
        weights,
        draw: Draw::Uniform,
        pool: SynthPool::new(config.gauda.pool_capacity()),
        metrics: RunMetrics::new(),
        step: 0,
        round: 0,
        synth_requested: 0,
        loss_sum: 0.0,
        loss_count: 0,
        dir: None,
    };

    let mut completed = false;
    if let Some(root_dir) = &opts.run_dir {
        let dir = RunDir { root: root_dir.clone() };
        fs::create_dir_all(&dir.root)?;
        let state_path = dir.state_path();
        if opts.resume && state_path.exists() {
            let saved: RunIdentity = serde_json::from_str(&fs::read_to_string(dir.root.join("config.json"))?)?;
            if saved != identity {
                return Err(GaudaError::Config(format!(
                    "run directory {} holds a different configuration",
                    dir.root.display()
                )));
            }
            let state: TrainerState = serde_json::from_str(&fs::read_to_string(&state_path)?)?;
            t.ensemble = EnsembleModel::load(&dir.root.join(&state.checkpoint))?;
            t.streams.restore(&state);
            t.weights = state.weights.clone();
            t.pool = state.pool.clone();
            t.step = state.step;
            t.round = state.round;
            t.synth_requested = state.synth_requested;
            let logged = RunMetrics::read_csv(&dir.root.join("metrics.csv"))?;
            for r in logged.rows() {
                if r.step <= state.step && (state.completed || r.split != "test") {
                    t.metrics.push(r.step, &r.split, &r.policy, &r.metric, &r.label, r.value);
                }
            }
            completed = state.completed;
            dir.event(&format!("resumed at step {}", state.step))?;
        } else {
            for stale in ["state.json", "metrics.csv", "events.log", "pool_manifest.json"] {
                let p = dir.root.join(stale);
                if p.exists() {
                    fs::remove_file(p)?;
                }
            }
            let ck = dir.root.join("weights");
            if ck.exists() {
                fs::remove_dir_all(&ck)?;
            }
            fs::write(dir.root.join("config.json"), serde_json::to_string_pretty(&identity)?)?;
            dir.event(&format!("start: policy {policy}, seed {}", opts.seed))?;
        }
        fs::create_dir_all(dir.root.join("weights"))?;
        t.dir = Some(dir);
    }
    t.rebuild_draw()?;

    let total = config.gauda.total_steps;
    let interval = config.gauda.val_interval;
    if !completed {
        while t.step < total {
            t.train_step()?;
            t.step += 1;
            if t.step % interval == 0 || t.step == total {
                t.validate()?;
                t.checkpoint(false)?;
                if opts.halt_after.is_some_and(|h| t.step >= h) && t.step < total {
                    t.event(&format!("halted at step {}", t.step))?;
                    return Ok(RunResult {
                        policy: t.policy_name,
                        seed: opts.seed,
                        steps: t.step,
                        completed: false,
                        metrics: t.metrics,
                        test: None,
                        ensemble: t.ensemble,
                        pool: t.pool,
                        weights: t.weights,
                    });
                }
            }
        }
    }
    let test = if completed {
        let test: Vec<&Example> = data.test.iter().collect();
        evaluate(&t.ensemble, &test)?
    } else {
        let ev = t.test()?;
        t.checkpoint(true)?;
        t.event(&format!("finished at step {}", t.step))?;
        ev
    };
    Ok(RunResult {
        policy: t.policy_name,
        seed: opts.seed,
        steps: t.step,
        completed: true,
        metrics: t.metrics,
        test: Some(test),
        ensemble: t.ensemble,
        pool: t.pool,
        weights: t.weights,
    })
}

//! Deep ensembles: posterior prediction sets, their mean, and class-wise
//! epistemic uncertainty from the across-member variance.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::argmax_lowest;
use crate::data::Example;
use crate::error::{GaudaError, Result};
use crate::nn::{cross_entropy, load_mlp, one_hot, save_mlp, Adam, AdamConfig, Mlp, Mode, Parameterized};
use crate::numeric::io::{load_tensors, save_tensors};
use crate::numeric::{RngStream, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    /// One class distribution per pixel, pixel-major output layout.
    Segmentation { classes: usize, pixels: usize },
    Classification { classes: usize },
}

impl Task {
    pub fn classes(&self) -> usize {
        match *self {
            Task::Segmentation { classes, .. } | Task::Classification { classes } => classes,
        }
    }

    /// Predicted distributions per input.
    pub fn outputs(&self) -> usize {
        match *self {
            Task::Segmentation { pixels, .. } => pixels,
            Task::Classification { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub lr: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: 5,
            hidden: vec![64],
            dropout: 0.0,
            lr: 1e-3,
        }
    }
}

/// `k` probability tensors with one softmax row per predicted distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSet {
    pub predictions: Vec<Tensor>,
}

/// Class-wise uncertainty; `Absent` marks a class no pixel is predicted as.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Uncertainty {
    Value(f64),
    Absent,
}

impl Uncertainty {
    pub fn value(&self) -> Option<f64> {
        match self {
            Uncertainty::Value(v) => Some(*v),
            Uncertainty::Absent => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleModel {
    pub members: Vec<Mlp>,
    pub optimizers: Vec<Adam>,
    pub task: Task,
    pub seeds: Vec<u64>,
    pub trained: bool,
}

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    k: usize,
    task: Task,
    seeds: Vec<u64>,
    trained: bool,
    optimizer_steps: Vec<u64>,
}

/// Stacks example inputs into a batch matrix.
pub fn input_matrix(examples: &[&Example]) -> Result<Tensor> {
    let first = examples.first().ok_or_else(|| GaudaError::invalid("empty batch"))?;
    let d = first.input.len();
    let mut data = Vec::with_capacity(examples.len() * d);
    for e in examples {
        if e.input.len() != d {
            return Err(GaudaError::invalid("inputs of unequal width"));
        }
        data.extend_from_slice(&e.input);
    }
    Tensor::new(vec![examples.len(), d], data)
}

impl EnsembleModel {
    /// `k` members with independent initialisations from split streams.
    pub fn new(task: Task, input_dim: usize, cfg: &EnsembleConfig, rng: &RngStream) -> Result<Self> {
        if cfg.members < 2 {
            return Err(GaudaError::Config("an ensemble needs at least two members".into()));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(&cfg.hidden);
        widths.push(task.outputs() * task.classes());
        let mut members = Vec::with_capacity(cfg.members);
        let mut seeds = Vec::with_capacity(cfg.members);
        for i in 0..cfg.members {
            let mut r = rng.split(i as u64);
            seeds.push(r.seed());
            members.push(Mlp::new(&widths, cfg.dropout, &mut r)?);
        }
        let opt = Adam::new(AdamConfig::downstream().with_lr(cfg.lr), &members[0].param_shapes());
        Ok(EnsembleModel {
            optimizers: vec![opt; cfg.members],
            members,
            task,
            seeds,
            trained: false,
        })
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    fn probabilities(&self, logits: &Tensor) -> Result<Tensor> {
        let rows = logits.rows() * self.task.outputs();
        logits.clone().reshape(vec![rows, self.task.classes()])?.softmax_rows()
    }

    /// Softmax output of every member in eval mode.
    pub fn predict_posterior(&self, x: &Tensor) -> Result<PosteriorSet> {
        if !self.trained {
            return Err(GaudaError::invalid("ensemble has not been trained"));
        }
        self.posterior_unchecked(x)
    }

    /// Like [`Self::predict_posterior`] but without the trained flag check.
    pub fn posterior_unchecked(&self, x: &Tensor) -> Result<PosteriorSet> {
        let predictions = self
            .members
            .par_iter()
            .map(|m| self.probabilities(&m.predict(x)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorSet { predictions })
    }

    /// One optimizer step of member `i` on its own batch. Returns the mean
    /// per-output cross-entropy.
    pub fn member_step(&mut self, i: usize, batch: &[&Example], rng: &mut RngStream) -> Result<f64> {
        let x = input_matrix(batch)?;
        let labels: Vec<usize> = batch.iter().flat_map(|e| e.labels.iter().copied()).collect();
        if labels.len() != batch.len() * self.task.outputs() {
            return Err(GaudaError::invalid("label count does not match the task"));
        }
        let target = one_hot(&labels, self.task.classes())?;
        let member = &self.members[i];
        let pass = member.forward(&x, Mode::Train(rng))?;
        let rows = labels.len();
        let logits = pass.output.clone().reshape(vec![rows, self.task.classes()])?;
        let (loss, g) = cross_entropy(&logits, &target)?;
        let g = g.reshape(pass.output.shape().to_vec())?;
        let (grads, _) = member.backward(&pass, &g)?;
        self.optimizers[i].step(&mut self.members[i].params_mut(), &grads)?;
        self.trained = true;
        Ok(loss)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, (m, opt)) in self.members.iter().zip(&self.optimizers).enumerate() {
            save_mlp(dir, &format!("member-{i}"), m, Some(opt.config))?;
            let moments: Vec<&Tensor> = opt.moments().collect();
            save_tensors(dir.join(format!("member-{i}.adam.gaud")), &moments)?;
        }
        let manifest = EnsembleManifest {
            k: self.k(),
            task: self.task,
            seeds: self.seeds.clone(),
            trained: self.trained,
            optimizer_steps: self.optimizers.iter().map(|o| o.steps()).collect(),
        };
        fs::write(dir.join("ensemble.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("ensemble.json");
        if !path.exists() {
            return Err(GaudaError::MissingArtifact(path));
        }
        let manifest: EnsembleManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        let mut members = Vec::with_capacity(manifest.k);
        let mut optimizers = Vec::with_capacity(manifest.k);
        for i in 0..manifest.k {
            let (m, mf) = load_mlp(dir, &format!("member-{i}"))?;
            let config = mf.optimizer.unwrap_or_else(AdamConfig::downstream);
            let mut opt = Adam::new(config, &m.param_shapes());
            opt.restore(manifest.optimizer_steps[i], load_tensors(dir.join(format!("member-{i}.adam.gaud")))?)?;
            members.push(m);
            optimizers.push(opt);
        }
        Ok(EnsembleModel {
            members,
            optimizers,
            task: manifest.task,
            seeds: manifest.seeds,
            trained: manifest.trained,
        })
    }
}

/// Elementwise mean of the posterior set.
pub fn mean_prediction(ps: &PosteriorSet) -> Result<Tensor> {
    let first = ps.predictions.first().ok_or_else(|| GaudaError::invalid("empty posterior set"))?;
    let mut acc = first.clone();
    for p in &ps.predictions[1..] {
        acc = acc.add(p)?;
    }
    acc.scale(1.0 / ps.predictions.len() as f64)
}

/// Row-wise argmax, lowest class on ties.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows()).map(|i| argmax_lowest(probs.row(i))).collect()
}

/// For every class, the mean over rows predicted as that class (argmax of
/// `mean`) of the population variance across members of that class's
/// probability. Classes never predicted map to [`Uncertainty::Absent`].
pub fn class_uncertainty(ps: &PosteriorSet, mean: &Tensor) -> Result<BTreeMap<usize, Uncertainty>> {
    let k = ps.predictions.len();
    if k < 2 {
        return Err(GaudaError::invalid("uncertainty needs at least two members"));
    }
    let classes = mean.cols();
    let mut sum = vec![0.0; classes];
    let mut count = vec![0usize; classes];
    for (j, c) in argmax_rows(mean).into_iter().enumerate() {
        let m = mean.row(j)[c];
        let var = ps
            .predictions
            .iter()
            .map(|p| (p.row(j)[c] - m).powi(2))
            .sum::<f64>()
            / k as f64;
        sum[c] += var;
        count[c] += 1;
    }
    Ok((0..classes)
        .map(|c| {
            let u = if count[c] == 0 {
                Uncertainty::Absent
            } else {
                Uncertainty::Value(sum[c] / count[c] as f64)
            };
            (c, u)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[&[&[f64]]]) -> PosteriorSet {
        PosteriorSet {
            predictions: rows
                .iter()
                .map(|m| Tensor::from_rows(&m.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap())
                .collect(),
        }
    }

    #[test]
    fn mean_of_two_one_hots() {
        let ps = set(&[&[&[1.0, 0.0]], &[&[0.0, 1.0]]]);
        assert_eq!(mean_prediction(&ps).unwrap().data(), &[0.5, 0.5]);
        let single = set(&[&[&[0.3, 0.7]]]);
        assert_eq!(mean_prediction(&single).unwrap(), single.predictions[0]);
    }

    #[test]
    fn two_member_variance_quarter() {
        let ps = set(&[&[&[1.0, 0.0]], &[&[0.0, 1.0]]]);
        let m = mean_prediction(&ps).unwrap();
        let ue = class_uncertainty(&ps, &m).unwrap();
        assert_eq!(ue[&0], Uncertainty::Value(0.25));
        assert_eq!(ue[&1], Uncertainty::Absent);
    }

    #[test]
    fn identical_members_have_zero_uncertainty() {
        let member: &[&[f64]] = &[&[0.2, 0.8], &[0.9, 0.1]];
        let ps = set(&[member, member, member]);
        let m = mean_prediction(&ps).unwrap();
        let ue = class_uncertainty(&ps, &m).unwrap();
        assert_eq!(ue[&0], Uncertainty::Value(0.0));
        assert_eq!(ue[&1], Uncertainty::Value(0.0));
    }

    #[test]
    fn rejects_single_member_ensembles() {
        let cfg = EnsembleConfig { members: 1, ..EnsembleConfig::default() };
        assert!(EnsembleModel::new(Task::Classification { classes: 2 }, 2, &cfg, &RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn untrained_ensemble_refuses_to_predict() {
        let e = EnsembleModel::new(
            Task::Classification { classes: 2 },
            2,
            &EnsembleConfig::default(),
            &RngStream::new(0, 0),
        )
        .unwrap();
        assert!(e.predict_posterior(&Tensor::zeros(vec![1, 2])).is_err());
        let ps = e.posterior_unchecked(&Tensor::full(vec![1, 2], 1.0)).unwrap();
        let first = &ps.predictions[0];
        assert!(ps.predictions[1..].iter().any(|p| p != first));
    }

    #[test]
    fn segmentation_rows_are_distributions() {
        let task = Task::Segmentation { classes: 3, pixels: 4 };
        let mut e = EnsembleModel::new(task, 4, &EnsembleConfig::default(), &RngStream::new(1, 0)).unwrap();
        let ex = Example { input: vec![0.1, 0.2, 0.3, 0.4], labels: vec![0, 1, 2, 0], presence: vec![0, 1, 2] };
        let mut rng = RngStream::new(2, 0);
        let l0 = e.member_step(0, &[&ex], &mut rng).unwrap();
        for _ in 0..50 {
            e.member_step(0, &[&ex], &mut rng).unwrap();
        }
        assert!(e.member_step(0, &[&ex], &mut rng).unwrap() < l0);
        let ps = e.predict_posterior(&input_matrix(&[&ex]).unwrap()).unwrap();
        for p in &ps.predictions {
            assert_eq!(p.shape(), &[4, 3]);
            for i in 0..4 {
                assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let task = Task::Classification { classes: 2 };
        let mut e = EnsembleModel::new(task, 2, &EnsembleConfig::default(), &RngStream::new(3, 0)).unwrap();
        let ex = Example::classification(vec![0.5, -0.5], 1);
        e.member_step(1, &[&ex], &mut RngStream::new(0, 0)).unwrap();
        e.save(dir.path()).unwrap();
        let back = EnsembleModel::load(dir.path()).unwrap();
        assert_eq!(back.members, e.members);
        assert_eq!(back.optimizers[1].steps(), 1);
        assert!(back.trained);
    }
}

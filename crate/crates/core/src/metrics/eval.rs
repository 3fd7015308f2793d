use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::seg::{ap_per_label, dice_per_label, iou_per_label};
use super::stats::{AggregateMode, ScoreTable};
use crate::data::Example;
use crate::ensemble::{argmax_rows, class_uncertainty, input_matrix, mean_prediction, EnsembleModel, Task, Uncertainty};
use crate::error::Result;
use crate::generative::PairGenerator;
use crate::numeric::RngStream;

/// Scores of an ensemble's mean prediction on a set of examples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub iou: ScoreTable,
    pub dice: ScoreTable,
    pub ap: ScoreTable,
    /// Fraction of correctly labelled outputs (pixels or points).
    pub accuracy: f64,
    /// Per-class validation score driving score-based sampling: mean IoU
    /// for segmentation, recall for classification.
    pub class_scores: BTreeMap<usize, f64>,
    pub uncertainty: BTreeMap<usize, Uncertainty>,
}

pub fn evaluate(model: &EnsembleModel, examples: &[&Example]) -> Result<Evaluation> {
    let x = input_matrix(examples)?;
    let ps = model.posterior_unchecked(&x)?;
    let mean = mean_prediction(&ps)?;
    let uncertainty = class_uncertainty(&ps, &mean)?;
    let pred = argmax_rows(&mean);
    let k = model.task.classes();
    let per = model.task.outputs();
    let mut out = Evaluation { uncertainty, ..Evaluation::default() };
    let mut correct = 0;
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (i, e) in examples.iter().enumerate() {
        let p = &pred[i * per..(i + 1) * per];
        for (&a, &b) in p.iter().zip(&e.labels) {
            correct += (a == b) as usize;
            totals[b] += 1;
            hits[b] += (a == b) as usize;
        }
        if let Task::Segmentation { .. } = model.task {
            let rows: Vec<usize> = (i * per..(i + 1) * per).collect();
            out.iou.rows.push(iou_per_label(p, &e.labels, k)?);
            out.dice.rows.push(dice_per_label(p, &e.labels, k)?);
            out.ap.rows.push(ap_per_label(&mean.select_rows(&rows)?, &e.labels)?);
        }
    }
    out.accuracy = correct as f64 / pred.len() as f64;
    out.class_scores = match model.task {
        Task::Segmentation { .. } => out
            .iou
            .per_label()
            .into_iter()
            .enumerate()
            .filter_map(|(c, v)| v.map(|v| (c, v)))
            .collect(),
        Task::Classification { .. } => (0..k)
            .filter(|&c| totals[c] > 0)
            .map(|c| (c, hits[c] as f64 / totals[c] as f64))
            .collect(),
    };
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoSo {
    /// Trained on real pairs, scored on synthetic pairs.
    pub real_only: f64,
    /// Trained on synthetic pairs, scored on the real test split.
    pub synthetic_only: f64,
}

/// Real-only / synthetic-only cross evaluation, both as label-mean IoU.
pub fn ro_so_protocol<F>(
    generator: &dyn PairGenerator,
    real_train: &[Example],
    real_test: &[Example],
    n_synth: usize,
    rng: &mut RngStream,
    mut train: F,
) -> Result<RoSo>
where
    F: FnMut(&[Example], &mut RngStream) -> Result<EnsembleModel>,
{
    let synth: Vec<Example> = generator
        .generate(None, 0.0, n_synth, &mut rng.derive("synth"))?
        .iter()
        .map(Example::from)
        .collect();
    let real_model = train(real_train, &mut rng.derive("real"))?;
    let ro = evaluate(&real_model, &synth.iter().collect::<Vec<_>>())?;
    let synth_model = train(&synth, &mut rng.derive("synthetic"))?;
    let so = evaluate(&synth_model, &real_test.iter().collect::<Vec<_>>())?;
    Ok(RoSo {
        real_only: ro.iou.aggregate(AggregateMode::LabelMean)?,
        synthetic_only: so.iou.aggregate(AggregateMode::LabelMean)?,
    })
}

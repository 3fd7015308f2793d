use crate::error::{GaudaError, Result};
use crate::numeric::Tensor;

fn confusion(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<(usize, usize, usize)>> {
    if pred.len() != truth.len() {
        return Err(GaudaError::ShapeMismatch {
            op: "segmentation metric",
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    // (intersection, predicted, true) per label
    let mut out = vec![(0, 0, 0); classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(GaudaError::invalid(format!("label outside 0..{classes}")));
        }
        out[p].1 += 1;
        out[t].2 += 1;
        if p == t {
            out[p].0 += 1;
        }
    }
    Ok(out)
}

/// Per-label IoU of label maps; `None` where the label is in neither.
pub fn iou_per_label(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Option<f64>>> {
    Ok(confusion(pred, truth, classes)?
        .into_iter()
        .map(|(i, p, t)| {
            let union = p + t - i;
            (union > 0).then(|| i as f64 / union as f64)
        })
        .collect())
}

/// Per-label Dice of label maps; `None` where the label is in neither.
pub fn dice_per_label(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Option<f64>>> {
    Ok(confusion(pred, truth, classes)?
        .into_iter()
        .map(|(i, p, t)| (p + t > 0).then(|| 2.0 * i as f64 / (p + t) as f64))
        .collect())
}

/// Area under the precision-recall curve of `scores` against binary
/// `truth`, trapezoidal over the unique score thresholds starting from
/// (recall 0, precision 1). `None` when there are no positives.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 || scores.len() != truth.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_r, mut prev_p) = (0.0, 1.0);
    let mut area = 0.0;
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if truth[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let r = tp as f64 / positives as f64;
        let p = tp as f64 / (tp + fp) as f64;
        area += (r - prev_r) * (p + prev_p) / 2.0;
        prev_r = r;
        prev_p = p;
    }
    Some(area)
}

/// Per-label AP of a `P × K` probability map against per-pixel labels.
pub fn ap_per_label(probs: &Tensor, truth: &[usize]) -> Result<Vec<Option<f64>>> {
    if probs.shape().len() != 2 || probs.rows() != truth.len() {
        return Err(GaudaError::ShapeMismatch {
            op: "ap_per_label",
            lhs: probs.shape().to_vec(),
            rhs: vec![truth.len()],
        });
    }
    Ok((0..probs.cols())
        .map(|c| {
            let scores: Vec<f64> = (0..probs.rows()).map(|i| probs.row(i)[c]).collect();
            let hits: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            average_precision(&scores, &hits)
        })
        .collect())
}

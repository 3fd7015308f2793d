//! Class sampling weights (static frequency, score-driven and
//! uncertainty-driven) and weighted batch drawing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ensemble::Uncertainty;
use crate::error::{GaudaError, Result};
use crate::numeric::RngStream;

/// Floor added to every adaptive weight so no class starves.
pub const WEIGHT_FLOOR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Uniform,
    Frequency,
    Score,
    Uncertainty,
}

/// How a multi-class sample's weight is lifted from its class weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleWeighting {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: BTreeMap<usize, f64>,
    pub provenance: Provenance,
    pub step: usize,
}

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        ClassWeights {
            weights: (0..classes).map(|c| (c, 1.0)).collect(),
            provenance: Provenance::Uniform,
            step: 0,
        }
    }

    fn checked(weights: BTreeMap<usize, f64>, provenance: Provenance, step: usize) -> Result<Self> {
        if weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) || !weights.values().any(|&w| w > 0.0) {
            return Err(GaudaError::invalid("class weights need a positive entry and no negatives"));
        }
        Ok(ClassWeights { weights, provenance, step })
    }

    /// Weights scaled to sum to one.
    pub fn normalized(&self) -> BTreeMap<usize, f64> {
        let total: f64 = self.weights.values().sum();
        self.weights.iter().map(|(&c, &w)| (c, w / total)).collect()
    }
}

/// `w_c = 1/√f(c)` from a per-class count; zero-count classes are dropped.
pub fn freq_weights(histogram: &[usize]) -> Result<ClassWeights> {
    let mut weights = BTreeMap::new();
    for (c, &n) in histogram.iter().enumerate() {
        if n == 0 {
            log::warn!("class {c} never occurs in the training set; excluded from frequency weights");
            continue;
        }
        weights.insert(c, 1.0 / (n as f64).sqrt());
    }
    ClassWeights::checked(weights, Provenance::Frequency, 0)
}

/// `w_c ∝ (1 − score_c) + η`.
pub fn score_adaptive_update(prev: &ClassWeights, scores: &BTreeMap<usize, f64>, step: usize) -> Result<ClassWeights> {
    let mut weights = prev.weights.clone();
    for (&c, &s) in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(GaudaError::invalid(format!("score {s} for class {c} outside [0, 1]")));
        }
        weights.insert(c, 1.0 - s + WEIGHT_FLOOR);
    }
    ClassWeights::checked(weights, Provenance::Score, step)
}

/// `w_c ∝ UE_c + η`; absent classes take the largest observed UE.
pub fn uncertainty_adaptive_update(
    prev: &ClassWeights,
    ue: &BTreeMap<usize, Uncertainty>,
    step: usize,
) -> Result<ClassWeights> {
    let max = ue.values().filter_map(|u| u.value()).fold(0.0, f64::max);
    let mut weights = prev.weights.clone();
    for (&c, u) in ue {
        let v = u.value().unwrap_or(max);
        if !(v >= 0.0) {
            return Err(GaudaError::invalid(format!("negative uncertainty for class {c}")));
        }
        weights.insert(c, v + WEIGHT_FLOOR);
    }
    ClassWeights::checked(weights, Provenance::Uncertainty, step)
}

/// Per-sample weights from each sample's class-presence set.
pub fn sample_weights(presence: &[&[usize]], cw: &ClassWeights, mode: SampleWeighting) -> Vec<f64> {
    let norm = cw.normalized();
    presence
        .iter()
        .map(|p| {
            let ws = p.iter().map(|c| norm.get(c).copied().unwrap_or(0.0));
            match mode {
                SampleWeighting::Mean if !p.is_empty() => ws.sum::<f64>() / p.len() as f64,
                SampleWeighting::Max => ws.fold(0.0, f64::max),
                _ => 0.0,
            }
        })
        .collect()
}

/// Cumulative distribution for repeated weighted draws.
#[derive(Clone, Debug)]
pub struct WeightedIndex {
    cumulative: Vec<f64>,
}

impl WeightedIndex {
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(GaudaError::invalid("cannot draw from an empty dataset"));
        }
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(weights.len());
        for &w in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(GaudaError::invalid("sample weights must be finite and nonnegative"));
            }
            acc += w;
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(GaudaError::invalid("all sample weights are zero"));
        }
        Ok(WeightedIndex { cumulative })
    }

    pub fn draw(&self, rng: &mut RngStream) -> usize {
        let total = *self.cumulative.last().expect("nonempty");
        let u = rng.uniform() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        // a zero-weight tail cannot be hit; clamp guards the u == total edge
        i.min(self.cumulative.len() - 1)
    }
}

/// `b` sample positions drawn with replacement proportional to the lifted
/// class weights.
pub fn draw_batch(
    presence: &[&[usize]],
    cw: &ClassWeights,
    mode: SampleWeighting,
    b: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    if b == 0 {
        return Err(GaudaError::invalid("batch size must be positive"));
    }
    let index = WeightedIndex::new(&sample_weights(presence, cw, mode))?;
    Ok((0..b).map(|_| index.draw(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn frequency_formula() {
        let w = freq_weights(&[1, 4]).unwrap();
        assert_eq!(w.weights[&0], 1.0);
        assert_eq!(w.weights[&1], 0.5);
        let scaled = freq_weights(&[4, 16]).unwrap();
        assert_eq!(scaled.weights[&0], 0.5);
        for (a, b) in w.normalized().values().zip(scaled.normalized().values()) {
            assert!(close(*a, *b, 1e-15));
        }
        let skip = freq_weights(&[0, 9]).unwrap();
        assert!(!skip.weights.contains_key(&0));
    }

    #[test]
    fn score_update_examples() {
        let prev = ClassWeights::uniform(2);
        let s: BTreeMap<usize, f64> = [(0, 1.0), (1, 0.0)].into();
        let n = score_adaptive_update(&prev, &s, 1).unwrap().normalized();
        assert!(close(n[&0], 0.05 / 1.1, 1e-12) && close(n[&1], 1.05 / 1.1, 1e-12));
        let eq: BTreeMap<usize, f64> = [(0, 0.7), (1, 0.7)].into();
        let n = score_adaptive_update(&prev, &eq, 1).unwrap().normalized();
        assert!(close(n[&0], 0.5, 1e-15));
    }

    #[test]
    fn uncertainty_update_examples() {
        let prev = ClassWeights::uniform(3);
        let ue: BTreeMap<usize, Uncertainty> =
            [(0, Uncertainty::Value(0.2)), (1, Uncertainty::Value(0.0)), (2, Uncertainty::Absent)].into();
        let w = uncertainty_adaptive_update(&prev, &ue, 2).unwrap();
        assert!(close(w.weights[&2], 0.25, 1e-15));
        let two: BTreeMap<usize, Uncertainty> = [(0, Uncertainty::Value(0.2)), (1, Uncertainty::Value(0.0))].into();
        let n = uncertainty_adaptive_update(&ClassWeights::uniform(2), &two, 2).unwrap().normalized();
        assert!(close(n[&0], 0.25 / 0.3, 1e-12) && close(n[&1], 0.05 / 0.3, 1e-12));
    }

    #[test]
    fn single_weighted_sample_fills_batch() {
        let p: Vec<&[usize]> = vec![&[0], &[1], &[0]];
        let mut cw = ClassWeights::uniform(2);
        cw.weights.insert(0, 0.0);
        let ids = draw_batch(&p, &cw, SampleWeighting::Mean, 16, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(ids, vec![1; 16]);
        assert!(draw_batch(&[], &cw, SampleWeighting::Mean, 4, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn mean_and_max_lift() {
        let p: Vec<&[usize]> = vec![&[0, 1]];
        let mut cw = ClassWeights::uniform(2);
        cw.weights.insert(1, 3.0);
        assert!(close(sample_weights(&p, &cw, SampleWeighting::Mean)[0], 0.5, 1e-15));
        assert!(close(sample_weights(&p, &cw, SampleWeighting::Max)[0], 0.75, 1e-15));
    }
}

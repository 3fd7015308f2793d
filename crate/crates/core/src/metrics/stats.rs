use serde::{Deserialize, Serialize};

use crate::error::{GaudaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    LabelMean,
    SampleMean,
    SampleMedian,
}

impl AggregateMode {
    pub const ALL: [AggregateMode; 3] = [AggregateMode::LabelMean, AggregateMode::SampleMean, AggregateMode::SampleMedian];

    /// Short identifier used in metric names.
    pub fn key(&self) -> &'static str {
        match self {
            AggregateMode::LabelMean => "label_mean",
            AggregateMode::SampleMean => "sample_mean",
            AggregateMode::SampleMedian => "sample_median",
        }
    }

    pub fn title(&self) -> &'static str {
        match self {
            AggregateMode::LabelMean => "Label Mean",
            AggregateMode::SampleMean => "Sample Mean",
            AggregateMode::SampleMedian => "Sample Median",
        }
    }
}

/// Per-sample, per-label scores; `None` marks an undefined label.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<Vec<Option<f64>>>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 })
}

impl ScoreTable {
    pub fn labels(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Mean over samples of each label's defined scores.
    pub fn per_label(&self) -> Vec<Option<f64>> {
        (0..self.labels())
            .map(|c| {
                let v: Vec<f64> = self.rows.iter().filter_map(|r| r.get(c).copied().flatten()).collect();
                mean(&v)
            })
            .collect()
    }

    /// Mean of each sample's defined label scores.
    pub fn per_sample(&self) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| mean(&r.iter().flatten().copied().collect::<Vec<_>>()))
            .collect()
    }

    pub fn aggregate(&self, mode: AggregateMode) -> Result<f64> {
        let values: Vec<f64> = match mode {
            AggregateMode::LabelMean => self.per_label().into_iter().flatten().collect(),
            _ => self.per_sample().into_iter().flatten().collect(),
        };
        let out = match mode {
            AggregateMode::SampleMedian => median(&values),
            _ => mean(&values),
        };
        out.ok_or_else(|| GaudaError::invalid("every score is undefined"))
    }
}

/// `(mean_a − mean_b) / s_pooled` with the `n_a + n_b − 2` pooled variance.
/// `Ok(None)` when the pooled variance is zero.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() < 2 || b.len() < 2 {
        return Err(GaudaError::invalid("Cohen's d needs at least two values per group"));
    }
    let (ma, mb) = (mean(a).unwrap(), mean(b).unwrap());
    let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    let pooled = (ss(a, ma) + ss(b, mb)) / (a.len() + b.len() - 2) as f64;
    if pooled <= 0.0 {
        return Ok(None);
    }
    Ok(Some((ma - mb) / pooled.sqrt()))
}

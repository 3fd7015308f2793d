use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GaudaError, Result};

/// Label value used for aggregate rows.
pub const ALL_LABELS: &str = "ALL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub split: String,
    pub policy: String,
    pub metric: String,
    pub label: String,
    pub value: f64,
}

/// Append-only metric log, persisted as `metrics.csv`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    rows: Vec<MetricRow>,
}

impl RunMetrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: usize, split: &str, policy: &str, metric: &str, label: impl ToString, value: f64) {
        self.rows.push(MetricRow {
            step,
            split: split.to_string(),
            policy: policy.to_string(),
            metric: metric.to_string(),
            label: label.to_string(),
            value,
        });
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn find(&self, split: &str, metric: &str, label: &str) -> impl Iterator<Item = &MetricRow> {
        let (split, metric, label) = (split.to_string(), metric.to_string(), label.to_string());
        self.rows
            .iter()
            .filter(move |r| r.split == split && r.metric == metric && r.label == label)
    }

    /// Last logged value of a metric.
    pub fn last(&self, split: &str, metric: &str, label: &str) -> Option<f64> {
        self.find(split, metric, label).last().map(|r| r.value)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| GaudaError::Format(e.to_string()))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| GaudaError::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(GaudaError::MissingArtifact(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path).map_err(|e| GaudaError::Format(e.to_string()))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<MetricRow>, _>>()
            .map_err(|e| GaudaError::Format(e.to_string()))?;
        Ok(RunMetrics { rows })
    }
}

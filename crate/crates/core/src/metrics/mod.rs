//! Segmentation scores, table aggregates, effect sizes, kernel MMD and the
//! real-only / synthetic-only cross evaluation.

mod eval;
mod log;
mod mmd;
mod seg;
mod stats;

pub use eval::{evaluate, ro_so_protocol, Evaluation, RoSo};
pub use log::{MetricRow, RunMetrics, ALL_LABELS};
pub use mmd::{kernel_mmd, mmd2_unbiased, poly_kernel, MmdEstimate, MIN_SUBSETS};
pub use seg::{ap_per_label, average_precision, dice_per_label, iou_per_label};
pub use stats::{cohens_d, median, AggregateMode, ScoreTable};

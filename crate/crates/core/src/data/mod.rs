//! Procedural datasets: a two-class radial point cloud and a miniature
//! imbalanced shapes segmentation task.

mod shapes;
mod split;
mod toy2d;

use serde::{Deserialize, Serialize};

use crate::autoencoder::PairedSample;

pub use shapes::{gen_shapes_seg, ClassAppearance, ShapeKind, ShapesData, ShapesSegSpec};
pub use split::{stratified_split, Split};
pub use toy2d::{gen_toy2d, Toy2dData, Toy2dSpec};

/// A training item as seen by the downstream model: flat input features,
/// per-output labels (one per pixel, or a single class) and the sorted set
/// of classes it contains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<f64>,
    pub labels: Vec<usize>,
    pub presence: Vec<usize>,
}

impl Example {
    pub fn classification(input: Vec<f64>, label: usize) -> Self {
        Example {
            input,
            labels: vec![label],
            presence: vec![label],
        }
    }

    pub fn contains(&self, class: usize) -> bool {
        self.presence.binary_search(&class).is_ok()
    }
}

impl From<&PairedSample> for Example {
    fn from(s: &PairedSample) -> Self {
        Example {
            input: s.image().data().to_vec(),
            labels: s.labels(),
            presence: s.presence().to_vec(),
        }
    }
}

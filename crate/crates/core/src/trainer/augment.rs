use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::numeric::RngStream;

/// Layout of an example's input, needed to transform it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// `C × H × W` image with one label per pixel.
    Image { channels: usize, height: usize, width: usize },
    /// A single point in the plane with one label.
    Point,
}

fn remap<T: Copy>(src: &[T], h: usize, w: usize, at: impl Fn(usize, usize) -> (usize, usize)) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = at(y, x);
            out.push(src[sy * w + sx]);
        }
    }
    out
}

/// Mirror left-right.
pub fn hflip(e: &Example, g: Geometry) -> Example {
    match g {
        Geometry::Image { channels, height, width } => {
            let at = |y, x| (y, width - 1 - x);
            let plane = height * width;
            let input = (0..channels)
                .flat_map(|c| remap(&e.input[c * plane..(c + 1) * plane], height, width, at))
                .collect();
            Example {
                input,
                labels: remap(&e.labels, height, width, at),
                presence: e.presence.clone(),
            }
        }
        Geometry::Point => Example {
            input: vec![-e.input[0], e.input[1]],
            ..e.clone()
        },
    }
}

/// Rotate a quarter turn clockwise; images must be square.
pub fn rot90(e: &Example, g: Geometry) -> Example {
    match g {
        Geometry::Image { channels, height, width } => {
            debug_assert_eq!(height, width);
            let n = height;
            let at = |y, x| (n - 1 - x, y);
            let plane = n * n;
            let input = (0..channels)
                .flat_map(|c| remap(&e.input[c * plane..(c + 1) * plane], n, n, at))
                .collect();
            Example {
                input,
                labels: remap(&e.labels, n, n, at),
                presence: e.presence.clone(),
            }
        }
        Geometry::Point => Example {
            input: vec![e.input[1], -e.input[0]],
            ..e.clone()
        },
    }
}

/// Classic augmentation: a horizontal flip and a random multiple of a
/// quarter turn, each applied with probability `p`. Two draws are always
/// consumed so the stream stays aligned across outcomes.
pub fn classic_augment(e: &Example, g: Geometry, p: f64, rng: &mut RngStream) -> Example {
    let flip = rng.bernoulli(p);
    let turns = if rng.bernoulli(p) { 1 + rng.below(3) } else { 0 };
    let square = match g {
        Geometry::Image { height, width, .. } => height == width,
        Geometry::Point => true,
    };
    let mut out = if flip { hflip(e, g) } else { e.clone() };
    if square {
        for _ in 0..turns {
            out = rot90(&out, g);
        }
    }
    out
}

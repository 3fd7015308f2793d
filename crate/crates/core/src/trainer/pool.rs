use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Example, Toy2dSpec};
use crate::ensemble::Uncertainty;
use crate::error::Result;
use crate::generative::PairGenerator;
use crate::numeric::RngStream;

/// Source of class-conditional training examples.
pub trait Synthesizer: Sync {
    fn synthesize(&self, class: Option<usize>, omega: f64, count: usize, rng: &mut RngStream) -> Result<Vec<Example>>;

    fn name(&self) -> &str;
}

/// Adapts a paired (image, mask) generator to training examples.
pub struct PairSynthesizer<'a>(pub &'a dyn PairGenerator);

impl Synthesizer for PairSynthesizer<'_> {
    fn synthesize(&self, class: Option<usize>, omega: f64, count: usize, rng: &mut RngStream) -> Result<Vec<Example>> {
        Ok(self.0.generate(class, omega, count, rng)?.iter().map(Example::from).collect())
    }

    fn name(&self) -> &str {
        self.0.name()
    }
}

/// Exact simulator of the radial point task. Unconditional draws pick the
/// class with the dataset's own proportions.
pub struct Toy2dSimulator(pub Toy2dSpec);

impl Synthesizer for Toy2dSimulator {
    fn synthesize(&self, class: Option<usize>, _omega: f64, count: usize, rng: &mut RngStream) -> Result<Vec<Example>> {
        let spec = &self.0;
        let p1 = spec.count(1) as f64 / (spec.count(0) + spec.count(1)) as f64;
        Ok((0..count)
            .map(|_| {
                let c = class.unwrap_or_else(|| rng.bernoulli(p1) as usize);
                Example::classification(spec.sample_class(c, rng).to_vec(), c)
            })
            .collect())
    }

    fn name(&self) -> &str {
        "simulator"
    }
}

/// Top-`n_c` classes by uncertainty, descending; absent classes first, ties
/// by ascending class index.
pub fn select_uncertain_classes(ue: &BTreeMap<usize, Uncertainty>, n_c: usize) -> Vec<usize> {
    let mut ranked: Vec<(usize, Uncertainty)> = ue.iter().map(|(&c, &u)| (c, u)).collect();
    ranked.sort_by(|a, b| {
        let key = |u: &Uncertainty| match u {
            Uncertainty::Absent => f64::INFINITY,
            Uncertainty::Value(v) => *v,
        };
        key(&b.1).total_cmp(&key(&a.1)).then(a.0.cmp(&b.0))
    });
    ranked.into_iter().take(n_c).map(|(c, _)| c).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub example: Example,
    pub round: usize,
    pub class: usize,
    pub seed: u64,
    pub stream_id: u64,
}

/// FIFO store of synthetic examples shared across validation rounds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthPool {
    pub capacity: usize,
    pub entries: VecDeque<PoolEntry>,
    pub added: usize,
    pub dropped_off_target: usize,
    pub evicted: usize,
    /// Classes of every example ever added.
    pub added_by_class: BTreeMap<usize, usize>,
}

impl SynthPool {
    pub fn new(capacity: usize) -> Self {
        SynthPool {
            capacity,
            ..SynthPool::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: PoolEntry) {
        for &c in &entry.example.presence {
            *self.added_by_class.entry(c).or_default() += 1;
        }
        self.added += 1;
        self.entries.push_back(entry);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
            self.evicted += 1;
        }
    }
}

/// Outcome of one synthesis round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthRound {
    pub entries: Vec<PoolEntry>,
    pub dropped_off_target: usize,
}

/// Splits `total` requests over `classes` as evenly as possible, earlier
/// classes taking the remainder.
pub fn spread_requests(classes: &[usize], total: usize) -> Vec<(usize, usize)> {
    let n = classes.len().max(1);
    classes
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, total / n + usize::from(i < total % n)))
        .collect()
}

/// Synthesises the requested `(class, count)` pairs, each class from its own
/// split stream so the result does not depend on scheduling.
pub fn synthesize_for_classes(
    synth: &dyn Synthesizer,
    requests: &[(usize, usize)],
    omega: f64,
    round: usize,
    keep_off_target: bool,
    rng: &RngStream,
) -> Result<SynthRound> {
    let results = requests
        .par_iter()
        .filter(|&&(_, n)| n > 0)
        .map(|&(c, n)| {
            let mut r = rng.split(c as u64);
            let (seed, stream_id) = (r.seed(), r.stream_id());
            let out = synth.synthesize(Some(c), omega, n, &mut r)?;
            Ok((c, seed, stream_id, out))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut round_out = SynthRound::default();
    for (c, seed, stream_id, examples) in results {
        for example in examples {
            if !keep_off_target && !example.contains(c) {
                round_out.dropped_off_target += 1;
                continue;
            }
            round_out.entries.push(PoolEntry {
                example,
                round,
                class: c,
                seed,
                stream_id,
            });
        }
    }
    Ok(round_out)
}

/// Replaces each slot with a uniform pool draw with probability `r`.
///
/// One Bernoulli draw per slot is always taken, so the stream position does
/// not depend on the pool contents.
pub fn mix_batch<'a>(batch: Vec<&'a Example>, pool: &'a SynthPool, r: f64, rng: &mut RngStream) -> Vec<&'a Example> {
    batch
        .into_iter()
        .map(|e| {
            if rng.bernoulli(r) && !pool.is_empty() {
                &pool.entries[rng.below(pool.len())].example
            } else {
                e
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ue(pairs: &[(usize, f64)]) -> BTreeMap<usize, Uncertainty> {
        pairs.iter().map(|&(c, v)| (c, Uncertainty::Value(v))).collect()
    }

    #[test]
    fn selection_order_and_ties() {
        assert_eq!(select_uncertain_classes(&ue(&[(0, 0.1), (1, 0.3), (2, 0.2)]), 2), vec![1, 2]);
        assert_eq!(select_uncertain_classes(&ue(&[(0, 0.2), (1, 0.2)]), 1), vec![0]);
        let mut m = ue(&[(0, 0.1), (1, 0.3)]);
        m.insert(2, Uncertainty::Absent);
        assert_eq!(select_uncertain_classes(&m, 3), vec![2, 1, 0]);
    }

    #[test]
    fn pool_is_fifo() {
        let mut p = SynthPool::new(2);
        for i in 0..3 {
            p.push(PoolEntry {
                example: Example::classification(vec![i as f64], 0),
                round: i,
                class: 0,
                seed: 0,
                stream_id: 0,
            });
        }
        assert_eq!(p.len(), 2);
        assert_eq!(p.entries[0].round, 1);
        assert_eq!((p.added, p.evicted), (3, 1));
    }

    #[test]
    fn mix_extremes() {
        let a = Example::classification(vec![0.0], 0);
        let mut pool = SynthPool::new(4);
        pool.push(PoolEntry {
            example: Example::classification(vec![1.0], 1),
            round: 0,
            class: 1,
            seed: 0,
            stream_id: 0,
        });
        let mut rng = RngStream::new(0, 0);
        let kept = mix_batch(vec![&a; 8], &pool, 0.0, &mut rng);
        assert!(kept.iter().all(|e| e.labels == [0]));
        let all = mix_batch(vec![&a; 8], &pool, 1.0, &mut rng);
        assert!(all.iter().all(|e| e.labels == [1]));
        let empty = SynthPool::new(4);
        let same = mix_batch(vec![&a; 8], &empty, 1.0, &mut rng);
        assert!(same.iter().all(|e| e.labels == [0]));
    }

    #[test]
    fn zero_count_adds_nothing() {
        let sim = Toy2dSimulator(Toy2dSpec::default());
        let out = synthesize_for_classes(&sim, &[(0, 0), (1, 0)], 3.0, 0, false, &RngStream::new(0, 0)).unwrap();
        assert!(out.entries.is_empty());
        let some = synthesize_for_classes(&sim, &[(1, 5)], 3.0, 0, false, &RngStream::new(0, 0)).unwrap();
        assert_eq!(some.entries.len(), 5);
        assert!(some.entries.iter().all(|e| e.class == 1 && e.example.labels == [1]));
    }

    #[test]
    fn requests_spread_evenly() {
        assert_eq!(spread_requests(&[3, 1], 5), vec![(3, 3), (1, 2)]);
        assert_eq!(spread_requests(&[2], 4), vec![(2, 4)]);
    }
}

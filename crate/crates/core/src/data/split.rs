use serde::{Deserialize, Serialize};

use crate::error::{GaudaError, Result};
use crate::numeric::RngStream;

/// Train/validation/test index lists.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// 90/5/5 split that keeps every stratum's share roughly equal in each part.
///
/// The validation and test sizes `⌊0.05N⌋` and `N − ⌊0.9N⌋ − ⌊0.05N⌋` are
/// shared out over the strata in proportion to their sizes, by largest
/// remainder; each stratum's shuffled items then fill its validation quota,
/// its test quota and the training set in that order.
pub fn stratified_split(strata: &[usize], rng: &mut RngStream) -> Result<Split> {
    let n = strata.len();
    if n == 0 {
        return Err(GaudaError::invalid("cannot split an empty dataset"));
    }
    let groups = strata.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for (i, &s) in strata.iter().enumerate() {
        members[s].push(i);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let n_val = n / 20;
    let n_test = n - n * 9 / 10 - n_val;
    let val_quota = apportion(&sizes, n_val);
    let rest: Vec<usize> = sizes.iter().zip(&val_quota).map(|(s, v)| s - v).collect();
    let test_quota = apportion_within(&sizes, &rest, n_test);

    let mut split = Split::default();
    for (s, ids) in members.iter_mut().enumerate() {
        rng.shuffle(ids);
        let (v, t) = (val_quota[s], test_quota[s]);
        split.val.extend_from_slice(&ids[..v]);
        split.test.extend_from_slice(&ids[v..v + t]);
        split.train.extend_from_slice(&ids[v + t..]);
    }
    for part in [&mut split.train, &mut split.val, &mut split.test] {
        part.sort_unstable();
    }
    Ok(split)
}

/// Shares `total` over groups in proportion to `sizes`; largest remainders
/// get the leftover units, ties to the lower index.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    apportion_within(sizes, sizes, total)
}

/// As [`apportion`], but group `g` takes at most `caps[g]`.
fn apportion_within(sizes: &[usize], caps: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes.iter().map(|&s| (total * s) as f64 / n as f64).collect();
    let mut quota: Vec<usize> = exact.iter().zip(caps).map(|(e, &c)| (e.floor() as usize).min(c)).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = total - quota.iter().sum::<usize>();
    while left > 0 {
        let before = left;
        for &g in &order {
            if left > 0 && quota[g] < caps[g] {
                quota[g] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    quota
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_items_split_90_5_5() {
        let strata = vec![0; 100];
        let s = stratified_split(&strata, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (90, 5, 5));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn strata_spread_into_every_part() {
        let strata: Vec<usize> = (0..1100).map(|i| (i < 100) as usize).collect();
        let s = stratified_split(&strata, &mut RngStream::new(1, 0)).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            let minor = part.iter().filter(|&&i| strata[i] == 1).count() as f64;
            let frac = minor / part.len() as f64;
            let se = (frac.max(1.0 / 11.0) * (1.0 - 1.0 / 11.0) / part.len() as f64).sqrt();
            assert!((frac - 1.0 / 11.0).abs() <= 3.0 * se, "{frac}");
        }
    }

    #[test]
    fn equal_strata_split_evenly() {
        let strata: Vec<usize> = (0..4000).map(|i| i % 2).collect();
        let s = stratified_split(&strata, &mut RngStream::new(2, 0)).unwrap();
        for part in [&s.val, &s.test] {
            let ones = part.iter().filter(|&&i| strata[i] == 1).count();
            assert_eq!(2 * ones, part.len());
        }
    }

    #[test]
    fn quotas_sum_to_total() {
        assert_eq!(apportion(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(apportion(&[90, 10], 5), vec![5, 0]);
        assert_eq!(apportion_within(&[3, 1], &[3, 0], 2), vec![2, 0]);
    }
}

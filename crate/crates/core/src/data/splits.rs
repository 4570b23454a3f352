use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Disjoint train / validation / test id lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub repeat_index: usize,
}

/// Sizes of the held-out parts; the remainder goes to training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSizes {
    Fractions { val: f64, test: f64 },
    Counts { val: usize, test: usize },
}

impl SplitSizes {
    fn resolve(&self, n: usize) -> Result<(usize, usize)> {
        match *self {
            SplitSizes::Fractions { val, test } => {
                if !(val >= 0.0 && test >= 0.0 && val + test <= 1.0) {
                    return Err(Error::Config(format!(
                        "split fractions must be >= 0 and sum to <= 1, got val={val} test={test}"
                    )));
                }
                let v = (val * n as f64).round() as usize;
                let t = ((test * n as f64).round() as usize).min(n - v.min(n));
                Ok((v.min(n), t))
            }
            SplitSizes::Counts { val, test } => {
                if val + test > n {
                    return Err(Error::Invalid(format!("cannot hold out {val} + {test} of {n} ids")));
                }
                Ok((val, test))
            }
        }
    }
}

/// Seeded random partitions; repeat `i` shuffles with its own stream so
/// repeated partitions differ.
pub fn make_splits(ids: &[String], sizes: SplitSizes, seed: u64, repeats: usize) -> Result<Vec<SplitSpec>> {
    let (n_val, n_test) = sizes.resolve(ids.len())?;
    (0..repeats.max(1))
        .map(|rep| {
            let mut order: Vec<String> = ids.to_vec();
            order.shuffle(&mut rng::indexed_stream(seed, "split", rep as u64));
            let test = order.split_off(order.len() - n_test);
            let val = order.split_off(order.len() - n_val);
            Ok(SplitSpec {
                train: order,
                val,
                test,
                seed,
                repeat_index: rep,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i}")).collect()
    }

    #[test]
    fn ninety_five_five() {
        let s = &make_splits(&ids(100), SplitSizes::Fractions { val: 0.05, test: 0.0 }, 1, 1).unwrap()[0];
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (95, 5, 0));
    }

    #[test]
    fn disjoint_and_complete() {
        let all = ids(37);
        let s = &make_splits(&all, SplitSizes::Counts { val: 5, test: 7 }, 3, 1).unwrap()[0];
        let mut seen = HashSet::new();
        for id in s.train.iter().chain(&s.val).chain(&s.test) {
            assert!(seen.insert(id.clone()));
        }
        assert_eq!(seen.len(), 37);
    }

    #[test]
    fn repeats_differ_and_seed_reproduces() {
        let all = ids(200);
        let sizes = SplitSizes::Counts { val: 20, test: 20 };
        let a = make_splits(&all, sizes, 9, 10).unwrap();
        let distinct: HashSet<Vec<String>> = a
            .iter()
            .map(|s| {
                let mut t = s.test.clone();
                t.sort();
                t
            })
            .collect();
        assert!(distinct.len() >= 9);
        assert_eq!(a, make_splits(&all, sizes, 9, 10).unwrap());
    }

    #[test]
    fn insufficient_ids() {
        assert!(make_splits(&ids(3), SplitSizes::Counts { val: 2, test: 2 }, 0, 1).is_err());
        assert!(make_splits(&ids(3), SplitSizes::Fractions { val: 0.7, test: 0.5 }, 0, 1).is_err());
    }
}

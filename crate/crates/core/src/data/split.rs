use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DkajError, Result};
use crate::scalar::Scalar;
use crate::survival::Cohort;

/// Row indices of a train / validation / test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`, then contiguous cuts: 30% test, and of the
/// remaining 70%, 20% validation. Sizes round half up.
pub fn split_indices(n: usize, seed: u64) -> Result<SplitSizes> {
    if n < 5 {
        return Err(DkajError::TooSmall(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = (7 * n + 5) / 10;
    let n_train = (4 * n_dev + 2) / 5;
    Ok(SplitSizes {
        train: order[..n_train].to_vec(),
        valid: order[n_train..n_dev].to_vec(),
        test: order[n_dev..].to_vec(),
    })
}

/// Seeded shuffle of `0..n` cut into 80% training and 20% validation rows.
pub fn split_train_valid_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 5 {
        return Err(DkajError::TooSmall(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (4 * n + 2) / 5;
    let valid = order.split_off(n_train);
    Ok((order, valid))
}

/// Splits a cohort with [`split_indices`].
pub fn split_train_valid_test<T: Scalar>(
    cohort: &Cohort<T>,
    seed: u64,
) -> Result<(Cohort<T>, Cohort<T>, Cohort<T>)> {
    let s = split_indices(cohort.len(), seed)?;
    Ok((
        cohort.subset(&s.train)?,
        cohort.subset(&s.valid)?,
        cohort.subset(&s.test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hundred_rows() {
        let s = split_indices(100, 3).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (56, 14, 30));
        assert_eq!(s, split_indices(100, 3).unwrap());
        assert_ne!(s, split_indices(100, 4).unwrap());
        assert!(matches!(split_indices(4, 0), Err(DkajError::TooSmall(4))));
        let (t, v) = split_train_valid_indices(70, 3).unwrap();
        assert_eq!((t.len(), v.len()), (56, 14));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 5usize..500, seed in any::<u64>()) {
            let s = split_indices(n, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(!s.train.is_empty() && !s.valid.is_empty() && !s.test.is_empty());
        }
    }
}

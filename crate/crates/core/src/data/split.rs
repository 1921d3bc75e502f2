use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::TensorDataset;
use crate::error::{Error, Result};

/// Train / validation / test partition of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTriple {
    pub train: TensorDataset,
    pub validation: TensorDataset,
    pub test: TensorDataset,
}

/// Sample indices of each part, in the original dataset's numbering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMembership {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitTriple {
    pub fn delete_bands(&self, ids: &BTreeSet<usize>) -> Result<SplitTriple> {
        Ok(SplitTriple {
            train: self.train.delete_bands(ids)?,
            validation: self.validation.delete_bands(ids)?,
            test: self.test.delete_bands(ids)?,
        })
    }

    pub fn delete_timesteps(&self, ids: &BTreeSet<usize>) -> Result<SplitTriple> {
        Ok(SplitTriple {
            train: self.train.delete_timesteps(ids)?,
            validation: self.validation.delete_timesteps(ids)?,
            test: self.test.delete_timesteps(ids)?,
        })
    }
}

/// Decides which samples go where: everything before the `holdout_years`
/// most recent distinct years trains; the holdout pool is shuffled with
/// `seed` and halved, validation taking the odd sample.
pub fn split_membership(
    years: &[u32],
    holdout_years: usize,
    seed: u64,
) -> Result<SplitMembership> {
    let distinct: BTreeSet<u32> = years.iter().copied().collect();
    if distinct.len() <= holdout_years {
        return Err(Error::Dataset(format!(
            "too few distinct years: {} present, {} held out",
            distinct.len(),
            holdout_years
        )));
    }
    let cutoff = *distinct.iter().rev().nth(holdout_years - 1).unwrap_or(&u32::MAX);
    let (train, mut pool): (Vec<usize>, Vec<usize>) =
        (0..years.len()).partition(|&i| years[i] < cutoff);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let n_val = pool.len().div_ceil(2);
    let mut validation = pool[..n_val].to_vec();
    let mut test = pool[n_val..].to_vec();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitMembership {
        train,
        validation,
        test,
    })
}

pub fn split_by_year(d: &TensorDataset, holdout_years: usize, seed: u64) -> Result<SplitTriple> {
    if holdout_years == 0 {
        return Err(Error::Dataset("holdout_years must be positive".into()));
    }
    let m = split_membership(d.years(), holdout_years, seed)?;
    Ok(SplitTriple {
        train: d.select(&m.train),
        validation: d.select(&m.validation),
        test: d.select(&m.test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_two_years_held_out() {
        let years: Vec<u32> = (0..60).map(|i| 2016 + (i % 6) as u32).collect();
        let m = split_membership(&years, 2, 3).unwrap();
        assert!(m.train.iter().all(|&i| years[i] <= 2019));
        assert!(m
            .validation
            .iter()
            .chain(&m.test)
            .all(|&i| years[i] >= 2020));
        assert_eq!(m.train.len(), 40);
        assert_eq!(m.validation.len(), 10);
        assert_eq!(m.test.len(), 10);
    }

    #[test]
    fn odd_pool_favours_validation() {
        let mut years = vec![2000u32; 5];
        years.extend(std::iter::repeat_n(2001, 6));
        years.extend(std::iter::repeat_n(2002, 5));
        let m = split_membership(&years, 2, 1).unwrap();
        assert_eq!(m.validation.len(), 6);
        assert_eq!(m.test.len(), 5);

        let mut even = vec![2000u32; 3];
        even.extend(std::iter::repeat_n(2001, 10));
        let m = split_membership(&even, 1, 1).unwrap();
        assert_eq!((m.validation.len(), m.test.len()), (5, 5));
    }

    #[test]
    fn seeded_membership_is_repeatable() {
        let years: Vec<u32> = (0..100).map(|i| 2010 + (i % 5) as u32).collect();
        assert_eq!(
            split_membership(&years, 2, 42).unwrap(),
            split_membership(&years, 2, 42).unwrap()
        );
    }

    #[test]
    fn too_few_years() {
        assert!(split_membership(&[2020, 2021, 2020], 2, 0).is_err());
    }

    #[test]
    fn membership_partitions_samples() {
        let years: Vec<u32> = (0..37).map(|i| 1990 + (i * 7 % 4) as u32).collect();
        let m = split_membership(&years, 2, 9).unwrap();
        let mut all: Vec<usize> = m
            .train
            .iter()
            .chain(&m.validation)
            .chain(&m.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }
}

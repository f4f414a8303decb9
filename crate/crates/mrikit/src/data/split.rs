//! Patient-level train/validation splitting.

use crate::seed;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Split patient indices 0..n into disjoint, exhaustive train/validation
/// sets. Deterministic in `seed`. When labels are given, the seed is advanced
/// deterministically until both splits contain at least one positive.
pub fn make_split(
    n_patients: usize,
    train_fraction: f64,
    split_seed: u64,
    labels: Option<&[u8]>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_patients < 2 {
        return Err(Error::InvalidArgument(format!("cannot split {n_patients} patients")));
    }
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction}")));
    }
    if let Some(l) = labels {
        if l.len() != n_patients {
            return Err(Error::InvalidArgument("labels do not match patient count".into()));
        }
        let positives = l.iter().filter(|&&x| x == 1).count();
        if positives >= 2 {
            for attempt in 0..1000u64 {
                let (train, val) = shuffled_split(n_patients, train_fraction, seed::mix(split_seed, attempt));
                let has = |ids: &[usize]| ids.iter().any(|&i| l[i] == 1);
                if has(&train) && has(&val) {
                    return Ok((train, val));
                }
            }
            return Err(Error::InvalidArgument(
                "could not place a positive in both splits".into(),
            ));
        }
        // fewer than two positives: a balanced split is impossible, fall through
    }
    Ok(shuffled_split(n_patients, train_fraction, seed::mix(split_seed, 0)))
}

fn shuffled_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = ids.split_off(n_train);
    (ids, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn eight_two_split_is_disjoint_and_exhaustive() {
        let (train, val) = make_split(10, 0.8, 7, None).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 2);
        let all: HashSet<usize> = train.iter().chain(&val).cloned().collect();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn same_seed_same_split() {
        assert_eq!(make_split(25, 0.7, 3, None).unwrap(), make_split(25, 0.7, 3, None).unwrap());
    }

    #[test]
    fn no_patient_ever_leaks_across_splits() {
        for s in 0..100 {
            let (train, val) = make_split(37, 0.8, s, None).unwrap();
            let train: HashSet<usize> = train.into_iter().collect();
            assert!(val.iter().all(|id| !train.contains(id)), "seed {s}");
        }
    }

    #[test]
    fn both_splits_get_a_positive_when_labels_are_given() {
        // exactly two positives: each split must receive one
        let mut labels = vec![0u8; 20];
        labels[3] = 1;
        labels[4] = 1;
        for s in 0..30 {
            let (train, val) = make_split(20, 0.8, s, Some(&labels)).unwrap();
            assert!(train.iter().any(|&i| labels[i] == 1), "seed {s}");
            assert!(val.iter().any(|&i| labels[i] == 1), "seed {s}");
        }
    }

    #[test]
    fn tiny_inputs_are_rejected() {
        assert!(make_split(1, 0.5, 0, None).is_err());
        assert!(make_split(10, 0.0, 0, None).is_err());
        assert!(make_split(10, 1.0, 0, None).is_err());
    }
}

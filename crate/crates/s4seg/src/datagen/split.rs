use rand::seq::SliceRandom;

use super::{DatagenError, DatasetSplit, ImageSlice, MaskLabel};
use crate::nn::{stream_rng, StreamId};

/// Shuffles the pool and carves off `round(test_fraction * n)` pairs as the
/// test set. Sweeps call this once so every (ratio, seed) cell shares one
/// test set.
#[allow(clippy::type_complexity)]
pub fn carve_test(
    pairs: Vec<(ImageSlice, MaskLabel)>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<(ImageSlice, MaskLabel)>, Vec<(ImageSlice, MaskLabel)>), DatagenError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatagenError::InvalidSplit(format!(
            "test_fraction {test_fraction} outside (0,1)"
        )));
    }
    let mut pairs = pairs;
    let mut rng = stream_rng(seed, StreamId::SplitShuffle);
    pairs.shuffle(&mut rng);
    let n_test = ((pairs.len() as f64) * test_fraction).round() as usize;
    if n_test >= pairs.len() {
        return Err(DatagenError::InvalidSplit(format!(
            "test fraction {test_fraction} leaves no training pool for {} pairs",
            pairs.len()
        )));
    }
    let rest = pairs.split_off(n_test);
    Ok((pairs, rest))
}

/// Splits a training pool into labeled pairs and unlabeled images.
///
/// `round(labeled_ratio * n)` pairs keep their masks; the remainder forms
/// the unlabeled pool, subsampled to `round(unlabeled_ratio * remainder)`.
/// Masks of unlabeled items are dropped here and never reach the trainer.
#[allow(clippy::type_complexity)]
pub fn split_pool(
    pool: Vec<(ImageSlice, MaskLabel)>,
    labeled_ratio: f64,
    unlabeled_ratio: f64,
    seed: u64,
) -> Result<(Vec<(ImageSlice, MaskLabel)>, Vec<ImageSlice>), DatagenError> {
    if !(labeled_ratio > 0.0 && labeled_ratio <= 1.0) {
        return Err(DatagenError::InvalidSplit(format!(
            "labeled_ratio {labeled_ratio} outside (0,1]"
        )));
    }
    if !(0.0..=1.0).contains(&unlabeled_ratio) {
        return Err(DatagenError::InvalidSplit(format!(
            "unlabeled_ratio {unlabeled_ratio} outside [0,1]"
        )));
    }
    let mut pool = pool;
    let mut rng = stream_rng(seed, StreamId::PoolShuffle);
    pool.shuffle(&mut rng);
    let n_labeled = ((pool.len() as f64) * labeled_ratio).round() as usize;
    if n_labeled == 0 {
        return Err(DatagenError::InvalidSplit(format!(
            "labeled_ratio {labeled_ratio} yields zero labeled samples from a pool of {}",
            pool.len()
        )));
    }
    let remainder = pool.split_off(n_labeled.min(pool.len()));
    let n_unlabeled = ((remainder.len() as f64) * unlabeled_ratio).round() as usize;
    let unlabeled = remainder
        .into_iter()
        .take(n_unlabeled)
        .map(|(slice, _)| slice)
        .collect();
    Ok((pool, unlabeled))
}

/// Carves the test set, then splits the remaining pool; deterministic per
/// seed. The two stages draw from independent RNG streams of the same seed.
pub fn make_split(
    pairs: Vec<(ImageSlice, MaskLabel)>,
    labeled_ratio: f64,
    unlabeled_ratio: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, DatagenError> {
    let (test, pool) = carve_test(pairs, test_fraction, seed)?;
    let (labeled, unlabeled) = split_pool(pool, labeled_ratio, unlabeled_ratio, seed)?;
    Ok(DatasetSplit {
        labeled,
        unlabeled,
        test,
        labeled_ratio,
        unlabeled_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_phantoms, PhantomSpec};

    fn pool(n: usize) -> Vec<(ImageSlice, MaskLabel)> {
        generate_phantoms(&PhantomSpec {
            image_size: (16, 16),
            n_slices: n,
            seed: 5,
            lesion_radius_range: (1.5, 4.0),
            ..PhantomSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn thirty_percent_of_hundred_gives_30_labeled_70_unlabeled() {
        // test fraction chosen so the post-test pool is exactly 100
        let split = make_split(pool(125), 0.3, 1.0, 0.2, 9).unwrap();
        assert_eq!(split.test.len(), 25);
        assert_eq!(split.labeled.len(), 30);
        assert_eq!(split.unlabeled.len(), 70);
        assert!(split.is_disjoint());
    }

    #[test]
    fn half_unlabeled_ratio_keeps_35_of_70() {
        let split = make_split(pool(125), 0.3, 0.5, 0.2, 9).unwrap();
        assert_eq!(split.labeled.len(), 30);
        assert_eq!(split.unlabeled.len(), 35);
    }

    #[test]
    fn fully_supervised_split_has_empty_unlabeled_set() {
        let split = make_split(pool(50), 1.0, 0.0, 0.2, 4).unwrap();
        assert_eq!(split.labeled.len(), 40);
        assert!(split.unlabeled.is_empty());
        assert_eq!(split.test.len(), 10);
    }

    #[test]
    fn zero_labeled_count_is_an_error() {
        let err = make_split(pool(50), 0.001, 1.0, 0.2, 4).unwrap_err();
        assert!(err.to_string().contains("zero labeled"), "{err}");
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let a = make_split(pool(60), 0.4, 0.8, 0.25, 77).unwrap();
        let b = make_split(pool(60), 0.4, 0.8, 0.25, 77).unwrap();
        let ids = |s: &DatasetSplit| {
            (
                s.labeled.iter().map(|(x, _)| x.slice_id().to_string()).collect::<Vec<_>>(),
                s.unlabeled.iter().map(|x| x.slice_id().to_string()).collect::<Vec<_>>(),
                s.test.iter().map(|(x, _)| x.slice_id().to_string()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(ids(&a), ids(&b));
        let c = make_split(pool(60), 0.4, 0.8, 0.25, 78).unwrap();
        assert_ne!(ids(&a), ids(&c));
    }

    #[test]
    fn shared_test_carve_is_stable_across_ratios() {
        let (test_a, pool_a) = carve_test(pool(80), 0.25, 3).unwrap();
        let (test_b, pool_b) = carve_test(pool(80), 0.25, 3).unwrap();
        let ids = |v: &[(ImageSlice, MaskLabel)]| {
            v.iter().map(|(s, _)| s.slice_id().to_string()).collect::<Vec<_>>()
        };
        assert_eq!(ids(&test_a), ids(&test_b));
        let (lab_a, _) = split_pool(pool_a, 0.1, 1.0, 101).unwrap();
        let (lab_b, _) = split_pool(pool_b, 0.8, 1.0, 101).unwrap();
        // labeled sets differ in size but both stay out of the test ids
        let test_ids: std::collections::HashSet<_> = ids(&test_a).into_iter().collect();
        assert!(ids(&lab_a).iter().all(|id| !test_ids.contains(id)));
        assert!(ids(&lab_b).iter().all(|id| !test_ids.contains(id)));
        assert_eq!(lab_a.len(), 6);
        assert_eq!(lab_b.len(), 48);
    }

    #[test]
    fn labeled_fraction_invariant_holds_within_one_sample() {
        for &ratio in &[0.1, 0.3, 0.5, 0.8] {
            let split = make_split(pool(125), ratio, 1.0, 0.2, 1).unwrap();
            let total = split.labeled.len() + split.unlabeled.len();
            let expect = ratio * total as f64;
            assert!(
                (split.labeled.len() as f64 - expect).abs() <= 1.0,
                "ratio {ratio}: {} labeled of {total}",
                split.labeled.len()
            );
        }
    }
}

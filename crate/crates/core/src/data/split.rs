use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

fn class_positions(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[(y == 1) as usize].push(i);
    }
    by_class
}

/// Stratified train/test split over row positions.
///
/// The train size is `round(ratio * n)`; it is shared out across classes by
/// largest remainder so every class lands within one row of its quota.
/// When a quota would leave one side of the split without a class, that
/// class is clamped and the other absorbs the difference, staying within two
/// rows of its quota.
pub fn stratified_split(labels: &[u8], ratio: f64, seed: u64) -> Result<SplitIndices, DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::InvalidRatio(ratio));
    }
    let mut by_class = class_positions(labels);
    for (class, rows) in by_class.iter().enumerate() {
        if rows.len() < 2 {
            return Err(DataError::ClassTooSmall {
                class: class as u8,
                count: rows.len(),
            });
        }
    }
    let n = labels.len();
    let total = (ratio * n as f64).round() as usize;
    let quotas: Vec<f64> = by_class.iter().map(|r| ratio * r.len() as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..2).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(2) {
        if remaining == 0 {
            break;
        }
        take[c] += 1;
        remaining -= 1;
    }
    // both sides of the split keep at least one row of each class
    for (c, rows) in by_class.iter().enumerate() {
        take[c] = take[c].clamp(1, rows.len() - 1);
    }
    // a clamp can move the total; the other class absorbs the difference
    loop {
        let sum: usize = take.iter().sum();
        let movable = |c: usize| {
            if sum > total {
                take[c] > 1
            } else {
                take[c] < by_class[c].len() - 1
            }
        };
        if sum == total || !(0..2).any(movable) {
            break;
        }
        let surplus = |c: usize| take[c] as f64 - quotas[c];
        let c = (0..2)
            .filter(|&c| movable(c))
            .max_by(|&a, &b| {
                let (sa, sb) = if sum > total {
                    (surplus(a), surplus(b))
                } else {
                    (-surplus(a), -surplus(b))
                };
                sa.total_cmp(&sb).then(b.cmp(&a))
            })
            .expect("a movable class");
        if sum > total {
            take[c] -= 1;
        } else {
            take[c] += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::with_capacity(total);
    let mut test_idx = Vec::with_capacity(n - total);
    for (c, rows) in by_class.iter_mut().enumerate() {
        rows.shuffle(&mut rng);
        train_idx.extend_from_slice(&rows[..take[c]]);
        test_idx.extend_from_slice(&rows[take[c]..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitIndices {
        train_idx,
        test_idx,
        seed,
        ratio,
    })
}

/// Assign each row to one of `k` folds, stratified by label. Per-fold class
/// counts differ by at most one across folds.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>, DataError> {
    if k < 2 {
        return Err(DataError::InvalidFolds(k));
    }
    let mut by_class = class_positions(labels);
    for (class, rows) in by_class.iter().enumerate() {
        if rows.len() < k {
            return Err(DataError::ClassTooSmall {
                class: class as u8,
                count: rows.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for rows in by_class.iter_mut() {
        rows.shuffle(&mut rng);
        for &r in rows.iter() {
            fold[r] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize, pos: usize) -> Vec<u8> {
        (0..n)
            .map(|i| (i % (n / pos) == 0 && i / (n / pos) < pos) as u8)
            .collect()
    }

    #[test]
    fn hundred_rows_ten_positives() {
        let y = labels(100, 10);
        assert_eq!(y.iter().filter(|&&v| v == 1).count(), 10);
        let s = stratified_split(&y, 0.7, 1).unwrap();
        let train_pos = s.train_idx.iter().filter(|&&i| y[i] == 1).count();
        assert_eq!(s.train_idx.len(), 70);
        assert!((6..=8).contains(&train_pos));
        assert!((62..=64).contains(&(s.train_idx.len() - train_pos)));
    }

    #[test]
    fn deterministic_for_seed() {
        let y = labels(200, 30);
        assert_eq!(
            stratified_split(&y, 0.7, 9).unwrap(),
            stratified_split(&y, 0.7, 9).unwrap()
        );
        assert_ne!(
            stratified_split(&y, 0.7, 9).unwrap().train_idx,
            stratified_split(&y, 0.7, 10).unwrap().train_idx
        );
    }

    #[test]
    fn rejects_tiny_class_and_bad_ratio() {
        let y = vec![0, 0, 0, 1];
        assert!(matches!(
            stratified_split(&y, 0.7, 1),
            Err(DataError::ClassTooSmall { class: 1, count: 1 })
        ));
        assert!(stratified_split(&[0, 0, 1, 1], 1.0, 1).is_err());
        assert!(stratified_split(&[0, 0, 1, 1], 0.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn split_invariants(n in 10usize..400, pos_frac in 0.05f64..0.95, ratio in 0.1f64..0.9, seed: u64) {
            let pos = ((n as f64 * pos_frac) as usize).clamp(2, n - 2);
            let y: Vec<u8> = (0..n).map(|i| (i < pos) as u8).collect();
            let s = stratified_split(&y, ratio, seed).unwrap();
            let mut all: Vec<usize> = s.train_idx.iter().chain(&s.test_idx).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let target = ratio * n as f64;
            prop_assert!((s.train_idx.len() as f64 - target).abs() <= 1.0);
            let counts = [(n - pos) as f64, pos as f64];
            let clamped = counts.iter().any(|&t| ratio * t < 1.0 || ratio * t > t - 1.0);
            for class in [0u8, 1] {
                let total = counts[class as usize];
                let in_train = s.train_idx.iter().filter(|&&i| y[i] == class).count() as f64;
                prop_assert!((1.0..=total - 1.0).contains(&in_train));
                let slack = if clamped { 2.0 } else { 1.0 };
                prop_assert!((in_train - ratio * total).abs() < slack + 1e-9);
            }
        }

        #[test]
        fn folds_are_balanced(n in 20usize..300, k in 2usize..6, seed: u64) {
            let y: Vec<u8> = (0..n).map(|i| (i % 4 == 0) as u8).collect();
            let fold = stratified_folds(&y, k, seed).unwrap();
            for class in [0u8, 1] {
                let counts: Vec<usize> = (0..k)
                    .map(|f| (0..n).filter(|&i| fold[i] == f && y[i] == class).count())
                    .collect();
                let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
            }
        }
    }
}

//! Agreement between a reference ranking and a hypothesis ranking.
//!
//! `Overlap@K` is the shared fraction of the two top-K sets. Kendall's tau
//! is tau-a over the features both top-K lists contain, in the order each
//! list gives them; it is undefined when fewer than two are shared.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("K must be at least {min}, got {k}")]
    KTooSmall { k: usize, min: usize },
    #[error("K = {k} exceeds the reference length {len}")]
    KExceedsReference { k: usize, len: usize },
    #[error("no scores to summarize")]
    Empty,
}

/// `|top_k(reference) ∩ top_k(hypothesis)| / k`. A hypothesis shorter than
/// `k` contributes all of its items.
pub fn overlap_at_k<S: AsRef<str>, T: AsRef<str>>(
    reference: &[S],
    hypothesis: &[T],
    k: usize,
) -> Result<f64, AlignmentError> {
    Ok(shared_count(reference, hypothesis, k)? as f64 / k as f64)
}

/// Numerator of [`overlap_at_k`].
pub fn shared_count<S: AsRef<str>, T: AsRef<str>>(
    reference: &[S],
    hypothesis: &[T],
    k: usize,
) -> Result<usize, AlignmentError> {
    if k < 1 {
        return Err(AlignmentError::KTooSmall { k, min: 1 });
    }
    if k > reference.len() {
        return Err(AlignmentError::KExceedsReference {
            k,
            len: reference.len(),
        });
    }
    let top: HashSet<&str> = reference[..k].iter().map(AsRef::as_ref).collect();
    let hyp: HashSet<&str> = hypothesis.iter().take(k).map(AsRef::as_ref).collect();
    Ok(top.intersection(&hyp).count())
}

/// Kendall tau-a on the shared top-K items; `None` if fewer than 2 shared.
pub fn kendall_tau_topk<S: AsRef<str>, T: AsRef<str>>(
    reference: &[S],
    hypothesis: &[T],
    k: usize,
) -> Result<Option<f64>, AlignmentError> {
    if k < 2 {
        return Err(AlignmentError::KTooSmall { k, min: 2 });
    }
    if k > reference.len() {
        return Err(AlignmentError::KExceedsReference {
            k,
            len: reference.len(),
        });
    }
    let ref_pos: HashMap<&str, usize> = reference[..k]
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_ref(), i))
        .collect();
    // reference positions of shared items, in hypothesis order; a repeated
    // item counts at its first position
    let mut seen = HashSet::new();
    let mut seq: Vec<usize> = hypothesis
        .iter()
        .take(k)
        .filter_map(|h| ref_pos.get(h.as_ref()).copied())
        .filter(|&p| seen.insert(p))
        .collect();
    let n = seq.len();
    if n < 2 {
        return Ok(None);
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let discordant = count_inversions(&mut seq) as f64;
    Ok(Some((pairs - 2.0 * discordant) / pairs))
}

/// Inversions by merge sort; sorts `v` as a side effect.
fn count_inversions(v: &mut [usize]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = count_inversions(&mut v[..mid]) + count_inversions(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[i] <= v[j] {
            merged.push(v[i]);
            i += 1;
        } else {
            merged.push(v[j]);
            count += (mid - i) as u64;
            j += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..]);
    v.copy_from_slice(&merged);
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub k_values: Vec<usize>,
    pub overlap_at_k: BTreeMap<usize, f64>,
    /// `None` where fewer than two features are shared.
    pub tau_at_k: BTreeMap<usize, Option<f64>>,
}

impl AlignmentScore {
    pub fn compute<S: AsRef<str>, T: AsRef<str>>(
        reference: &[S],
        hypothesis: &[T],
        k_values: &[usize],
    ) -> Result<Self, AlignmentError> {
        let mut overlaps = BTreeMap::new();
        let mut taus = BTreeMap::new();
        for &k in k_values {
            overlaps.insert(k, overlap_at_k(reference, hypothesis, k)?);
            taus.insert(k, kendall_tau_topk(reference, hypothesis, k)?);
        }
        Ok(Self {
            k_values: k_values.to_vec(),
            overlap_at_k: overlaps,
            tau_at_k: taus,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Overlap,
    Tau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Scores that were defined and entered the statistics.
    pub n: usize,
    /// Scores that were undefined and excluded.
    pub n_undefined: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Scores strictly below 1.
    pub n_nonperfect: usize,
    pub mean_of_nonperfect: Option<f64>,
}

/// Statistics of one measure at one K across instances, over defined values.
pub fn summarize(scores: &[AlignmentScore], measure: Measure, k: usize) -> Result<Summary, AlignmentError> {
    let raw: Vec<Option<f64>> = scores
        .iter()
        .map(|s| match measure {
            Measure::Overlap => s.overlap_at_k.get(&k).copied(),
            Measure::Tau => s.tau_at_k.get(&k).copied().flatten(),
        })
        .collect();
    summarize_values(&raw)
}

pub fn summarize_values(raw: &[Option<f64>]) -> Result<Summary, AlignmentError> {
    if raw.is_empty() {
        return Err(AlignmentError::Empty);
    }
    let defined: Vec<f64> = raw.iter().flatten().copied().collect();
    let n_undefined = raw.len() - defined.len();
    if defined.is_empty() {
        return Ok(Summary {
            n: 0,
            n_undefined,
            mean: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
            n_nonperfect: 0,
            mean_of_nonperfect: None,
        });
    }
    let nonperfect: Vec<f64> = defined.iter().copied().filter(|&v| v < 1.0).collect();
    Ok(Summary {
        n: defined.len(),
        n_undefined,
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        min: defined.iter().copied().fold(f64::INFINITY, f64::min),
        max: defined.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        n_nonperfect: nonperfect.len(),
        mean_of_nonperfect: (!nonperfect.is_empty()).then(|| nonperfect.iter().sum::<f64>() / nonperfect.len() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIVE: [&str; 5] = ["a", "b", "c", "d", "e"];

    fn tau_oracle(reference: &[&str], hypothesis: &[&str], k: usize) -> Option<f64> {
        let top_r = &reference[..k];
        let top_h: Vec<&str> = hypothesis.iter().take(k).copied().collect();
        let shared: Vec<&str> = top_r.iter().copied().filter(|x| top_h.contains(x)).collect();
        if shared.len() < 2 {
            return None;
        }
        let pos = |list: &[&str], x: &str| list.iter().position(|y| *y == x).unwrap();
        let (mut c, mut d) = (0.0, 0.0);
        for i in 0..shared.len() {
            for j in i + 1..shared.len() {
                let r = pos(top_r, shared[i]) < pos(top_r, shared[j]);
                let h = pos(&top_h, shared[i]) < pos(&top_h, shared[j]);
                if r == h {
                    c += 1.0;
                } else {
                    d += 1.0;
                }
            }
        }
        Some((c - d) / (c + d))
    }

    #[test]
    fn overlap_identities() {
        assert_eq!(overlap_at_k(&FIVE, &FIVE, 5).unwrap(), 1.0);
        assert_eq!(overlap_at_k(&FIVE, &["v", "w", "x", "y", "z"], 5).unwrap(), 0.0);
        assert_eq!(overlap_at_k(&FIVE, &["a", "b", "c", "d", "z"], 5).unwrap(), 0.8);
        assert_eq!(overlap_at_k(&FIVE, &["a", "b"], 5).unwrap(), 0.4);
        assert!(matches!(
            overlap_at_k(&FIVE, &FIVE, 6),
            Err(AlignmentError::KExceedsReference { .. })
        ));
        assert!(overlap_at_k(&FIVE, &FIVE, 0).is_err());
    }

    #[test]
    fn fourteen_of_fifteen() {
        let r: Vec<String> = (0..20).map(|i| format!("f{i}")).collect();
        let mut h = r.clone();
        h[7] = "zz".into();
        let o = overlap_at_k(&r, &h, 15).unwrap();
        assert!((o - 14.0 / 15.0).abs() < 1e-15);
        assert_eq!(format!("{o:.2}"), "0.93");
    }

    #[test]
    fn tau_identities() {
        assert_eq!(kendall_tau_topk(&FIVE, &FIVE, 5).unwrap(), Some(1.0));
        let rev: Vec<&str> = FIVE.iter().rev().copied().collect();
        assert_eq!(kendall_tau_topk(&FIVE, &rev, 5).unwrap(), Some(-1.0));
        assert_eq!(
            kendall_tau_topk(&FIVE, &["a", "c", "b", "d", "e"], 5).unwrap(),
            Some(0.8)
        );
        assert_eq!(kendall_tau_topk(&FIVE, &["a", "x", "y", "z", "w"], 5).unwrap(), None);
        assert!(kendall_tau_topk(&FIVE, &FIVE, 1).is_err());
    }

    #[test]
    fn summary_arithmetic() {
        let s = summarize_values(&[Some(1.0), Some(1.0), Some(0.8), None]).unwrap();
        assert_eq!(s.n, 3);
        assert_eq!(s.n_undefined, 1);
        assert_eq!(s.n_nonperfect, 1);
        assert_eq!(s.mean_of_nonperfect, Some(0.8));
        assert_eq!((s.min, s.max), (0.8, 1.0));
        let perfect = summarize_values(&[Some(1.0); 4]).unwrap();
        assert_eq!(perfect.n_nonperfect, 0);
        assert_eq!(perfect.mean_of_nonperfect, None);
        assert_eq!(summarize_values(&[]), Err(AlignmentError::Empty));
    }

    #[test]
    fn summarize_reads_the_requested_k() {
        let a = AlignmentScore::compute(&FIVE, &["a", "b", "c", "e", "d"], &[3, 5]).unwrap();
        let s = summarize(&[a.clone(), a], Measure::Tau, 5).unwrap();
        assert_eq!(s.mean, 0.8);
        let s = summarize(
            &[AlignmentScore::compute(&FIVE, &FIVE, &[3]).unwrap()],
            Measure::Overlap,
            3,
        )
        .unwrap();
        assert_eq!(s.mean, 1.0);
    }

    fn perm(n: usize) -> impl Strategy<Value = Vec<usize>> {
        Just((0..n).collect::<Vec<_>>()).prop_shuffle()
    }

    proptest! {
        #[test]
        fn tau_matches_pair_enumeration(
            (r, h) in (5usize..25).prop_flat_map(|n| (perm(n), perm(n))),
            drop in 0usize..4,
            kf in 0.0f64..1.0,
        ) {
            let names: Vec<String> = (0..r.len()).map(|i| format!("f{i}")).collect();
            let reference: Vec<&str> = r.iter().map(|&i| names[i].as_str()).collect();
            let hypothesis: Vec<&str> = h.iter().skip(drop).map(|&i| names[i].as_str()).collect();
            let k = 2 + ((r.len() - 2) as f64 * kf) as usize;
            let fast = kendall_tau_topk(&reference, &hypothesis, k).unwrap();
            let slow = tau_oracle(&reference, &hypothesis, k);
            match (fast, slow) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn overlap_symmetric_and_monotone((r, h) in (4usize..20).prop_flat_map(|n| (perm(n), perm(n)))) {
            let mut prev = 0;
            for k in 1..=r.len() {
                let a = overlap_at_k(&to_names(&r), &to_names(&h), k).unwrap();
                let b = overlap_at_k(&to_names(&h), &to_names(&r), k).unwrap();
                prop_assert_eq!(a, b);
                let count = shared_count(&to_names(&r), &to_names(&h), k).unwrap();
                prop_assert!(count >= prev);
                prop_assert_eq!(a * k as f64, count as f64);
                prev = count;
            }
        }

        #[test]
        fn tau_antisymmetric_under_reversal((r, h) in (3usize..15).prop_flat_map(|n| (perm(n), perm(n)))) {
            let k = r.len();
            let rev: Vec<usize> = h.iter().rev().copied().collect();
            let a = kendall_tau_topk(&to_names(&r), &to_names(&h), k).unwrap().unwrap();
            let b = kendall_tau_topk(&to_names(&r), &to_names(&rev), k).unwrap().unwrap();
            prop_assert!((a + b).abs() < 1e-12);
        }
    }

    fn to_names(v: &[usize]) -> Vec<String> {
        v.iter().map(|i| format!("f{i}")).collect()
    }
}

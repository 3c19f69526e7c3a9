//! Cell-stratified evaluation sample.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::models::{confusion_cells, ConfusionCell};

pub const CELLS: [ConfusionCell; 4] = [
    ConfusionCell::TP,
    ConfusionCell::TN,
    ConfusionCell::FP,
    ConfusionCell::FN,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledInstance {
    pub instance_id: usize,
    pub cell: ConfusionCell,
}

/// `per_cell` instances drawn uniformly without replacement from each
/// confusion cell, sorted by instance id. `ids`, `scores` and `labels` are
/// parallel; each cell is drawn from its own seeded stream, so one cell's
/// membership never shifts another's draw.
pub fn stratified_sample(
    ids: &[usize],
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
    per_cell: usize,
    seed: u64,
) -> Result<Vec<SampledInstance>, HarnessError> {
    if ids.len() != scores.len() || ids.len() != labels.len() {
        return Err(HarnessError::Plan("ids, scores and labels differ in length".into()));
    }
    let cells = confusion_cells(scores, labels, threshold);
    let mut out = Vec::with_capacity(4 * per_cell);
    for (stream, cell) in CELLS.into_iter().enumerate() {
        let mut members: Vec<usize> = ids
            .iter()
            .zip(&cells)
            .filter(|(_, c)| **c == cell)
            .map(|(&id, _)| id)
            .collect();
        if members.len() < per_cell {
            return Err(HarnessError::UndersizedCell {
                cell,
                count: members.len(),
                needed: per_cell,
            });
        }
        members.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64 + 1);
        for i in index::sample(&mut rng, members.len(), per_cell) {
            out.push(SampledInstance {
                instance_id: members[i],
                cell,
            });
        }
    }
    out.sort_by_key(|s| s.instance_id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn population(n: usize, seed: u64) -> (Vec<usize>, Vec<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<usize> = (0..n).map(|i| 1000 + 3 * i).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.4) as u8).collect();
        (ids, scores, labels)
    }

    #[test]
    fn fifty_per_cell() {
        let (ids, scores, labels) = population(2000, 1);
        let s = stratified_sample(&ids, &scores, &labels, 0.5, 50, 9).unwrap();
        assert_eq!(s.len(), 200);
        for cell in CELLS {
            assert_eq!(s.iter().filter(|x| x.cell == cell).count(), 50);
        }
        assert!(s.windows(2).all(|w| w[0].instance_id < w[1].instance_id));
        // cells agree with the scores
        for x in &s {
            let i = ids.iter().position(|&id| id == x.instance_id).unwrap();
            let predicted = scores[i] >= 0.5;
            let actual = labels[i] == 1;
            let expect = match (predicted, actual) {
                (true, true) => ConfusionCell::TP,
                (false, false) => ConfusionCell::TN,
                (true, false) => ConfusionCell::FP,
                (false, true) => ConfusionCell::FN,
            };
            assert_eq!(x.cell, expect);
        }
        assert_eq!(s, stratified_sample(&ids, &scores, &labels, 0.5, 50, 9).unwrap());
        assert_ne!(s, stratified_sample(&ids, &scores, &labels, 0.5, 50, 10).unwrap());
    }

    #[test]
    fn undersized_cell_is_named() {
        // 30 false negatives: labels 1 with low scores
        let mut ids = Vec::new();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (cell_score, label, count) in [(0.9, 1, 60), (0.1, 0, 60), (0.9, 0, 60), (0.1, 1, 30)] {
            for _ in 0..count {
                ids.push(ids.len());
                scores.push(cell_score);
                labels.push(label);
            }
        }
        match stratified_sample(&ids, &scores, &labels, 0.5, 50, 0) {
            Err(HarnessError::UndersizedCell { cell, count, needed }) => {
                assert_eq!((cell, count, needed), (ConfusionCell::FN, 30, 50));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn roughly_uniform_within_a_cell() {
        // every TN member should be drawn about equally often across seeds
        let ids: Vec<usize> = (0..40).collect();
        let scores = vec![0.1; 40];
        let labels = vec![0; 40];
        let mut all = ids.clone();
        let mut s = scores.clone();
        let mut l = labels.clone();
        // one member for each other cell so sampling 1 per cell works
        for (sc, lb) in [(0.9, 1), (0.9, 0), (0.1, 1)] {
            all.push(all.len());
            s.push(sc);
            l.push(lb);
        }
        let mut hits = vec![0usize; 40];
        for seed in 0..4000 {
            let pick = stratified_sample(&all, &s, &l, 0.5, 1, seed).unwrap();
            let tn = pick.iter().find(|p| p.cell == ConfusionCell::TN).unwrap();
            hits[tn.instance_id] += 1;
        }
        // expected 100 each; allow a generous band
        assert!(hits.iter().all(|&h| (50..160).contains(&h)), "{hits:?}");
    }
}

//! Second-order gradient boosting on the logistic loss.
//!
//! Trees are grown level by level with exact greedy split search over
//! presorted columns. Each candidate split sits at the midpoint between two
//! consecutive distinct values; rows with `x < threshold` go left. Gain is
//! `0.5 * [G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)]` and only strictly
//! positive gains split. Leaf values already include the learning rate, so
//! the margin is `base_score + sum of leaf values`.
//!
//! Node cover is the hessian sum of the training rows that reached it, with
//! internal covers set to the sum of their children.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::Selection;
use super::{sigmoid, softplus, ModelError, Prediction};
use crate::data::{stratified_folds, EncodedDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Leaf output on the margin scale; unused on internal nodes.
    #[serde(default)]
    pub value: f64,
    pub cover: f64,
}

impl Node {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Self {
            split: None,
            value,
            cover,
        }
    }

    pub fn internal(feature: usize, threshold: f64, left: usize, right: usize, cover: f64) -> Self {
        Self {
            split: Some(Split {
                feature,
                threshold,
                left,
                right,
            }),
            value: 0.0,
            cover,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.split {
                None => return node.value,
                Some(s) => i = if x[s.feature] < s.threshold { s.left } else { s.right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].split {
                None => 0,
                Some(s) => 1 + go(t, s.left).max(go(t, s.right)),
            }
        }
        go(self, 0)
    }

    /// Cover-weighted mean leaf value.
    pub fn expected_value(&self) -> f64 {
        fn go(t: &Tree, i: usize) -> f64 {
            let n = &t.nodes[i];
            match n.split {
                None => n.value,
                Some(s) => (t.nodes[s.left].cover * go(t, s.left) + t.nodes[s.right].cover * go(t, s.right)) / n.cover,
            }
        }
        go(self, 0)
    }

    fn validate(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if !(node.cover > 0.0 && node.cover.is_finite()) {
                return Err(format!("node {i} has non-positive cover {}", node.cover));
            }
            if !node.value.is_finite() {
                return Err(format!("node {i} has a non-finite value"));
            }
            if let Some(s) = node.split {
                if s.feature >= n_features {
                    return Err(format!("node {i} splits on feature {} of {n_features}", s.feature));
                }
                if s.threshold.is_nan() {
                    return Err(format!("node {i} has a NaN threshold"));
                }
                for child in [s.left, s.right] {
                    if child <= i || child >= self.nodes.len() {
                        return Err(format!("node {i} has invalid child {child}"));
                    }
                    parents[child] += 1;
                }
                if s.left == s.right {
                    return Err(format!("node {i} has identical children"));
                }
                let sum = self.nodes[s.left].cover + self.nodes[s.right].cover;
                if (sum - node.cover).abs() > 1e-9 * node.cover.max(1.0) {
                    return Err(format!(
                        "node {i}: child covers sum to {sum}, parent cover is {}",
                        node.cover
                    ));
                }
            }
        }
        if let Some(i) = (1..self.nodes.len()).find(|&i| parents[i] != 1) {
            return Err(format!("node {i} is not referenced exactly once"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub max_depth: usize,
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub reg_lambda: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            n_rounds: 100,
            learning_rate: 0.1,
            min_child_weight: 1.0,
            reg_lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    /// Initial margin (log-odds).
    pub base_score: f64,
    pub n_rounds: usize,
    pub n_features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<GbdtParams>,
}

impl GbdtModel {
    pub fn margin(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.n_features {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(self.margin_unchecked(x))
    }

    pub(crate) fn margin_unchecked(&self, x: &[f64]) -> f64 {
        let mut m = self.base_score;
        for t in &self.trees {
            m += t.predict(x);
        }
        m
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ModelError> {
        let raw_score = self.margin(x)?;
        Ok(Prediction {
            probability: sigmoid(raw_score),
            raw_score,
        })
    }

    /// Structural checks: two children per internal node, positive covers,
    /// child covers summing to the parent's.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (t, tree) in self.trees.iter().enumerate() {
            tree.validate(self.n_features)
                .map_err(|e| ModelError::InvalidForest(format!("tree {t}: {e}")))?;
        }
        if !self.base_score.is_finite() {
            return Err(ModelError::InvalidForest("non-finite base score".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Training

const CLOSED: u32 = u32::MAX;

/// Row order of every column, ascending by value, over a row subset.
struct Presorted {
    /// Per column: `(position into rows, value)`, ascending by value.
    order: Vec<Vec<(u32, f64)>>,
}

impl Presorted {
    fn new(ds: &EncodedDataset, rows: &[usize]) -> Self {
        let order = (0..ds.n_cols())
            .map(|c| {
                let mut idx: Vec<(u32, f64)> = rows
                    .iter()
                    .enumerate()
                    .map(|(p, &r)| (p as u32, ds.row(r)[c]))
                    .collect();
                idx.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                idx
            })
            .collect();
        Self { order }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Open {
    node: usize,
    grad: f64,
    hess: f64,
    depth: usize,
}

fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn build_tree(
    ds: &EncodedDataset,
    rows: &[usize],
    presorted: &Presorted,
    grad: &[f64],
    hess: &[f64],
    params: &GbdtParams,
) -> Tree {
    let n = rows.len();
    let lambda = params.reg_lambda;
    let mut nodes: Vec<Node> = vec![Node::leaf(0.0, 0.0)];
    let mut slot = vec![0u32; n]; // index into `open`, or CLOSED
    let mut open = vec![Open {
        node: 0,
        grad: grad.iter().sum(),
        hess: hess.iter().sum(),
        depth: 0,
    }];
    let mut order: Vec<Vec<(u32, f64)>> = presorted.order.clone();

    while !open.is_empty() {
        let k = open.len();
        let mut best: Vec<Option<Candidate>> = vec![None; k];
        if open.iter().any(|o| o.depth < params.max_depth) {
            let mut acc_g = vec![0.0; k];
            let mut acc_h = vec![0.0; k];
            let mut last = vec![f64::NAN; k];
            for (c, col_order) in order.iter().enumerate() {
                acc_g.iter_mut().for_each(|v| *v = 0.0);
                acc_h.iter_mut().for_each(|v| *v = 0.0);
                last.iter_mut().for_each(|v| *v = f64::NAN);
                for &(p, v) in col_order {
                    let s = slot[p as usize] as usize;
                    let o = &open[s];
                    if o.depth < params.max_depth && !last[s].is_nan() && v > last[s] {
                        let (gl, hl) = (acc_g[s], acc_h[s]);
                        let (gr, hr) = (o.grad - gl, o.hess - hl);
                        if hl >= params.min_child_weight && hr >= params.min_child_weight {
                            let gain =
                                0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(o.grad, o.hess, lambda));
                            if gain > 0.0 && best[s].is_none_or(|b| gain > b.gain) {
                                let mut threshold = 0.5 * (last[s] + v);
                                if threshold <= last[s] {
                                    threshold = v;
                                }
                                best[s] = Some(Candidate {
                                    gain,
                                    feature: c,
                                    threshold,
                                });
                            }
                        }
                    }
                    acc_g[s] += grad[p as usize];
                    acc_h[s] += hess[p as usize];
                    last[s] = v;
                }
            }
        }

        let mut next_open = Vec::new();
        let mut remap = vec![CLOSED; k];
        for (s, o) in open.iter().enumerate() {
            match best[s] {
                Some(b) => {
                    let left = nodes.len();
                    nodes.push(Node::leaf(0.0, 0.0));
                    nodes.push(Node::leaf(0.0, 0.0));
                    nodes[o.node] = Node::internal(b.feature, b.threshold, left, left + 1, 0.0);
                    remap[s] = next_open.len() as u32;
                    next_open.push(Open {
                        node: left,
                        grad: 0.0,
                        hess: 0.0,
                        depth: o.depth + 1,
                    });
                    next_open.push(Open {
                        node: left + 1,
                        grad: 0.0,
                        hess: 0.0,
                        depth: o.depth + 1,
                    });
                }
                None => {
                    nodes[o.node] = Node::leaf(params.learning_rate * leaf_weight(o.grad, o.hess, lambda), o.hess);
                }
            }
        }
        for p in 0..n {
            let s = slot[p];
            if s == CLOSED {
                continue;
            }
            let base = remap[s as usize];
            if base == CLOSED {
                slot[p] = CLOSED;
                continue;
            }
            let split = nodes[open[s as usize].node].split.expect("split node");
            let goes_right = ds.row(rows[p])[split.feature] >= split.threshold;
            let child = base + goes_right as u32;
            slot[p] = child;
            let o = &mut next_open[child as usize];
            o.grad += grad[p];
            o.hess += hess[p];
        }
        for col_order in order.iter_mut() {
            col_order.retain(|&(p, _)| slot[p as usize] != CLOSED);
        }
        open = next_open;
    }

    // Internal covers from children; children always follow their parent.
    for i in (0..nodes.len()).rev() {
        if let Some(s) = nodes[i].split {
            nodes[i].cover = nodes[s.left].cover + nodes[s.right].cover;
        }
    }
    Tree { nodes }
}

fn logloss(margins: &[f64], labels: &[f64]) -> f64 {
    margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| softplus(m) - y * m)
        .sum::<f64>()
        / margins.len() as f64
}

/// Boosting run on a row subset at fixed hyperparameters. Returns the model
/// and the mean training log-loss after each round (index 0 = base score).
pub fn fit_gbdt(ds: &EncodedDataset, rows: &[usize], params: &GbdtParams) -> Result<(GbdtModel, Vec<f64>), ModelError> {
    validate_params(params)?;
    if rows.is_empty() {
        return Err(ModelError::InvalidInput("no training rows".into()));
    }
    let presorted = Presorted::new(ds, rows);
    let constant = (0..ds.n_cols()).all(|c| {
        let o = &presorted.order[c];
        o[0].1 == o[o.len() - 1].1
    });
    if constant {
        return Err(ModelError::AllConstantFeatures);
    }

    let y: Vec<f64> = rows.iter().map(|&r| ds.labels()[r] as f64).collect();
    let prevalence = y.iter().sum::<f64>() / y.len() as f64;
    if prevalence == 0.0 || prevalence == 1.0 {
        return Err(ModelError::SingleClass);
    }
    let base_score = (prevalence / (1.0 - prevalence)).ln();
    let mut margins = vec![base_score; rows.len()];
    let mut grad = vec![0.0; rows.len()];
    let mut hess = vec![0.0; rows.len()];
    let mut history = Vec::with_capacity(params.n_rounds + 1);
    history.push(logloss(&margins, &y));
    let mut trees = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        for i in 0..rows.len() {
            let p = sigmoid(margins[i]);
            grad[i] = p - y[i];
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let tree = build_tree(ds, rows, &presorted, &grad, &hess, params);
        for (i, &r) in rows.iter().enumerate() {
            margins[i] += tree.predict(ds.row(r));
        }
        history.push(logloss(&margins, &y));
        trees.push(tree);
    }
    Ok((
        GbdtModel {
            trees,
            learning_rate: params.learning_rate,
            base_score,
            n_rounds: params.n_rounds,
            n_features: ds.n_cols(),
            params: Some(*params),
        },
        history,
    ))
}

fn validate_params(p: &GbdtParams) -> Result<(), ModelError> {
    let ok = p.n_rounds >= 1
        && p.learning_rate > 0.0
        && p.learning_rate.is_finite()
        && p.min_child_weight >= 0.0
        && p.reg_lambda >= 0.0;
    if ok {
        Ok(())
    } else {
        Err(ModelError::InvalidInput(format!("invalid GBDT parameters {p:?}")))
    }
}

/// Random-search ranges. Learning rate, min child weight and L2 penalty are
/// drawn log-uniformly; depth and rounds uniformly over the integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub depth: (usize, usize),
    pub rounds: (usize, usize),
    pub learning_rate: (f64, f64),
    pub min_child_weight: (f64, f64),
    pub reg_lambda: (f64, f64),
    pub trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            depth: (2, 6),
            rounds: (50, 400),
            learning_rate: (0.03, 0.3),
            min_child_weight: (0.5, 10.0),
            reg_lambda: (0.1, 10.0),
            trials: 30,
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<(), ModelError> {
        let pos_range = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        let ok = self.trials >= 1
            && self.depth.0 >= 1
            && self.depth.0 <= self.depth.1
            && self.rounds.0 >= 1
            && self.rounds.0 <= self.rounds.1
            && pos_range(self.learning_rate)
            && pos_range(self.min_child_weight)
            && pos_range(self.reg_lambda);
        if ok {
            Ok(())
        } else {
            Err(ModelError::DegenerateSearchSpace(format!("{self:?}")))
        }
    }

    /// Parameters for one trial; a pure function of `(seed, trial)`.
    pub fn sample(&self, seed: u64, trial: usize) -> GbdtParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64 + 1);
        let log_uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                (rng.gen_range(lo.ln()..=hi.ln())).exp()
            }
        };
        GbdtParams {
            max_depth: rng.gen_range(self.depth.0..=self.depth.1),
            n_rounds: rng.gen_range(self.rounds.0..=self.rounds.1),
            learning_rate: log_uniform(&mut rng, self.learning_rate),
            min_child_weight: log_uniform(&mut rng, self.min_child_weight),
            reg_lambda: log_uniform(&mut rng, self.reg_lambda),
        }
    }
}

/// Random search scored by mean stratified-CV PR-AUC, then a refit of the
/// best trial on all rows. Ties go to the earlier trial.
pub fn train_gbdt(
    train: &EncodedDataset,
    space: &SearchSpace,
    folds: usize,
    seed: u64,
) -> Result<(GbdtModel, Selection), ModelError> {
    space.validate()?;
    let fold_of = stratified_folds(train.labels(), folds, seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|k| (0..train.n_rows()).partition(|&i| fold_of[i] != k))
        .collect();
    let trial_scores: Vec<Result<(GbdtParams, f64), ModelError>> = (0..space.trials)
        .into_par_iter()
        .map(|trial| {
            let params = space.sample(seed, trial);
            let mut total = 0.0;
            for (fit_rows, val_rows) in &splits {
                let (model, _) = fit_gbdt(train, fit_rows, &params)?;
                let scores: Vec<f64> = val_rows.iter().map(|&i| model.margin_unchecked(train.row(i))).collect();
                let labels: Vec<u8> = val_rows.iter().map(|&i| train.labels()[i]).collect();
                total += super::metrics::pr_auc(&scores, &labels)?;
            }
            Ok((params, total / folds as f64))
        })
        .collect();
    let trial_scores = trial_scores.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut chosen = 0;
    for (i, (_, s)) in trial_scores.iter().enumerate() {
        if *s > trial_scores[chosen].1 {
            chosen = i;
        }
    }
    let all: Vec<usize> = (0..train.n_rows()).collect();
    let (model, _) = fit_gbdt(train, &all, &trial_scores[chosen].0)?;
    let candidates = trial_scores
        .iter()
        .map(|(p, s)| {
            (
                format!(
                    "depth={} rounds={} lr={:.4} min_child_weight={:.4} lambda={:.4}",
                    p.max_depth, p.n_rounds, p.learning_rate, p.min_child_weight, p.reg_lambda
                ),
                *s,
            )
        })
        .collect();
    Ok((
        model,
        Selection {
            folds,
            seed,
            candidates,
            chosen,
        },
    ))
}

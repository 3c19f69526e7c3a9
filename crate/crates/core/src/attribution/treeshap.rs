//! Exact path-dependent TreeSHAP.
//!
//! The game is `v(S) = E[tree(x) | x_S]` where the expectation over unknown
//! features follows each split in proportion to child cover. Shapley values
//! of that game are computed in polynomial time by tracking, along every
//! root-to-leaf path, the fraction of all feature subsets that flow down it.

use super::{AttributionError, AttributionVector};
use crate::models::{GbdtModel, Tree};

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: usize,
    /// Fraction of "feature unknown" paths that go this way.
    zero: f64,
    /// 1 if `x` follows this branch, else 0.
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: usize) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let lf = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / lf;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / lf;
    }
}

/// Path with element `i` removed.
fn unwind(path: &[PathElem], i: usize) -> Vec<PathElem> {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut out: Vec<PathElem> = path[..l].to_vec();
    let mut next = path[l].weight;
    let lf = (l + 1) as f64;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = out[j].weight;
            out[j].weight = next * lf / ((j + 1) as f64 * one);
            next = t - out[j].weight * zero * (l - j) as f64 / lf;
        } else {
            out[j].weight = out[j].weight * lf / (zero * (l - j) as f64);
        }
    }
    for j in i..l {
        out[j].feature = path[j + 1].feature;
        out[j].zero = path[j + 1].zero;
        out[j].one = path[j + 1].one;
    }
    out
}

/// Total weight the path would carry with element `i` removed.
fn unwound_sum(path: &[PathElem], i: usize) -> f64 {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let lf = (l + 1) as f64;
    let mut next = path[l].weight;
    let mut total = 0.0;
    for j in (0..l).rev() {
        if one != 0.0 {
            let w = next * lf / ((j + 1) as f64 * one);
            total += w;
            next = path[j].weight - w * zero * (l - j) as f64 / lf;
        } else {
            total += path[j].weight * lf / (zero * (l - j) as f64);
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    x: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElem>,
    zero: f64,
    one: f64,
    feature: usize,
) {
    extend(&mut path, zero, one, feature);
    let n = &tree.nodes[node];
    match n.split {
        None => {
            // index 0 is the root placeholder
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let e = path[i];
                phi[e.feature] += w * (e.one - e.zero) * n.value;
            }
        }
        Some(s) => {
            let (hot, cold) = if x[s.feature] < s.threshold {
                (s.left, s.right)
            } else {
                (s.right, s.left)
            };
            let (mut iz, mut io) = (1.0, 1.0);
            if let Some(k) = path.iter().skip(1).position(|e| e.feature == s.feature) {
                let k = k + 1;
                iz = path[k].zero;
                io = path[k].one;
                path = unwind(&path, k);
            }
            let cover = n.cover;
            let hot_z = iz * tree.nodes[hot].cover / cover;
            let cold_z = iz * tree.nodes[cold].cover / cover;
            recurse(tree, x, phi, hot, path.clone(), hot_z, io, s.feature);
            recurse(tree, x, phi, cold, path, cold_z, 0.0, s.feature);
        }
    }
}

/// Adds one tree's Shapley values to `phi`.
pub(crate) fn tree_shap_into(tree: &Tree, x: &[f64], phi: &mut [f64]) {
    let depth_hint = 8;
    recurse(tree, x, phi, 0, Vec::with_capacity(depth_hint), 1.0, 1.0, usize::MAX);
}

pub(crate) fn check_covers(model: &GbdtModel) -> Result<(), AttributionError> {
    for (t, tree) in model.trees.iter().enumerate() {
        if let Some((i, n)) = tree
            .nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !(n.cover > 0.0 && n.cover.is_finite()))
        {
            return Err(AttributionError::InvalidForest(format!(
                "tree {t} node {i} has cover {}",
                n.cover
            )));
        }
    }
    model
        .validate()
        .map_err(|e| AttributionError::InvalidForest(e.to_string()))
}

/// Exact TreeSHAP on the margin scale. `baseline` is the base score plus
/// each tree's cover-weighted expected output.
pub fn tree_shap(model: &GbdtModel, x: &[f64]) -> Result<AttributionVector, AttributionError> {
    if x.len() != model.n_features {
        return Err(AttributionError::DimensionMismatch {
            expected: model.n_features,
            found: x.len(),
        });
    }
    check_covers(model)?;
    Ok(tree_shap_unchecked(model, x))
}

/// As [`tree_shap`] for a forest already known to be valid.
pub(crate) fn tree_shap_unchecked(model: &GbdtModel, x: &[f64]) -> AttributionVector {
    let mut values = vec![0.0; model.n_features];
    let mut baseline = model.base_score;
    for tree in &model.trees {
        tree_shap_into(tree, x, &mut values);
        baseline += tree.expected_value();
    }
    AttributionVector {
        values,
        baseline,
        model_output: model.margin_unchecked(x),
    }
}

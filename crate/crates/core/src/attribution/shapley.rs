//! Shapley values by enumerating every feature subset.
//!
//! Exponential in the number of columns; exists to check [`super::tree_shap`]
//! on small forests. It shares only the game definition with TreeSHAP: the
//! value of a coalition is computed by a direct tree walk, and the Shapley
//! weights come from the subset formula.

use super::{AttributionError, AttributionVector};
use crate::models::{GbdtModel, Tree};

pub const MAX_BRUTE_FORCE_FEATURES: usize = 16;

/// `E[tree(x) | features in mask known]`, unknown splits averaged by cover.
fn conditional_expectation(tree: &Tree, x: &[f64], mask: u32, node: usize) -> f64 {
    let n = &tree.nodes[node];
    match n.split {
        None => n.value,
        Some(s) => {
            if mask & (1 << s.feature) != 0 {
                let next = if x[s.feature] < s.threshold { s.left } else { s.right };
                conditional_expectation(tree, x, mask, next)
            } else {
                let l = &tree.nodes[s.left];
                let r = &tree.nodes[s.right];
                (l.cover * conditional_expectation(tree, x, mask, s.left)
                    + r.cover * conditional_expectation(tree, x, mask, s.right))
                    / n.cover
            }
        }
    }
}

/// Coalition value for the whole forest, margin scale.
pub fn coalition_value(model: &GbdtModel, x: &[f64], mask: u32) -> f64 {
    model.base_score
        + model
            .trees
            .iter()
            .map(|t| conditional_expectation(t, x, mask, 0))
            .sum::<f64>()
}

pub fn brute_force_shapley(model: &GbdtModel, x: &[f64]) -> Result<AttributionVector, AttributionError> {
    let m = model.n_features;
    if m > MAX_BRUTE_FORCE_FEATURES {
        return Err(AttributionError::TooManyFeatures {
            found: m,
            max: MAX_BRUTE_FORCE_FEATURES,
        });
    }
    if x.len() != m {
        return Err(AttributionError::DimensionMismatch {
            expected: m,
            found: x.len(),
        });
    }
    super::treeshap::check_covers(model)?;

    let n_subsets = 1usize << m;
    let v: Vec<f64> = (0..n_subsets as u32).map(|s| coalition_value(model, x, s)).collect();

    // weight[k] = k! (m - k - 1)! / m!
    let mut fact = vec![1.0f64; m + 1];
    for k in 1..=m {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..m).map(|k| fact[k] * fact[m - k - 1] / fact[m]).collect();

    let mut values = vec![0.0; m];
    for (i, phi) in values.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for s in 0..n_subsets as u32 {
            if s & bit == 0 {
                *phi += weight[s.count_ones() as usize] * (v[(s | bit) as usize] - v[s as usize]);
            }
        }
    }
    Ok(AttributionVector {
        values,
        baseline: v[0],
        model_output: v[n_subsets - 1],
    })
}

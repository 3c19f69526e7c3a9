//! L2-penalised logistic regression.
//!
//! The objective on standardized columns is
//! `mean_i [softplus(z_i) - y_i z_i] + (lambda / 2) * ||w||^2`
//! with the intercept unpenalised. It is minimised by damped Newton steps
//! (Cholesky solve, Armijo backtracking) until the gradient 2-norm drops
//! below the tolerance. Coefficients are then mapped back to the input
//! scale so `raw_score = intercept + sum_j coef_j * x_j` holds on raw rows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, ModelError, Prediction};
use crate::data::{stratified_folds, EncodedDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    /// Population standard deviation; 0 marks a constant column.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub standardization: Vec<Standardization>,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 10_000,
        }
    }
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    /// Linear predictor on the log-odds of default.
    pub fn raw_score(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.coefficients.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.coefficients.len(),
                found: x.len(),
            });
        }
        Ok(self.raw_score_unchecked(x))
    }

    pub(crate) fn raw_score_unchecked(&self, x: &[f64]) -> f64 {
        let mut z = self.intercept;
        for (b, v) in self.coefficients.iter().zip(x) {
            z += b * v;
        }
        z
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ModelError> {
        let raw_score = self.raw_score(x)?;
        Ok(Prediction {
            probability: sigmoid(raw_score),
            raw_score,
        })
    }
}

/// Fit at a fixed penalty on the given row positions of `ds`.
pub fn fit_logistic(
    ds: &EncodedDataset,
    rows: &[usize],
    lambda: f64,
    config: NewtonConfig,
) -> Result<LogisticModel, ModelError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(ModelError::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    if rows.is_empty() {
        return Err(ModelError::InvalidInput("no training rows".into()));
    }
    let m = ds.n_cols();
    let n = rows.len() as f64;

    let mut standardization = Vec::with_capacity(m);
    for c in 0..m {
        let mean = rows.iter().map(|&r| ds.row(r)[c]).sum::<f64>() / n;
        let var = rows.iter().map(|&r| (ds.row(r)[c] - mean).powi(2)).sum::<f64>() / n;
        standardization.push(Standardization {
            mean,
            scale: var.sqrt(),
        });
    }
    // Active columns: constant ones keep a zero coefficient.
    let active: Vec<usize> = (0..m).filter(|&c| standardization[c].scale > 0.0).collect();
    let p = active.len() + 1; // intercept last

    let mut design = DMatrix::<f64>::zeros(rows.len(), p);
    for (i, &r) in rows.iter().enumerate() {
        let x = ds.row(r);
        for (k, &c) in active.iter().enumerate() {
            let s = standardization[c];
            design[(i, k)] = (x[c] - s.mean) / s.scale;
        }
        design[(i, p - 1)] = 1.0;
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| ds.labels()[r] as f64));

    let objective = |w: &DVector<f64>| -> f64 {
        let z = &design * w;
        let nll: f64 = z
            .iter()
            .zip(y.iter())
            .map(|(&zi, &yi)| softplus(zi) - yi * zi)
            .sum::<f64>()
            / n;
        let penalty: f64 = w.rows(0, p - 1).iter().map(|v| v * v).sum::<f64>();
        nll + 0.5 * lambda * penalty
    };

    let gradient = |w: &DVector<f64>| -> (DVector<f64>, Vec<f64>) {
        let z = &design * w;
        let probs: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let resid = DVector::from_iterator(rows.len(), probs.iter().zip(y.iter()).map(|(p, y)| p - y));
        let mut grad = design.tr_mul(&resid) / n;
        for k in 0..p - 1 {
            grad[k] += lambda * w[k];
        }
        (grad, probs)
    };

    let mut w = DVector::<f64>::zeros(p);
    let prevalence = y.sum() / n;
    w[p - 1] = (prevalence / (1.0 - prevalence)).ln();
    let mut f = objective(&w);
    let (mut grad, mut probs) = gradient(&w);
    let mut iterations = 0;

    while iterations < config.max_iter {
        if grad.norm() < config.tolerance {
            return Ok(to_input_scale(&w, &active, standardization, lambda, m));
        }
        iterations += 1;

        let mut weighted = design.clone();
        for (i, prob) in probs.iter().enumerate() {
            let h = (prob * (1.0 - prob)).max(1e-12);
            weighted.row_mut(i).scale_mut(h);
        }
        let mut hess = design.tr_mul(&weighted) / n;
        for k in 0..p - 1 {
            hess[(k, k)] += lambda;
        }
        let step = newton_direction(hess, &grad)?;

        let slope = -grad.dot(&step);
        if -slope < 1e-10 * f.abs().max(1.0) {
            // Predicted decrease is below the objective's rounding, so a line
            // search cannot judge it; the local Newton step is taken as is.
            w -= &step;
            f = objective(&w);
        } else {
            // Armijo backtracking on the full objective.
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let candidate = &w - &step * t;
                let fc = objective(&candidate);
                if fc <= f + 1e-4 * t * slope {
                    w = candidate;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (grad, probs) = gradient(&w);
    }
    if grad.norm() < config.tolerance {
        return Ok(to_input_scale(&w, &active, standardization, lambda, m));
    }
    Err(ModelError::Convergence {
        gradient_norm: grad.norm(),
        iterations,
    })
}

fn newton_direction(mut hess: DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
    let mut jitter = 0.0;
    for _ in 0..12 {
        if let Some(chol) = hess.clone().cholesky() {
            return Ok(chol.solve(grad));
        }
        let bump = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        for k in 0..hess.nrows() {
            hess[(k, k)] += bump - jitter;
        }
        jitter = bump;
    }
    Err(ModelError::InvalidInput("Hessian is not positive definite".into()))
}

fn to_input_scale(
    w: &DVector<f64>,
    active: &[usize],
    standardization: Vec<Standardization>,
    lambda: f64,
    m: usize,
) -> LogisticModel {
    let mut coefficients = vec![0.0; m];
    let mut intercept = w[w.len() - 1];
    for (k, &c) in active.iter().enumerate() {
        let s = standardization[c];
        coefficients[c] = w[k] / s.scale;
        intercept -= w[k] * s.mean / s.scale;
    }
    LogisticModel {
        intercept,
        coefficients,
        lambda,
        standardization,
    }
}

/// Cross-validated choice among penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub folds: usize,
    pub seed: u64,
    /// `(description, mean validation PR-AUC)` per candidate, in search order.
    pub candidates: Vec<(String, f64)>,
    pub chosen: usize,
}

pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// Pick lambda by mean stratified-CV PR-AUC, then refit on all rows.
/// Exact ties prefer the larger penalty.
pub fn train_logistic(
    train: &EncodedDataset,
    lambda_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(LogisticModel, Selection), ModelError> {
    if lambda_grid.is_empty() {
        return Err(ModelError::InvalidInput("empty lambda grid".into()));
    }
    let fold_of = stratified_folds(train.labels(), folds, seed)?;
    let config = NewtonConfig::default();
    let mut candidates = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let mut total = 0.0;
        for k in 0..folds {
            let (fit_rows, val_rows): (Vec<usize>, Vec<usize>) = (0..train.n_rows()).partition(|&i| fold_of[i] != k);
            let model = fit_logistic(train, &fit_rows, lambda, config)?;
            let scores: Vec<f64> = val_rows
                .iter()
                .map(|&i| model.raw_score_unchecked(train.row(i)))
                .collect();
            let labels: Vec<u8> = val_rows.iter().map(|&i| train.labels()[i]).collect();
            total += super::metrics::pr_auc(&scores, &labels)?;
        }
        candidates.push((format!("lambda={lambda}"), total / folds as f64));
    }
    let chosen = (0..lambda_grid.len())
        .max_by(|&a, &b| {
            candidates[a]
                .1
                .total_cmp(&candidates[b].1)
                .then(lambda_grid[a].total_cmp(&lambda_grid[b]))
        })
        .expect("non-empty grid");
    let all: Vec<usize> = (0..train.n_rows()).collect();
    let model = fit_logistic(train, &all, lambda_grid[chosen], config)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureGroup;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> EncodedDataset {
        let m = rows[0].len();
        let names = (0..m).map(|i| format!("x{i}")).collect();
        let groups = (0..m)
            .map(|i| FeatureGroup {
                name: format!("x{i}"),
                columns: vec![i],
            })
            .collect();
        EncodedDataset::new(rows.concat(), m, labels, names, groups).unwrap()
    }

    fn toy(seed: u64, n: usize) -> EncodedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-2.0..2.0);
            let b: f64 = rng.gen_range(0.0..50.0);
            let z = 1.5 * a - 0.04 * b + 0.5;
            labels.push(rng.gen_bool(sigmoid(z)) as u8);
            rows.push(vec![a, b]);
        }
        dataset(rows, labels)
    }

    fn all(ds: &EncodedDataset) -> Vec<usize> {
        (0..ds.n_rows()).collect()
    }

    #[test]
    fn separable_set_is_classified_perfectly() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.5],
            vec![0.5, 1.0],
            vec![3.0, 3.0],
            vec![4.0, 3.5],
            vec![3.5, 4.0],
        ];
        let ds = dataset(rows, vec![0, 0, 0, 1, 1, 1]);
        let model = fit_logistic(&ds, &all(&ds), 1e-3, NewtonConfig::default()).unwrap();
        for (row, &y) in ds.rows().zip(ds.labels()) {
            let p = model.predict(row).unwrap().probability;
            assert_eq!((p >= 0.5) as u8, y);
        }
    }

    #[test]
    fn ridge_shrinks_coefficients() {
        let ds = toy(3, 400);
        let norm = |m: &LogisticModel| {
            m.coefficients
                .iter()
                .zip(&m.standardization)
                .map(|(b, s)| (b * s.scale).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let strong = fit_logistic(&ds, &all(&ds), 10.0, NewtonConfig::default()).unwrap();
        let weak = fit_logistic(&ds, &all(&ds), 0.01, NewtonConfig::default()).unwrap();
        assert!(norm(&strong) < norm(&weak));
        let raw_norm = |m: &LogisticModel| m.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(raw_norm(&strong) < raw_norm(&weak));
    }

    #[test]
    fn uninformative_features_predict_base_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| vec![2.0, -1.0]).collect();
        let labels: Vec<u8> = (0..300).map(|i| (i % 4 == 0) as u8).collect();
        let _ = rng.gen::<u8>();
        let ds = dataset(rows, labels);
        let model = fit_logistic(&ds, &all(&ds), 0.0, NewtonConfig::default()).unwrap();
        assert_eq!(model.coefficients, vec![0.0, 0.0]);
        for row in ds.rows() {
            assert!((model.predict(row).unwrap().probability - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_model_gives_half() {
        let model = LogisticModel {
            intercept: 0.0,
            coefficients: vec![0.0; 3],
            lambda: 0.0,
            standardization: vec![Standardization { mean: 0.0, scale: 1.0 }; 3],
        };
        assert_eq!(model.predict(&[1.0, 2.0, 3.0]).unwrap().probability, 0.5);
        assert!(matches!(
            model.predict(&[1.0]),
            Err(ModelError::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn raw_score_matches_linear_predictor() {
        let ds = toy(8, 300);
        let model = fit_logistic(&ds, &all(&ds), 0.1, NewtonConfig::default()).unwrap();
        for row in ds.rows() {
            let expected = model.intercept + model.coefficients[0] * row[0] + model.coefficients[1] * row[1];
            assert!((model.raw_score(row).unwrap() - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn stationarity_on_standardized_scale() {
        // gradient of the objective vanishes at the returned solution
        let ds = toy(4, 250);
        let lambda = 0.05;
        let m = fit_logistic(&ds, &all(&ds), lambda, NewtonConfig::default()).unwrap();
        let n = ds.n_rows() as f64;
        let mut grad = [0.0; 3];
        for (row, &y) in ds.rows().zip(ds.labels()) {
            let r = sigmoid(m.raw_score(row).unwrap()) - y as f64;
            for c in 0..2 {
                let s = m.standardization[c];
                grad[c] += r * (row[c] - s.mean) / s.scale / n;
            }
            grad[2] += r / n;
        }
        for c in 0..2 {
            grad[c] += lambda * m.coefficients[c] * m.standardization[c].scale;
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-7, "{norm}");
    }

    #[test]
    fn separable_without_penalty_hits_iteration_budget() {
        let ds = dataset(vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]], vec![0, 0, 1, 1]);
        let err = fit_logistic(
            &ds,
            &all(&ds),
            0.0,
            NewtonConfig {
                tolerance: 1e-8,
                max_iter: 3,
            },
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Convergence { gradient_norm, .. } if gradient_norm > 1e-8));
    }

    #[test]
    fn cv_selection_is_deterministic() {
        let ds = toy(21, 300);
        let (a, sa) = train_logistic(&ds, &[0.001, 0.1, 10.0], 3, 5).unwrap();
        let (b, sb) = train_logistic(&ds, &[0.001, 0.1, 10.0], 3, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(sa.candidates.len(), 3);
        assert!(train_logistic(&ds, &[], 3, 5).is_err());
        assert!(train_logistic(&ds, &[1.0], 1, 5).is_err());
    }
}

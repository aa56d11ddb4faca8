//! Evaluation head: embedding through the trained network, a linear
//! one-vs-rest hinge classifier on the last-node representations, and the
//! goal-propagation probe that measures how far the goal representations
//! travel from the goal node to the output.

use serde::Serialize;

use crate::config::HyperParams;
use crate::error::{LpnError, Result};
use crate::goal::{solve_goal, GoalSolveSettings};
use crate::linalg::{frob_sq, Mat};
use crate::stages::forward_pass;
use crate::state::{ClassMatrix, WeightSet};
use crate::transforms::soft_threshold;

/// Embeds samples with the same forward recursion training uses and
/// returns the last-node representations.
pub fn embed(weights: &WeightSet, hp: &HyperParams, samples: &Mat) -> Result<Mat> {
    let pass = forward_pass(weights, &hp.tau, samples)?;
    Ok(pass.u.into_iter().last().expect("at least one level"))
}

/// One-vs-rest linear hinge classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// One row of weights per class.
    pub weights: Mat,
    pub bias: Vec<f64>,
    pub regularization: f64,
    pub epochs: usize,
}

impl LinearClassifier {
    /// Per-class decision values for one sample column.
    pub fn scores(&self, x: &ndarray::ArrayView1<'_, f64>) -> Vec<f64> {
        self.weights
            .rows()
            .into_iter()
            .zip(&self.bias)
            .map(|(w, b)| w.dot(x) + b)
            .collect()
    }

    pub fn predict(&self, reprs: &Mat) -> Vec<usize> {
        reprs
            .columns()
            .into_iter()
            .map(|col| {
                let scores = self.scores(&col);
                scores
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Trains the classifier with deterministic full-batch subgradient descent
/// on the L2-regularized hinge loss, one binary problem per class. Features
/// are scaled internally by a single factor so the fixed step schedule is
/// insensitive to representation magnitude.
pub fn fit_linear(reprs: &Mat, labels: &[usize], reg: f64, epochs: usize) -> Result<LinearClassifier> {
    if reprs.ncols() != labels.len() {
        return Err(LpnError::CountMismatch {
            images: reprs.ncols(),
            labels: labels.len(),
        });
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(LpnError::SingleClass(classes));
    }
    let dim = reprs.nrows();
    let n = reprs.ncols();

    // One shared scale: mean column norm.
    let mean_norm = reprs
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .sum::<f64>()
        / n as f64;
    let scale = if mean_norm > 0.0 { 1.0 / mean_norm } else { 1.0 };
    let x = reprs.mapv(|v| v * scale);

    let mut weights = Mat::zeros((classes, dim));
    let mut bias = vec![0.0f64; classes];
    let lambda = reg.max(1e-12);
    for (c, bias_slot) in bias.iter_mut().enumerate() {
        let targets: Vec<f64> = labels
            .iter()
            .map(|&l| if l == c { 1.0 } else { -1.0 })
            .collect();
        let mut w = ndarray::Array1::<f64>::zeros(dim);
        let mut b = 0.0f64;
        for t in 0..epochs {
            let step = 1.0 / (lambda * (t as f64 + 2.0));
            let mut grad = ndarray::Array1::<f64>::zeros(dim);
            let mut grad_b = 0.0f64;
            for (col, &y) in x.columns().into_iter().zip(&targets) {
                let margin = y * (w.dot(&col) + b);
                if margin < 1.0 {
                    grad.scaled_add(-y, &col);
                    grad_b -= y;
                }
            }
            let inv_n = 1.0 / n as f64;
            w.zip_mut_with(&grad, |wv, gv| {
                *wv -= step * (lambda * *wv + gv * inv_n);
            });
            b -= step * grad_b * inv_n;
        }
        weights.row_mut(c).assign(&w);
        *bias_slot = b;
    }
    // Fold the feature scale back into the weights.
    weights.mapv_inplace(|v| v * scale);
    Ok(LinearClassifier {
        weights,
        bias,
        regularization: reg,
        epochs,
    })
}

/// Fraction of argmax-correct predictions.
pub fn accuracy(clf: &LinearClassifier, reprs: &Mat, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let predictions = clf.predict(reprs);
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    correct as f64 / labels.len() as f64
}

/// Propagates the goal representations from the goal node to the output
/// and measures the gap `½‖D_L − U_L‖²` against the forward embedding.
/// Returns the raw value and the value normalized by `‖U_L‖²` (zero when
/// both vanish).
pub fn goal_propagation_gap(
    weights: &WeightSet,
    hp: &HyperParams,
    dataset: &ClassMatrix,
    goal_node: usize,
    goal: &GoalSolveSettings,
) -> Result<(f64, f64)> {
    let levels = weights.levels();
    let pass = forward_pass(weights, &hp.tau, &dataset.data)?;
    let q_goal = &pass.q[goal_node - 1];
    let g = match solve_goal(
        q_goal,
        dataset.classes,
        dataset.per_class,
        hp.lambda1[goal_node - 1],
        goal,
    ) {
        Ok(g) => g,
        Err(LpnError::GoalNonConvergence { best, .. }) => *best,
        Err(other) => return Err(other),
    };
    let mut propagated = g;
    for l in (goal_node + 1)..=levels {
        let q = weights.a(l - 1).dot(&propagated);
        propagated = soft_threshold(&q, hp.tau[l - 1])?;
    }
    let u_last = &pass.u[levels - 1];
    let raw = 0.5 * frob_sq(&(&propagated - u_last).view());
    let denom = frob_sq(&u_last.view());
    let normalized = if raw == 0.0 {
        0.0
    } else if denom > 0.0 {
        raw / denom
    } else {
        f64::INFINITY
    };
    Ok((raw, normalized))
}

/// Evaluation summary written by the command-line tools.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub dataset: String,
    pub mode: String,
    pub nodes: usize,
    pub goal_node: usize,
    pub accuracy: f64,
    pub eps_hat: Option<f64>,
    pub timings: EvalTimings,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalTimings {
    pub embed_secs: f64,
    pub fit_secs: f64,
}

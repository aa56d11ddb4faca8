//! Exact-goal representations: the sparse representations closest to the
//! linear transform that satisfy the cross-class discrimination constraint
//! exactly.
//!
//! The constraint is zero iff every feature row is used by at most one
//! class, and the data-fit-plus-ℓ1 objective is coordinate separable. The
//! constrained problem therefore splits by row: each row is either owned by
//! one class (whose entries get soft thresholded) or zeroed, and the owner
//! with the largest thresholding gain is optimal. `solve_goal` computes this
//! closed-form optimum and hands it to a penalty-continuation loop as the
//! starting point; the loop's block-coordinate sweeps (closed-form shifted,
//! rescaled soft thresholds per coordinate) then only run if the start is
//! somehow infeasible, and remain available for refining arbitrary states.

use ndarray::Array2;

use crate::error::{LpnError, Result};
use crate::linalg::Mat;
use crate::objective::discrimination;
use crate::transforms::{soft_threshold, soft_threshold_scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSolveSettings {
    /// Starting penalty weight on the discrimination measure.
    pub lambda0_init: f64,
    /// Multiplicative growth of the penalty between outer rounds (> 1).
    pub lambda0_growth: f64,
    /// Block-coordinate sweeps per outer round.
    pub inner_iters: usize,
    /// Feasibility tolerance on the discrimination measure.
    pub tol_overlap: f64,
    /// Outer continuation rounds before declaring non-convergence.
    pub max_outer: usize,
}

impl Default for GoalSolveSettings {
    fn default() -> Self {
        GoalSolveSettings {
            lambda0_init: 1.0,
            lambda0_growth: 4.0,
            inner_iters: 10,
            tol_overlap: 1e-6,
            max_outer: 12,
        }
    }
}

/// Splits a matrix into its positive and negative parts:
/// `g = g⁺ − g⁻` with `g⁺, g⁻ ≥ 0` and disjoint supports.
pub fn split_pos_neg(g: &Mat) -> (Mat, Mat) {
    let pos = g.mapv(|v| v.max(0.0));
    let neg = g.mapv(|v| (-v).max(0.0));
    (pos, neg)
}

/// Solves for the goal representations: minimize
/// `½‖Q − G‖² + λ1 Σ‖g‖₁` subject to zero cross-class overlap.
///
/// With fewer than two classes the constraint is vacuous and the result is
/// the plain soft threshold of `Q`. A feasible prox point is returned
/// untouched. Otherwise the row-ownership optimum seeds the continuation
/// loop, which returns as soon as the overlap is within tolerance and
/// errors (carrying its best iterate) if it never is.
pub fn solve_goal(
    q: &Mat,
    classes: usize,
    per_class: usize,
    lambda1: f64,
    settings: &GoalSolveSettings,
) -> Result<Mat> {
    if q.ncols() != classes * per_class {
        return Err(LpnError::ShapeMismatch {
            op: "solve_goal",
            expected: format!("{} columns", classes * per_class),
            got: format!("{}", q.ncols()),
        });
    }
    let prox = soft_threshold(q, lambda1)?;
    if classes < 2 {
        return Ok(prox);
    }
    if discrimination(&prox, classes, per_class) <= settings.tol_overlap {
        return Ok(prox);
    }
    let start = row_ownership_optimum(q, classes, per_class, lambda1);
    penalty_continuation(start, q, classes, per_class, lambda1, settings)
}

/// Exact solution of the reduction problem: per row, the class whose
/// entries gain the most from soft thresholding keeps the row, everyone
/// else is zeroed. Ties go to the lowest class index; rows where no entry
/// clears the threshold stay zero.
fn row_ownership_optimum(q: &Mat, classes: usize, per_class: usize, lambda1: f64) -> Mat {
    let rows = q.nrows();
    let mut g = Array2::<f64>::zeros(q.raw_dim());
    for i in 0..rows {
        let mut best_class = None;
        let mut best_gain = 0.0;
        for c in 0..classes {
            let mut gain = 0.0;
            for k in 0..per_class {
                let excess = q[[i, c * per_class + k]].abs() - lambda1;
                if excess > 0.0 {
                    gain += 0.5 * excess * excess;
                }
            }
            if gain > best_gain {
                best_gain = gain;
                best_class = Some(c);
            }
        }
        if let Some(c) = best_class {
            for k in 0..per_class {
                let j = c * per_class + k;
                g[[i, j]] = soft_threshold_scalar(q[[i, j]], lambda1);
            }
        }
    }
    g
}

/// Penalized objective `½‖Q − G‖² + λ1‖G‖₁ + λ0·D(G)`.
pub fn penalized_objective(
    g: &Mat,
    q: &Mat,
    classes: usize,
    per_class: usize,
    lambda1: f64,
    lambda0: f64,
) -> f64 {
    let fit: f64 = g
        .iter()
        .zip(q.iter())
        .map(|(gv, qv)| 0.5 * (qv - gv) * (qv - gv))
        .sum();
    let l1: f64 = g.iter().map(|v| v.abs()).sum();
    fit + lambda1 * l1 + lambda0 * discrimination(g, classes, per_class)
}

fn penalty_continuation(
    mut g: Mat,
    q: &Mat,
    classes: usize,
    per_class: usize,
    lambda1: f64,
    settings: &GoalSolveSettings,
) -> Result<Mat> {
    let mut lambda0 = settings.lambda0_init.max(f64::MIN_POSITIVE);
    let mut overlap = discrimination(&g, classes, per_class);
    for _ in 0..settings.max_outer {
        if overlap <= settings.tol_overlap {
            return Ok(g);
        }
        for _ in 0..settings.inner_iters {
            penalty_sweep(&mut g, q, classes, per_class, lambda1, lambda0);
        }
        overlap = discrimination(&g, classes, per_class);
        lambda0 *= settings.lambda0_growth;
    }
    if overlap <= settings.tol_overlap {
        return Ok(g);
    }
    Err(LpnError::GoalNonConvergence {
        final_overlap: overlap,
        best: Box::new(g),
    })
}

/// One block-coordinate sweep over columns in fixed `(class, k)` order.
/// Each column update is the exact minimizer of the penalized objective
/// restricted to that column, so the objective never increases.
pub fn penalty_sweep(
    g: &mut Mat,
    q: &Mat,
    classes: usize,
    per_class: usize,
    lambda1: f64,
    lambda0: f64,
) {
    let rows = g.nrows();
    // Rowwise per-class aggregates of positive parts, negative parts and
    // squares; a column sees the totals of every other class.
    let mut pos = vec![0.0f64; rows * classes];
    let mut neg = vec![0.0f64; rows * classes];
    let mut sq = vec![0.0f64; rows * classes];
    for c in 0..classes {
        for k in 0..per_class {
            let j = c * per_class + k;
            for i in 0..rows {
                let v = g[[i, j]];
                if v > 0.0 {
                    pos[i * classes + c] += v;
                } else {
                    neg[i * classes + c] += -v;
                }
                sq[i * classes + c] += v * v;
            }
        }
    }
    let mut pos_total = vec![0.0f64; rows];
    let mut neg_total = vec![0.0f64; rows];
    let mut sq_total = vec![0.0f64; rows];
    for i in 0..rows {
        for c in 0..classes {
            pos_total[i] += pos[i * classes + c];
            neg_total[i] += neg[i * classes + c];
            sq_total[i] += sq[i * classes + c];
        }
    }

    for c in 0..classes {
        for k in 0..per_class {
            let j = c * per_class + k;
            for i in 0..rows {
                let old = g[[i, j]];
                // Cross-class aggregates exclude the column's own class.
                let p_other = pos_total[i] - pos[i * classes + c];
                let n_other = neg_total[i] - neg[i * classes + c];
                let s_other = sq_total[i] - sq[i * classes + c];
                let new = coordinate_minimizer(
                    q[[i, j]],
                    lambda1,
                    lambda0,
                    p_other,
                    n_other,
                    s_other,
                );
                if new != old {
                    g[[i, j]] = new;
                    let (old_p, old_n) = if old > 0.0 { (old, 0.0) } else { (0.0, -old) };
                    let (new_p, new_n) = if new > 0.0 { (new, 0.0) } else { (0.0, -new) };
                    pos[i * classes + c] += new_p - old_p;
                    neg[i * classes + c] += new_n - old_n;
                    sq[i * classes + c] += new * new - old * old;
                    pos_total[i] += new_p - old_p;
                    neg_total[i] += new_n - old_n;
                    sq_total[i] += new * new - old * old;
                }
            }
        }
    }
}

/// Closed-form minimizer of the scalar problem
/// `½(x − q)² + λ1|x| + 2λ0(P·x⁺ + N·x⁻ + S·x²)`
/// — a shifted, rescaled soft threshold with candidates on each branch.
fn coordinate_minimizer(q: f64, lambda1: f64, lambda0: f64, p: f64, n: f64, s: f64) -> f64 {
    let denom = 1.0 + 4.0 * lambda0 * s;
    let cand_pos = (q - lambda1 - 2.0 * lambda0 * p) / denom;
    let cand_neg = (q + lambda1 + 2.0 * lambda0 * n) / denom;
    let eval = |x: f64| {
        let branch = if x > 0.0 { p * x } else { n * (-x) };
        0.5 * (x - q) * (x - q) + lambda1 * x.abs() + 2.0 * lambda0 * (branch + s * x * x)
    };
    let mut best_x = 0.0;
    let mut best_v = eval(0.0);
    if cand_pos > 0.0 {
        let v = eval(cand_pos);
        if v < best_v {
            best_v = v;
            best_x = cand_pos;
        }
    }
    if cand_neg < 0.0 {
        let v = eval(cand_neg);
        if v < best_v {
            best_x = cand_neg;
        }
    }
    best_x
}

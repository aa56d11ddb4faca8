//! Every term of the training objective, per node level: the three
//! transform-error terms, the weight penalties, the sparsity penalty, the
//! goal-alignment and flow-alignment terms, and the cross-class
//! discrimination measure on goal representations.

use ndarray::{Array2, ArrayView2};

use crate::config::{HyperParams, NetworkConfig, PenaltyKind};
use crate::error::{LpnError, Result};
use crate::linalg::{frob_sq, log_det_gram, Mat};
use crate::state::{ClassMatrix, NodeState, WeightSet};

/// `te = Y − Q`: deviation of the corrective representations from the
/// linear transform.
pub fn transform_error(q: &Mat, y: &Mat) -> Result<Mat> {
    check_same("transform_error", q.dim(), y.dim())?;
    Ok(y - q)
}

/// `ge = U − G`: deviation of the forward representations from the
/// exact-goal representations. Away from the goal node `G` is all-zero,
/// so the goal error degrades to `U` itself.
pub fn goal_error(g: &Mat, u: &Mat) -> Result<Mat> {
    check_same("goal_error", g.dim(), u.dim())?;
    Ok(u - g)
}

fn check_same(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<()> {
    if a != b {
        return Err(LpnError::ShapeMismatch {
            op,
            expected: format!("{a:?}"),
            got: format!("{b:?}"),
        });
    }
    Ok(())
}

/// Transform-error term at one level:
/// `½‖A U₋ − Y‖² + ½‖B U₊ − Y‖² + ½‖A U₋ − G‖²`,
/// with the backward term dropped at the last level (`backward = None`).
pub fn r1(
    a_prev: &Mat,
    u_prev: &Mat,
    backward: Option<(&ArrayView2<'_, f64>, &Mat)>,
    y: &Mat,
    g: &Mat,
) -> Result<f64> {
    let q = a_prev.dot(u_prev);
    check_same("r1", q.dim(), y.dim())?;
    check_same("r1", q.dim(), g.dim())?;
    let mut total = 0.5 * frob_sq(&(&q - y).view()) + 0.5 * frob_sq(&(&q - g).view());
    if let Some((b, u_next)) = backward {
        let p = b.dot(u_next);
        check_same("r1", p.dim(), y.dim())?;
        total += 0.5 * frob_sq(&(&p - y).view());
    }
    Ok(total)
}

/// Weight-penalty term at one level:
/// `V(A₋) = (λ2/2)‖A₋‖² + (λ3/2)‖A₋A₋ᵀ − I‖² − λ4·log|det A₋ᵀA₋|`
/// plus, below the last level, the tie `(λ5/2)‖A_l − B_lᵀ‖²`.
/// The log-det term errors when `A₋ᵀA₋` is numerically singular.
pub fn r2(
    a_prev: &Mat,
    tie: Option<(&Mat, &ArrayView2<'_, f64>)>,
    lambda2: f64,
    lambda3: f64,
    lambda4: f64,
    lambda5: f64,
) -> Result<f64> {
    let mut total = 0.5 * lambda2 * frob_sq(&a_prev.view());
    if lambda3 != 0.0 {
        let gram = a_prev.dot(&a_prev.t());
        let eye = Array2::<f64>::eye(gram.nrows());
        total += 0.5 * lambda3 * frob_sq(&(&gram - &eye).view());
    }
    if lambda4 != 0.0 {
        let logdet = log_det_gram(&a_prev.view()).ok_or(LpnError::LogDetUndefined)?;
        total -= lambda4 * logdet;
    }
    if let Some((a_next, b)) = tie {
        let diff = a_next - &b.t();
        total += 0.5 * lambda5 * frob_sq(&diff.view());
    }
    Ok(total)
}

/// Sparsity penalty `λ1 Σ (‖u‖₁ + ‖y‖₁ + ‖g‖₁)` over all columns.
pub fn sparsity_term(u: &Mat, y: &Mat, g: &Mat, lambda1: f64) -> f64 {
    let l1 = |m: &Mat| m.iter().map(|v| v.abs()).sum::<f64>();
    lambda1 * (l1(u) + l1(y) + l1(g))
}

/// Cross-class discrimination measure on goal representations: for every
/// ordered pair of columns from different classes, the overlap of positive
/// parts, negative parts, and squared Hadamard product. Zero exactly when
/// every row is used by at most one class.
pub fn discrimination(g: &Mat, classes: usize, per_class: usize) -> f64 {
    if classes < 2 {
        return 0.0;
    }
    let rows = g.nrows();
    debug_assert_eq!(g.ncols(), classes * per_class);
    let mut total = 0.0;
    // Rowwise class aggregates turn the ordered pair sum into
    // (Σ_c a_c)² − Σ_c a_c² per row.
    let mut pos = vec![0.0f64; classes];
    let mut neg = vec![0.0f64; classes];
    let mut sq = vec![0.0f64; classes];
    for i in 0..rows {
        pos.iter_mut().for_each(|v| *v = 0.0);
        neg.iter_mut().for_each(|v| *v = 0.0);
        sq.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..classes {
            for k in 0..per_class {
                let v = g[[i, c * per_class + k]];
                if v > 0.0 {
                    pos[c] += v;
                } else {
                    neg[c] += -v;
                }
                sq[c] += v * v;
            }
        }
        for agg in [&pos, &neg, &sq] {
            let sum: f64 = agg.iter().sum();
            let sum_sq: f64 = agg.iter().map(|v| v * v).sum();
            total += sum * sum - sum_sq;
        }
    }
    total
}

/// Goal-alignment term: `Σ ψ(te_colᵀ · ge_col)` with `te = Y − Q` and
/// `ge = U − G`.
pub fn r3(q: &Mat, y: &Mat, g: &Mat, u: &Mat, psi: PenaltyKind) -> Result<f64> {
    let te = transform_error(q, y)?;
    let ge = goal_error(g, u)?;
    Ok(columnwise_dot_sum(&te, &ge, psi))
}

/// Diffusion of neighboring goal errors into level `l`:
/// `F_f = λ_f · B_l · ge_{l+1}` (zero at the last level) and
/// `F_b = λ_b · A_{l-1} · ge_{l-1}` (zero at the first level, where the
/// input carries no goal).
#[derive(Debug, Clone)]
pub struct FlowTerm {
    pub forward: Mat,
    pub backward: Mat,
    pub total: Mat,
}

pub fn flow(
    a_prev: Option<&Mat>,
    b: Option<&ArrayView2<'_, f64>>,
    ge_prev: Option<&Mat>,
    ge_next: Option<&Mat>,
    lambda_f: f64,
    lambda_b: f64,
    shape: (usize, usize),
) -> Result<FlowTerm> {
    let forward = match (b, ge_next) {
        (Some(b), Some(ge_next)) => {
            if b.ncols() != ge_next.nrows() {
                return Err(LpnError::ShapeMismatch {
                    op: "flow",
                    expected: format!("{} rows in ge_next", b.ncols()),
                    got: format!("{}", ge_next.nrows()),
                });
            }
            lambda_f * b.dot(ge_next)
        }
        _ => Array2::zeros(shape),
    };
    let backward = match (a_prev, ge_prev) {
        (Some(a), Some(ge_prev)) => {
            if a.ncols() != ge_prev.nrows() {
                return Err(LpnError::ShapeMismatch {
                    op: "flow",
                    expected: format!("{} rows in ge_prev", a.ncols()),
                    got: format!("{}", ge_prev.nrows()),
                });
            }
            lambda_b * a.dot(ge_prev)
        }
        _ => Array2::zeros(shape),
    };
    check_same("flow", forward.dim(), shape)?;
    check_same("flow", backward.dim(), shape)?;
    let total = &forward + &backward;
    Ok(FlowTerm {
        forward,
        backward,
        total,
    })
}

/// Flow-alignment term: `Σ ψ(te_colᵀ · flow_col)`.
pub fn r4(te: &Mat, flow: &FlowTerm, psi: PenaltyKind) -> Result<f64> {
    check_same("r4", te.dim(), flow.total.dim())?;
    Ok(columnwise_dot_sum(te, &flow.total, psi))
}

fn columnwise_dot_sum(a: &Mat, b: &Mat, psi: PenaltyKind) -> f64 {
    let mut total = 0.0;
    for (ca, cb) in a.columns().into_iter().zip(b.columns()) {
        total += psi.apply(ca.dot(&cb));
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelTerms {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub sparsity: f64,
}

impl LevelTerms {
    pub fn sum(&self) -> f64 {
        self.r1 + self.r2 + self.r3 + self.r4 + self.sparsity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveBreakdown {
    pub per_level: Vec<LevelTerms>,
    pub total: f64,
}

/// Evaluates the full objective on a fresh state. The breakdown's total is
/// the sum of the per-level terms by construction.
pub fn total_objective(
    state: &NodeState,
    weights: &WeightSet,
    config: &NetworkConfig,
    hp: &HyperParams,
) -> Result<ObjectiveBreakdown> {
    let levels = config.levels();
    let mut per_level = Vec::with_capacity(levels);
    for l in 1..=levels {
        per_level.push(level_terms(state, weights, config, hp, l)?);
    }
    let total = per_level.iter().map(LevelTerms::sum).sum();
    Ok(ObjectiveBreakdown { per_level, total })
}

/// All objective terms attributed to one node level.
pub fn level_terms(
    state: &NodeState,
    weights: &WeightSet,
    config: &NetworkConfig,
    hp: &HyperParams,
    l: usize,
) -> Result<LevelTerms> {
    let levels = config.levels();
    let i = l - 1;
    let lv = state.level(l);
    let a_prev = weights.a(l - 1);
    let b_l = if l < levels { Some(weights.b(l)) } else { None };
    let b_view = b_l.as_ref().map(|b| b.view());

    let r1_val = r1(
        a_prev,
        state.u(l - 1),
        b_view.as_ref().map(|bv| (bv, state.u(l + 1))),
        &lv.y,
        &lv.g,
    )?;

    let a_next = if l < levels {
        Some(weights.a(l))
    } else {
        None
    };
    let r2_val = r2(
        a_prev,
        match (a_next, &b_view) {
            (Some(a_next), Some(bv)) => Some((a_next, bv)),
            _ => None,
        },
        hp.lambda2[i],
        hp.lambda3[i],
        hp.lambda4[i],
        hp.lambda5[i],
    )?;

    let r3_val = r3(&lv.q, &lv.y, &lv.g, &lv.u, hp.penalty_kind)?;

    let ge_next = if l < levels {
        Some(&state.level(l + 1).ge)
    } else {
        None
    };
    let flow_l = flow(
        Some(a_prev),
        b_l.as_ref().map(|b| b.view()).as_ref(),
        state.ge(l - 1),
        ge_next,
        hp.lambda_f[i],
        hp.lambda_b[i],
        lv.q.dim(),
    )?;
    let r4_val = r4(&lv.te, &flow_l, hp.penalty_kind)?;

    let sparsity = sparsity_term(&lv.u, &lv.y, &lv.g, hp.lambda1[i]);

    Ok(LevelTerms {
        r1: r1_val,
        r2: r2_val,
        r3: r3_val,
        r4: r4_val,
        sparsity,
    })
}

/// Mean fraction of nonzero entries per column.
pub fn mean_column_nnz(m: &Mat) -> f64 {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let nnz = m.iter().filter(|v| **v != 0.0).count();
    nnz as f64 / (m.nrows() * m.ncols()) as f64
}

/// Discrimination measure of a class-major matrix.
pub fn discrimination_of(cm: &ClassMatrix) -> f64 {
    discrimination(&cm.data, cm.classes, cm.per_class)
}

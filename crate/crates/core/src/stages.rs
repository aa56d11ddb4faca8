//! The two-stage learning procedure.
//!
//! Stage one propagates the batch forward through the soft-threshold
//! transforms and solves for the exact-goal representations at the goal
//! node. Stage two performs, per node level and independently of every
//! other level, an alternating update of the corrective representations
//! `Y_l`, the forward weight `A_{l-1}`, and the backward weight `B_l`.
//!
//! Each alternating step is guarded: a candidate is kept only when the
//! level's decoupled objective does not increase, which turns the update
//! formulas (whose derivations are approximate) into a genuine descent
//! method. Levels share no parameters, so any processing order, or a
//! parallel sweep, produces identical results.

use ndarray::{Array2, ArrayView2};

use crate::config::{HyperParams, NetworkConfig, PenaltyKind};
use crate::error::{LpnError, Result};
use crate::goal::{solve_goal, GoalSolveSettings};
use crate::linalg::{frob_sq, log_det_gram, psd_factor_product, solve_spd_right, Mat};
use crate::objective::{discrimination, LevelTerms};
use crate::state::{ClassMatrix, LevelState, NodeState, WeightSet};
use crate::transforms::{corrected_soft_threshold, soft_threshold};

/// Result of the forward pass: per level, the linear transform `Q_l` and
/// the representation `U_l = soft_threshold(Q_l, τ_l)`.
pub struct ForwardPass {
    pub q: Vec<Mat>,
    pub u: Vec<Mat>,
}

/// Forward recursion shared by training and evaluation.
pub fn forward_pass(weights: &WeightSet, tau: &[f64], input: &Mat) -> Result<ForwardPass> {
    let levels = weights.levels();
    let mut q = Vec::with_capacity(levels);
    let mut u = Vec::with_capacity(levels);
    for l in 1..=levels {
        let prev = if l == 1 { input } else { &u[l - 2] };
        let a = weights.a(l - 1);
        if a.ncols() != prev.nrows() {
            return Err(LpnError::ShapeMismatch {
                op: "forward_pass",
                expected: format!("{} input rows at level {l}", a.ncols()),
                got: format!("{}", prev.nrows()),
            });
        }
        let ql = a.dot(prev);
        let ul = soft_threshold(&ql, tau[l - 1])?;
        q.push(ql);
        u.push(ul);
    }
    Ok(ForwardPass { q, u })
}

/// Stage one plus the batch's goal diagnostics.
pub struct StageOneOutcome {
    pub state: NodeState,
    /// Discrimination value of the goal representations actually used.
    pub goal_overlap: f64,
    /// Final overlap when the goal solver declared non-convergence.
    pub goal_failure: Option<f64>,
}

/// Runs stage one, keeping the goal solver's best iterate when it fails to
/// reach feasibility (the failure is surfaced in the outcome).
pub fn stage_one_best_effort(
    batch: &ClassMatrix,
    weights: &WeightSet,
    config: &NetworkConfig,
    hp: &HyperParams,
    goal: &GoalSolveSettings,
) -> Result<StageOneOutcome> {
    let levels = config.levels();
    let pass = forward_pass(weights, &hp.tau, &batch.data)?;
    let mut goal_failure = None;
    let mut goal_overlap = 0.0;
    let mut level_states = Vec::with_capacity(levels);
    for l in 1..=levels {
        let q = pass.q[l - 1].clone();
        let u = pass.u[l - 1].clone();
        let g = if l == config.goal_node {
            let solved = solve_goal(
                &q,
                batch.classes,
                batch.per_class,
                hp.lambda1[l - 1],
                goal,
            );
            let g = match solved {
                Ok(g) => g,
                Err(LpnError::GoalNonConvergence {
                    final_overlap,
                    best,
                }) => {
                    goal_failure = Some(final_overlap);
                    *best
                }
                Err(other) => return Err(other),
            };
            goal_overlap = discrimination(&g, batch.classes, batch.per_class);
            g
        } else {
            Array2::zeros(q.raw_dim())
        };
        let y = u.clone();
        let te = &y - &q;
        let ge = &u - &g;
        level_states.push(LevelState { u, y, g, q, te, ge });
    }
    Ok(StageOneOutcome {
        state: NodeState {
            input: batch.data.clone(),
            levels: level_states,
        },
        goal_overlap,
        goal_failure,
    })
}

/// Stage one that propagates goal-solver non-convergence as an error.
pub fn stage_one(
    batch: &ClassMatrix,
    weights: &WeightSet,
    config: &NetworkConfig,
    hp: &HyperParams,
    goal: &GoalSolveSettings,
) -> Result<NodeState> {
    let outcome = stage_one_best_effort(batch, weights, config, hp, goal)?;
    if let Some(final_overlap) = outcome.goal_failure {
        return Err(LpnError::GoalNonConvergence {
            final_overlap,
            best: Box::new(outcome.state.level(config.goal_node).g.clone()),
        });
    }
    Ok(outcome.state)
}

/// Everything one level's decoupled subproblem reads but never writes:
/// neighbor representations and goal errors from stage one, the snapshot
/// of the next level's forward weight, and the level's penalty weights.
pub struct LevelCtx<'a> {
    pub level: usize,
    pub levels: usize,
    pub u_prev: &'a Mat,
    /// `ge_{l-1}`; `None` at the first level (the input carries no goal).
    pub ge_prev: Option<&'a Mat>,
    pub u: &'a Mat,
    pub g: &'a Mat,
    pub ge: &'a Mat,
    pub u_next: Option<&'a Mat>,
    pub ge_next: Option<&'a Mat>,
    /// Snapshot of `A_l` from the previous iteration; `None` at the last level.
    pub a_next: Option<&'a Mat>,
    pub tied: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda_f: f64,
    pub lambda_b: f64,
    pub psi: PenaltyKind,
}

/// The level's own parameter set: `Y_l`, `A_{l-1}`, and `B_l` (absent at
/// the last level and in tied mode, where it reads as `A_lᵀ`).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams {
    pub y: Mat,
    pub a: Mat,
    pub b: Option<Mat>,
}

/// Borrows the context for level `l` from a stage-one state and a weight
/// snapshot.
pub fn level_ctx<'a>(
    state: &'a NodeState,
    snapshot: &'a WeightSet,
    config: &'a NetworkConfig,
    hp: &'a HyperParams,
    l: usize,
) -> LevelCtx<'a> {
    let levels = config.levels();
    let i = l - 1;
    LevelCtx {
        level: l,
        levels,
        u_prev: state.u(l - 1),
        ge_prev: if l >= 2 { state.ge(l - 1) } else { None },
        u: &state.level(l).u,
        g: &state.level(l).g,
        ge: &state.level(l).ge,
        u_next: if l < levels { Some(state.u(l + 1)) } else { None },
        ge_next: if l < levels { state.ge(l + 1) } else { None },
        a_next: if l < levels {
            Some(snapshot.a(l))
        } else {
            None
        },
        tied: config.tie_backward,
        lambda1: hp.lambda1[i],
        lambda2: hp.lambda2[i],
        lambda3: hp.lambda3[i],
        lambda4: hp.lambda4[i],
        lambda5: hp.lambda5[i],
        lambda_f: hp.lambda_f[i],
        lambda_b: hp.lambda_b[i],
        psi: hp.penalty_kind,
    }
}

/// Clones the level's current parameters out of the state and snapshot.
pub fn level_params(
    state: &NodeState,
    snapshot: &WeightSet,
    config: &NetworkConfig,
    l: usize,
) -> LevelParams {
    let levels = config.levels();
    let b = if l < levels && !config.tie_backward {
        Some(snapshot.b(l).to_owned())
    } else {
        None
    };
    LevelParams {
        y: state.level(l).y.clone(),
        a: snapshot.a(l - 1).clone(),
        b,
    }
}

/// The backward map the level currently reads: its own `B_l`, or the
/// snapshot `A_lᵀ` when tied, or nothing at the last level.
fn backward_view<'x>(ctx: &'x LevelCtx<'_>, params: &'x LevelParams) -> Option<ArrayView2<'x, f64>> {
    if ctx.level == ctx.levels {
        return None;
    }
    if ctx.tied {
        ctx.a_next.map(|a| a.t())
    } else {
        params.b.as_ref().map(|b| b.view())
    }
}

fn flow_total(ctx: &LevelCtx<'_>, params: &LevelParams, shape: (usize, usize)) -> Mat {
    let mut total = Array2::<f64>::zeros(shape);
    if let (Some(b), Some(ge_next)) = (backward_view(ctx, params), ctx.ge_next) {
        if ctx.lambda_f != 0.0 {
            total = total + ctx.lambda_f * b.dot(ge_next);
        }
    }
    if let Some(ge_prev) = ctx.ge_prev {
        if ctx.lambda_b != 0.0 {
            total = total + ctx.lambda_b * params.a.dot(ge_prev);
        }
    }
    total
}

/// All objective terms of the level's decoupled subproblem at the given
/// parameters. Errors when an active log-det penalty meets a singular
/// weight gram.
pub fn level_breakdown(ctx: &LevelCtx<'_>, params: &LevelParams) -> Result<LevelTerms> {
    let q = params.a.dot(ctx.u_prev);
    level_breakdown_with_q(ctx, params, &q)
}

fn level_breakdown_with_q(
    ctx: &LevelCtx<'_>,
    params: &LevelParams,
    q: &Mat,
) -> Result<LevelTerms> {
    let y = &params.y;
    let mut r1 = 0.5 * frob_sq(&(q - y).view()) + 0.5 * frob_sq(&(q - ctx.g).view());
    if let (Some(b), Some(u_next)) = (backward_view(ctx, params), ctx.u_next) {
        r1 += 0.5 * frob_sq(&(&b.dot(u_next) - y).view());
    }

    let mut r2 = 0.5 * ctx.lambda2 * frob_sq(&params.a.view());
    if ctx.lambda3 != 0.0 {
        let gram = params.a.dot(&params.a.t());
        let eye = Array2::<f64>::eye(gram.nrows());
        r2 += 0.5 * ctx.lambda3 * frob_sq(&(&gram - &eye).view());
    }
    if ctx.lambda4 != 0.0 {
        let logdet = log_det_gram(&params.a.view()).ok_or(LpnError::LogDetUndefined)?;
        r2 -= ctx.lambda4 * logdet;
    }
    if !ctx.tied {
        if let (Some(a_next), Some(b)) = (ctx.a_next, params.b.as_ref()) {
            r2 += 0.5 * ctx.lambda5 * frob_sq(&(a_next - &b.t()).view());
        }
    }

    let te = y - q;
    let mut r3 = 0.0;
    for (tc, gc) in te.columns().into_iter().zip(ctx.ge.columns()) {
        r3 += ctx.psi.apply(tc.dot(&gc));
    }

    let flow = flow_total(ctx, params, q.dim());
    let mut r4 = 0.0;
    for (tc, fc) in te.columns().into_iter().zip(flow.columns()) {
        r4 += ctx.psi.apply(tc.dot(&fc));
    }

    let l1 = |m: &Mat| m.iter().map(|v| v.abs()).sum::<f64>();
    let sparsity = ctx.lambda1 * (l1(ctx.u) + l1(y) + l1(ctx.g));

    Ok(LevelTerms {
        r1,
        r2,
        r3,
        r4,
        sparsity,
    })
}

/// The decoupled objective `Σ_j R_j(l) + A(l)` the stage-two guards defend.
pub fn decoupled_objective(ctx: &LevelCtx<'_>, params: &LevelParams) -> Result<f64> {
    Ok(level_breakdown(ctx, params)?.sum())
}

/// Corrective-representation update: the closed-form minimizer of
/// `½‖q − y‖² + νᵀy + λ1‖y‖₁`.
pub fn update_y(q: &Mat, nu: &Mat, lambda1: f64) -> Result<Mat> {
    corrected_soft_threshold(q, nu, lambda1)
}

/// Columnwise-parallel variant of [`update_y`]; columns are independent,
/// so the result is identical to the serial one.
pub fn update_y_parallel(q: &Mat, nu: &Mat, lambda1: f64) -> Result<Mat> {
    use rayon::prelude::*;
    if lambda1 < 0.0 {
        return Err(LpnError::NegativeThreshold(lambda1));
    }
    if q.dim() != nu.dim() {
        return Err(LpnError::ShapeMismatch {
            op: "update_y_parallel",
            expected: format!("{:?}", q.dim()),
            got: format!("{:?}", nu.dim()),
        });
    }
    let columns: Vec<Vec<f64>> = (0..q.ncols())
        .into_par_iter()
        .map(|j| {
            q.column(j)
                .iter()
                .zip(nu.column(j))
                .map(|(qv, nv)| crate::transforms::soft_threshold_scalar(qv - nv, lambda1))
                .collect()
        })
        .collect();
    let mut out = Array2::<f64>::zeros(q.raw_dim());
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// Factor/target pair for the forward-weight problem: `W` is the fit
/// target, `gram` a positive-semidefinite projection of the symmetrized
/// quadratic form, `factor` a matrix with `factor·factorᵀ = gram`, and
/// `cross` the term the normal equations `A·(gram + λ2 I) = cross` pair
/// it with.
#[derive(Debug, Clone)]
pub struct TargetPair {
    pub factor: Mat,
    pub gram: Mat,
    pub w: Mat,
    pub cross: Mat,
}

/// Builds the factored target pair: `W = Y − ge − λ_f·B·ge₊` against the
/// symmetrized gram of `U₋(U₋ + λ_b·ge₋)ᵀ`, with `cross = W·U₋ᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn build_targets(
    u_prev: &Mat,
    ge_prev: Option<&Mat>,
    y: &Mat,
    ge: &Mat,
    backward: Option<&ArrayView2<'_, f64>>,
    ge_next: Option<&Mat>,
    lambda_b: f64,
    lambda_f: f64,
) -> Result<TargetPair> {
    let mut w = y - ge;
    if let (Some(b), Some(ge_next)) = (backward, ge_next) {
        if lambda_f != 0.0 {
            w = w - lambda_f * &b.dot(ge_next);
        }
    }
    let psd = match ge_prev {
        Some(ge_prev) if lambda_b != 0.0 => {
            let shifted = u_prev + &(lambda_b * ge_prev);
            psd_factor_product(&u_prev.view(), &shifted.view())?
        }
        _ => psd_factor_product(&u_prev.view(), &u_prev.view())?,
    };
    let cross = w.dot(&u_prev.t());
    Ok(TargetPair {
        factor: psd.factor,
        gram: psd.gram,
        w,
        cross,
    })
}

/// Builds targets whose normal equations match the stationarity of the
/// decoupled objective itself. Collecting the forward-weight gradient of
/// `R1 + R3 + R4` gives the quadratic form
/// `2·sym(U₋(U₋ − λ_b·ge₋)ᵀ)` and the cross term
/// `(Y + U + λ_f·B·ge₊)·U₋ᵀ − λ_b·Y·ge₋ᵀ`. The factored form flips the
/// flow signs and lacks the `U` pull, which makes its candidates ascent
/// directions on real states; the alternation therefore defaults to this
/// variant.
#[allow(clippy::too_many_arguments)]
pub fn build_targets_stationary(
    u_prev: &Mat,
    ge_prev: Option<&Mat>,
    y: &Mat,
    u: &Mat,
    backward: Option<&ArrayView2<'_, f64>>,
    ge_next: Option<&Mat>,
    lambda_b: f64,
    lambda_f: f64,
) -> Result<TargetPair> {
    let mut w = y + u;
    if let (Some(b), Some(ge_next)) = (backward, ge_next) {
        if lambda_f != 0.0 {
            w = w + lambda_f * &b.dot(ge_next);
        }
    }
    let mut cross = w.dot(&u_prev.t());
    let psd = match ge_prev {
        Some(ge_prev) if lambda_b != 0.0 => {
            cross = cross - lambda_b * &y.dot(&ge_prev.t());
            let shifted = 2.0 * (u_prev - &(lambda_b * ge_prev));
            psd_factor_product(&u_prev.view(), &shifted.view())?
        }
        _ => {
            let doubled = 2.0 * u_prev;
            psd_factor_product(&u_prev.view(), &doubled.view())?
        }
    };
    Ok(TargetPair {
        factor: psd.factor,
        gram: psd.gram,
        w,
        cross,
    })
}

/// Which forward-weight targets the alternation builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetFlavor {
    /// Normal equations of the decoupled objective (trains reliably).
    #[default]
    Stationary,
    /// The factored `W`/`S` construction, kept for comparison runs.
    Factored,
}

/// Smooth objective of the forward-weight problem:
/// `½⟨A·gram, A⟩ − ⟨A, cross⟩ + (λ2/2)‖A‖² + (λ3/2)‖AAᵀ − I‖²
///  − λ4·log|det AᵀA|`. `None` when the log-det is undefined at `A`.
pub fn forward_update_objective(
    a: &Mat,
    targets: &TargetPair,
    lambda2: f64,
    lambda3: f64,
    lambda4: f64,
) -> Option<f64> {
    let ag = a.dot(&targets.gram);
    let mut val = 0.5 * (&ag * a).sum() - (a * &targets.cross).sum();
    val += 0.5 * lambda2 * frob_sq(&a.view());
    if lambda3 != 0.0 {
        let gram = a.dot(&a.t());
        let eye = Array2::<f64>::eye(gram.nrows());
        val += 0.5 * lambda3 * frob_sq(&(&gram - &eye).view());
    }
    if lambda4 != 0.0 {
        val -= lambda4 * log_det_gram(&a.view())?;
    }
    Some(val)
}

fn forward_update_gradient(
    a: &Mat,
    targets: &TargetPair,
    lambda2: f64,
    lambda3: f64,
    lambda4: f64,
) -> Option<Mat> {
    let mut grad = a.dot(&targets.gram) - &targets.cross + lambda2 * a;
    if lambda3 != 0.0 {
        let gram = a.dot(&a.t());
        let eye = Array2::<f64>::eye(gram.nrows());
        grad = grad + 2.0 * lambda3 * (&gram - &eye).dot(a);
    }
    if lambda4 != 0.0 {
        let at_a = a.t().dot(a);
        let inv_applied = solve_spd_right(&at_a.view(), &a.view())?;
        grad = grad - 2.0 * lambda4 * inv_applied;
    }
    Some(grad)
}

/// Forward-weight update: ridge normal equations
/// `A·(gram + λ2 I) = cross` as initialization, then `refine_steps` of
/// gradient descent with Armijo backtracking on the full smooth objective.
/// The result never scores worse than `a_prev` on that objective.
pub fn update_forward_weight(
    targets: &TargetPair,
    a_prev: &Mat,
    lambda2: f64,
    lambda3: f64,
    lambda4: f64,
    refine_steps: usize,
) -> Result<Mat> {
    let n = targets.gram.nrows();
    let mut regularized = targets.gram.clone();
    for i in 0..n {
        regularized[[i, i]] += lambda2;
    }
    let ridge = solve_spd_right(&regularized.view(), &targets.cross.view())
        .ok_or(LpnError::RidgeRequired)?;
    if lambda3 == 0.0 && lambda4 == 0.0 {
        return Ok(ridge);
    }

    let objective = |a: &Mat| {
        forward_update_objective(a, targets, lambda2, lambda3, lambda4).unwrap_or(f64::INFINITY)
    };
    let f_prev = objective(a_prev);
    let f_ridge = objective(&ridge);
    let (mut a, mut f_cur) = if f_ridge <= f_prev {
        (ridge, f_ridge)
    } else {
        (a_prev.clone(), f_prev)
    };

    // Lipschitz-flavored initial step, doubled after each accepted step.
    let gram_scale = targets.gram.diag().sum().max(1e-12);
    let mut step = 1.0 / (gram_scale + lambda2 + 4.0 * lambda3 * (frob_sq(&a.view()) + 1.0));
    for _ in 0..refine_steps {
        let Some(grad) = forward_update_gradient(&a, targets, lambda2, lambda3, lambda4) else {
            break;
        };
        let grad_sq = frob_sq(&grad.view());
        if grad_sq <= 1e-30 {
            break;
        }
        let mut accepted = false;
        let mut t = step;
        for _ in 0..40 {
            let cand = &a - &(t * &grad);
            let f_cand = objective(&cand);
            if f_cand <= f_cur - 1e-4 * t * grad_sq {
                a = cand;
                f_cur = f_cand;
                step = t * 2.0;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(a)
}

/// Objective of the backward-weight problem:
/// `½‖B·U₊ − Y‖² + (λ5/2)‖B − A_lᵀ‖² + λ_f·Σ te_colᵀ(B·ge₊)_col`.
#[allow(clippy::too_many_arguments)]
pub fn backward_update_objective(
    b: &Mat,
    y: &Mat,
    u_next: &Mat,
    a_next: &Mat,
    ge_next: &Mat,
    te: &Mat,
    lambda5: f64,
    lambda_f: f64,
) -> f64 {
    let fit = 0.5 * frob_sq(&(&b.dot(u_next) - y).view());
    let tie = 0.5 * lambda5 * frob_sq(&(b - &a_next.t()).view());
    let flow = lambda_f * (&b.dot(ge_next) * te).sum();
    fit + tie + flow
}

/// Closed-form backward-weight update, the stationary point of
/// [`backward_update_objective`]:
/// `B = (Y·U₊ᵀ + λ5·A_lᵀ − λ_f·te·ge₊ᵀ)(U₊·U₊ᵀ + λ5·I)⁻¹`.
pub fn update_backward_weight(
    y: &Mat,
    u_next: &Mat,
    a_next: &Mat,
    ge_next: &Mat,
    te: &Mat,
    lambda5: f64,
    lambda_f: f64,
) -> Result<Mat> {
    let rhs = y.dot(&u_next.t()) + lambda5 * &a_next.t() - lambda_f * te.dot(&ge_next.t());
    let mut gram = u_next.dot(&u_next.t());
    for i in 0..gram.nrows() {
        gram[[i, i]] += lambda5;
    }
    solve_spd_right(&gram.view(), &rhs.view()).ok_or(LpnError::RidgeRequired)
}

/// Variant applying the inverse of the `U_{l-1}` gram instead of the
/// `U_{l+1}` gram. Requires `M_{l+1} = M_{l-1}` (square networks); the
/// default update is the stationarity-correct one.
pub fn update_backward_weight_literal(
    y: &Mat,
    u_prev: &Mat,
    a_next: &Mat,
    ge_next: &Mat,
    te: &Mat,
    lambda5: f64,
    lambda_f: f64,
) -> Result<Mat> {
    let rhs = y.dot(&u_prev.t()) + lambda5 * &a_next.t() - lambda_f * te.dot(&ge_next.t());
    let mut gram = u_prev.dot(&u_prev.t());
    for i in 0..gram.nrows() {
        gram[[i, i]] += lambda5;
    }
    if rhs.ncols() != gram.nrows() {
        return Err(LpnError::ShapeMismatch {
            op: "update_backward_weight_literal",
            expected: format!("square network with M_next = M_prev = {}", gram.nrows()),
            got: format!("{}", rhs.ncols()),
        });
    }
    solve_spd_right(&gram.view(), &rhs.view()).ok_or(LpnError::RidgeRequired)
}

/// Online blend `A ← A_prev − ρ(A_prev − Â)`; `ρ = 1` replaces outright.
pub fn online_blend(a_prev: &Mat, a_hat: &Mat, rho: f64) -> Result<Mat> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(LpnError::RhoOutOfRange(rho));
    }
    if a_prev.dim() != a_hat.dim() {
        return Err(LpnError::ShapeMismatch {
            op: "online_blend",
            expected: format!("{:?}", a_prev.dim()),
            got: format!("{:?}", a_hat.dim()),
        });
    }
    Ok(a_prev - &(rho * (a_prev - a_hat)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTwoOptions {
    /// Alternation sweeps per node per iteration.
    pub inner_rounds: usize,
    /// Gradient refinements inside the forward-weight update.
    pub refine_steps: usize,
    /// Invert the gram of `U_{l-1}` instead of `U_{l+1}` in the backward
    /// update.
    pub backward_gram_prev: bool,
    /// Forward-weight target construction.
    pub target_flavor: TargetFlavor,
}

impl Default for StageTwoOptions {
    fn default() -> Self {
        StageTwoOptions {
            inner_rounds: 1,
            refine_steps: 2,
            backward_gram_prev: false,
            target_flavor: TargetFlavor::Stationary,
        }
    }
}

/// New parameters for one level plus the objective before and after.
#[derive(Debug, Clone)]
pub struct NodeUpdateResult {
    pub level: usize,
    pub y: Mat,
    pub a: Mat,
    pub b: Option<Mat>,
    pub objective_before: f64,
    pub objective_after: f64,
    pub breakdown: LevelTerms,
}

/// Runs the per-level alternation: corrective representations, forward
/// weight, backward weight (omitted when tied). Every step is accepted
/// only if the decoupled objective does not increase, so
/// `objective_after ≤ objective_before` up to roundoff.
pub fn stage_two_node(
    ctx: &LevelCtx<'_>,
    init: LevelParams,
    opts: &StageTwoOptions,
) -> Result<NodeUpdateResult> {
    let mut params = init;
    let before = decoupled_objective(ctx, &params)?;
    let mut current = before;
    let slack = |v: f64| 1e-12 * v.abs().max(1.0);

    for _ in 0..opts.inner_rounds {
        // (i) corrective representations, guarded per column
        let q = params.a.dot(ctx.u_prev);
        let flow = flow_total(ctx, &params, q.dim());
        let nu = ctx.ge + &flow;
        let y_cand = update_y(&q, &nu, ctx.lambda1)?;
        let p = backward_view(ctx, &params)
            .zip(ctx.u_next)
            .map(|(b, u_next)| b.dot(u_next));
        let mut delta = 0.0;
        for j in 0..params.y.ncols() {
            let old_val = y_column_objective(ctx, &q, &nu, p.as_ref(), &params.y, j);
            let new_val = y_column_objective(ctx, &q, &nu, p.as_ref(), &y_cand, j);
            if new_val <= old_val {
                params.y.column_mut(j).assign(&y_cand.column(j));
                delta += new_val - old_val;
            }
        }
        current += delta;

        // (ii) forward weight, guarded by halving toward the previous value
        let bview = backward_view(ctx, &params);
        let targets = match opts.target_flavor {
            TargetFlavor::Stationary => build_targets_stationary(
                ctx.u_prev,
                ctx.ge_prev,
                &params.y,
                ctx.u,
                bview.as_ref(),
                ctx.ge_next,
                ctx.lambda_b,
                ctx.lambda_f,
            )?,
            TargetFlavor::Factored => build_targets(
                ctx.u_prev,
                ctx.ge_prev,
                &params.y,
                ctx.ge,
                bview.as_ref(),
                ctx.ge_next,
                ctx.lambda_b,
                ctx.lambda_f,
            )?,
        };
        let a_cand = update_forward_weight(
            &targets,
            &params.a,
            ctx.lambda2,
            ctx.lambda3,
            ctx.lambda4,
            opts.refine_steps,
        )?;
        let a_old = params.a.clone();
        let mut scale = 1.0;
        for _ in 0..8 {
            let blended = &a_old + &(scale * (&a_cand - &a_old));
            params.a = blended;
            match decoupled_objective(ctx, &params) {
                Ok(v) if v <= current + slack(current) => {
                    current = v;
                    break;
                }
                Ok(_) | Err(LpnError::LogDetUndefined) => {
                    params.a = a_old.clone();
                    scale *= 0.5;
                }
                Err(other) => return Err(other),
            }
        }

        // (iii) backward weight, exact minimizer of its restriction
        if !ctx.tied && ctx.level < ctx.levels {
            let (a_next, u_next, ge_next) = match (ctx.a_next, ctx.u_next, ctx.ge_next) {
                (Some(a), Some(u), Some(g)) => (a, u, g),
                _ => unreachable!("non-terminal level always has a next level"),
            };
            let q_new = params.a.dot(ctx.u_prev);
            let te = &params.y - &q_new;
            let b_cand = if opts.backward_gram_prev {
                update_backward_weight_literal(
                    &params.y,
                    ctx.u_prev,
                    a_next,
                    ge_next,
                    &te,
                    ctx.lambda5,
                    ctx.lambda_f,
                )?
            } else {
                update_backward_weight(
                    &params.y,
                    u_next,
                    a_next,
                    ge_next,
                    &te,
                    ctx.lambda5,
                    ctx.lambda_f,
                )?
            };
            let b_old = params.b.clone();
            params.b = Some(b_cand);
            match decoupled_objective(ctx, &params) {
                Ok(v) if v <= current + slack(current) => current = v,
                Ok(_) => params.b = b_old,
                Err(LpnError::LogDetUndefined) => params.b = b_old,
                Err(other) => return Err(other),
            }
        }
    }

    let breakdown = level_breakdown(ctx, &params)?;
    let after = breakdown.sum();
    Ok(NodeUpdateResult {
        level: ctx.level,
        y: params.y,
        a: params.a,
        b: params.b,
        objective_before: before,
        objective_after: after,
        breakdown,
    })
}

/// The decoupled objective's restriction to one column of `Y`:
/// `½‖q − y‖² (+ ½‖p − y‖² below the last level) + νᵀy + λ1‖y‖₁`.
fn y_column_objective(
    ctx: &LevelCtx<'_>,
    q: &Mat,
    nu: &Mat,
    p: Option<&Mat>,
    y: &Mat,
    col: usize,
) -> f64 {
    let yc = y.column(col);
    let qc = q.column(col);
    let nc = nu.column(col);
    let mut val = 0.0;
    for i in 0..yc.len() {
        let d = qc[i] - yc[i];
        val += 0.5 * d * d + nc[i] * yc[i] + ctx.lambda1 * yc[i].abs();
    }
    if let Some(p) = p {
        let pc = p.column(col);
        for i in 0..yc.len() {
            let d = pc[i] - yc[i];
            val += 0.5 * d * d;
        }
    }
    val
}

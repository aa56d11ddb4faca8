//! The network's nonlinear transforms.
//!
//! `soft_threshold` is the activation used in the forward pass: a linear
//! transform followed by elementwise soft thresholding. During learning the
//! corrective variant shifts its argument by a correction built from the
//! node's goal error and the propagation flow of its neighbors.

use ndarray::Array2;

use crate::error::{LpnError, Result};
use crate::linalg::Mat;

/// `Q = A · U`. Errors on an inner-dimension mismatch.
pub fn linear_transform(a: &Mat, u: &Mat) -> Result<Mat> {
    if a.ncols() != u.nrows() {
        return Err(LpnError::ShapeMismatch {
            op: "linear_transform",
            expected: format!("{} inner rows", a.ncols()),
            got: format!("{}", u.nrows()),
        });
    }
    Ok(a.dot(u))
}

#[inline]
pub fn soft_threshold_scalar(q: f64, tau: f64) -> f64 {
    let mag = q.abs() - tau;
    if mag > 0.0 {
        mag.copysign(q)
    } else {
        0.0
    }
}

/// Elementwise soft threshold `sign(q) ⊙ max(|q| − τ, 0)`, applied with one
/// threshold per matrix (thresholds are per node level, not per column).
/// Ties at `|q| = τ` map to exactly zero.
pub fn soft_threshold(q: &Mat, tau: f64) -> Result<Mat> {
    if tau < 0.0 {
        return Err(LpnError::NegativeThreshold(tau));
    }
    Ok(q.mapv(|v| soft_threshold_scalar(v, tau)))
}

/// Corrective soft threshold: `soft_threshold(q − ν, λ1)`. With a zero
/// correction it coincides with the plain transform.
pub fn corrected_soft_threshold(q: &Mat, nu: &Mat, lambda1: f64) -> Result<Mat> {
    if lambda1 < 0.0 {
        return Err(LpnError::NegativeThreshold(lambda1));
    }
    if q.dim() != nu.dim() {
        return Err(LpnError::ShapeMismatch {
            op: "corrected_soft_threshold",
            expected: format!("{:?}", q.dim()),
            got: format!("{:?}", nu.dim()),
        });
    }
    let mut out = Array2::<f64>::zeros(q.raw_dim());
    ndarray::Zip::from(&mut out)
        .and(q)
        .and(nu)
        .for_each(|o, &qv, &nv| *o = soft_threshold_scalar(qv - nv, lambda1));
    Ok(out)
}

/// The two components of the correction: `t` from the node's own goal error
/// and `p` from the diffusion of neighboring goal errors, with `ν = p + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionParts {
    pub t: Mat,
    pub p: Mat,
    pub nu: Mat,
}

pub fn assemble_correction(goal_error: &Mat, flow: &Mat) -> Result<CorrectionParts> {
    if goal_error.dim() != flow.dim() {
        return Err(LpnError::ShapeMismatch {
            op: "assemble_correction",
            expected: format!("{:?}", goal_error.dim()),
            got: format!("{:?}", flow.dim()),
        });
    }
    Ok(CorrectionParts {
        t: goal_error.clone(),
        p: flow.clone(),
        nu: goal_error + flow,
    })
}

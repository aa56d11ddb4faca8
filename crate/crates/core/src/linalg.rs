//! Dense linear algebra kernels: symmetric eigendecomposition, Cholesky
//! factorization and SPD solves, Householder thin QR, and positive
//! semidefinite factor extraction.
//!
//! Everything is pure Rust over `ndarray` so the crate builds without a
//! system BLAS/LAPACK. The eigensolver is the classic Householder
//! tridiagonalization followed by implicit-shift QL iteration.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{LpnError, Result};

pub type Mat = Array2<f64>;

/// Numerical singularity guard for Cholesky pivots and log-det factors.
const PIVOT_FLOOR: f64 = 1e-12;

/// Identity matrix of order `n`.
pub fn eye(n: usize) -> Mat {
    Array2::eye(n)
}

/// Squared Frobenius norm.
pub fn frob_sq(a: &ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Eigendecomposition of a real symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matrix whose columns are
/// the corresponding orthonormal eigenvectors. The input is symmetrized
/// internally so tiny asymmetries from accumulated rounding are harmless.
pub fn sym_eigh(m: &ArrayView2<'_, f64>) -> Result<(Array1<f64>, Mat)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(LpnError::ShapeMismatch {
            op: "sym_eigh",
            expected: "square matrix".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let mut z = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            z[[i, j]] = 0.5 * (m[[i, j]] + m[[j, i]]);
        }
    }
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tred2(&mut z, &mut d, &mut e);
    tql2(&mut z, &mut d, &mut e)?;

    // Sort eigenpairs ascending.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap_or(std::cmp::Ordering::Equal));
    let values = Array1::from_iter(order.iter().map(|&i| d[i]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&z.column(src));
    }
    Ok((values, vectors))
}

/// Householder reduction of a symmetric matrix to tridiagonal form,
/// accumulating the orthogonal transform in place of the input.
fn tred2(a: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        let mut scale = 0.0;
        if l > 0 {
            for k in 0..=l {
                scale += a[[i, k]].abs();
            }
            if scale == 0.0 {
                e[i] = a[[i, l]];
            } else {
                for k in 0..=l {
                    a[[i, k]] /= scale;
                    h += a[[i, k]] * a[[i, k]];
                }
                let f = a[[i, l]];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[[i, l]] = f - g;
                let mut f_acc = 0.0;
                for j in 0..=l {
                    a[[j, i]] = a[[i, j]] / h;
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += a[[j, k]] * a[[i, k]];
                    }
                    for k in (j + 1)..=l {
                        g_acc += a[[k, j]] * a[[i, k]];
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * a[[i, j]];
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = a[[i, j]];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[[j, k]] -= f * e[k] + g * a[[i, k]];
                    }
                }
            }
        } else {
            e[i] = a[[i, l]];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += a[[i, k]] * a[[k, j]];
                }
                for k in 0..i {
                    a[[k, j]] -= g * a[[k, i]];
                }
            }
        }
        d[i] = a[[i, i]];
        a[[i, i]] = 1.0;
        for j in 0..i {
            a[[j, i]] = 0.0;
            a[[i, j]] = 0.0;
        }
    }
}

/// Implicit-shift QL iteration on a symmetric tridiagonal matrix, applying
/// the rotations to the accumulated transform `z`.
fn tql2(z: &mut Mat, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n == 1 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(LpnError::GramNotFinite);
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[[k, i + 1]];
                    z[[k, i + 1]] = s * z[[k, i]] + c * f;
                    z[[k, i]] = c * z[[k, i]] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Returns `None` when a pivot falls below the singularity floor.
pub fn cholesky(m: &ArrayView2<'_, f64>) -> Option<Mat> {
    let n = m.nrows();
    if n != m.ncols() {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = m[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag.is_finite()) || diag <= PIVOT_FLOOR {
            return None;
        }
        let dj = diag.sqrt();
        l[[j, j]] = dj;
        for i in (j + 1)..n {
            let mut v = m[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / dj;
        }
    }
    Some(l)
}

/// Solves `X · M = B` for `X` where `M` is symmetric positive definite,
/// i.e. returns `B · M⁻¹`.
pub fn solve_spd_right(m: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Option<Mat> {
    let l = cholesky(m)?;
    let n = m.nrows();
    if b.ncols() != n {
        return None;
    }
    let rows = b.nrows();
    let mut x = b.to_owned();
    // Row-wise: solve L y = b_rowᵀ, then Lᵀ w = y, giving x_row = wᵀ.
    for r in 0..rows {
        // forward substitution
        for i in 0..n {
            let mut v = x[[r, i]];
            for k in 0..i {
                v -= l[[i, k]] * x[[r, k]];
            }
            x[[r, i]] = v / l[[i, i]];
        }
        // back substitution with Lᵀ
        for i in (0..n).rev() {
            let mut v = x[[r, i]];
            for k in (i + 1)..n {
                v -= l[[k, i]] * x[[r, k]];
            }
            x[[r, i]] = v / l[[i, i]];
        }
    }
    Some(x)
}

/// `log |det(AᵀA)|` through a Cholesky factorization of the gram matrix.
/// Returns `None` when the gram matrix is numerically singular.
pub fn log_det_gram(a: &ArrayView2<'_, f64>) -> Option<f64> {
    let gram = a.t().dot(a);
    let l = cholesky(&gram.view())?;
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        let d = l[[i, i]];
        if d * d < PIVOT_FLOOR {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

/// Householder thin QR of an `m × r` matrix with `m ≥ r`.
/// Returns only `Q` (orthonormal columns spanning the column space).
pub fn thin_qr_q(a: &ArrayView2<'_, f64>) -> Mat {
    let m = a.nrows();
    let r = a.ncols().min(m);
    let mut work = a.to_owned();
    let mut vs: Vec<Array1<f64>> = Vec::with_capacity(r);
    for j in 0..r {
        let mut v = Array1::<f64>::zeros(m);
        let mut norm_sq = 0.0;
        for i in j..m {
            let x = work[[i, j]];
            v[i] = x;
            norm_sq += x * x;
        }
        let norm = norm_sq.sqrt();
        if norm > 0.0 {
            let alpha = -norm.copysign(v[j]);
            v[j] -= alpha;
            let vn_sq: f64 = v.iter().map(|x| x * x).sum();
            if vn_sq > 0.0 {
                // Apply reflector H = I - 2vvᵀ/(vᵀv) to the trailing columns.
                for c in j..work.ncols() {
                    let mut dot = 0.0;
                    for i in j..m {
                        dot += v[i] * work[[i, c]];
                    }
                    let scale = 2.0 * dot / vn_sq;
                    for i in j..m {
                        work[[i, c]] -= scale * v[i];
                    }
                }
            }
        }
        vs.push(v);
    }
    // Q = H_0 H_1 ... H_{r-1} · [I_r; 0]
    let mut q = Array2::<f64>::zeros((m, r));
    for j in 0..r {
        q[[j, j]] = 1.0;
    }
    for (j, v) in vs.iter().enumerate().rev() {
        let vn_sq: f64 = v.iter().map(|x| x * x).sum();
        if vn_sq == 0.0 {
            continue;
        }
        for c in 0..r {
            let mut dot = 0.0;
            for i in j..m {
                dot += v[i] * q[[i, c]];
            }
            let scale = 2.0 * dot / vn_sq;
            for i in j..m {
                q[[i, c]] -= scale * v[i];
            }
        }
    }
    q
}

/// Outcome of projecting a symmetric matrix onto the positive semidefinite
/// cone: a factor `S` with `S·Sᵀ = gram` and the projected gram itself.
pub struct PsdFactor {
    pub factor: Mat,
    pub gram: Mat,
    /// Most negative eigenvalue found before clamping (0 when none).
    pub clamped_min: f64,
}

/// PSD projection of a symmetric matrix via eigendecomposition, clamping
/// negative eigenvalues at zero. `S = V Λ₊^{1/2}`.
pub fn psd_factor(sym: &ArrayView2<'_, f64>) -> Result<PsdFactor> {
    let (values, vectors) = sym_eigh(sym)?;
    factor_from_pairs(values, vectors)
}

/// PSD projection of `½(U Wᵀ + W Uᵀ)` through the low-rank column space of
/// `[U | W]`, avoiding a full-order eigendecomposition when `2·N < M`.
/// Produces the same gram as the dense route up to rounding.
pub fn psd_factor_product(u: &ArrayView2<'_, f64>, w: &ArrayView2<'_, f64>) -> Result<PsdFactor> {
    let m = u.nrows();
    let n = u.ncols();
    if w.nrows() != m || w.ncols() != n {
        return Err(LpnError::ShapeMismatch {
            op: "psd_factor_product",
            expected: format!("{}x{}", m, n),
            got: format!("{}x{}", w.nrows(), w.ncols()),
        });
    }
    if 2 * n >= m {
        let sym = 0.5 * (&u.dot(&w.t()) + &w.dot(&u.t()));
        return psd_factor(&sym.view());
    }
    let mut span = Array2::<f64>::zeros((m, 2 * n));
    span.slice_mut(ndarray::s![.., ..n]).assign(u);
    span.slice_mut(ndarray::s![.., n..]).assign(w);
    let q = thin_qr_q(&span.view());
    let qu = q.t().dot(u);
    let qw = q.t().dot(w);
    let t = 0.5 * (&qu.dot(&qw.t()) + &qw.dot(&qu.t()));
    let (values, vectors) = sym_eigh(&t.view())?;
    let lifted = q.dot(&vectors);
    factor_from_pairs(values, lifted)
}

fn factor_from_pairs(values: Array1<f64>, vectors: Mat) -> Result<PsdFactor> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(LpnError::GramNotFinite);
    }
    let clamped_min = values.iter().cloned().fold(0.0f64, f64::min);
    let clamped: Array1<f64> = values.mapv(|v| v.max(0.0));
    let mut factor = vectors.clone();
    for (mut col, &lam) in factor.axis_iter_mut(Axis(1)).zip(clamped.iter()) {
        col.mapv_inplace(|x| x * lam.sqrt());
    }
    let mut scaled = vectors.clone();
    for (mut col, &lam) in scaled.axis_iter_mut(Axis(1)).zip(clamped.iter()) {
        col.mapv_inplace(|x| x * lam);
    }
    let gram = scaled.dot(&vectors.t());
    Ok(PsdFactor {
        factor,
        gram,
        clamped_min,
    })
}

//! Dense numerical primitives: Cholesky with an escalating-jitter policy,
//! triangular solves, symmetric eigendecomposition, and conjugate gradients
//! driven by a caller-supplied linear map.
//!
//! The Cholesky trailing update is parallel over rows (column k is snapshotted
//! first, so each row owns its writes and the arithmetic order per row is
//! fixed). The eigendecomposition delegates to nalgebra's symmetric solver
//! and re-packages the result in ascending order.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{ParkError, Result};
use crate::parallel;

// ===== Cholesky =============================================================

/// Jitter escalation for barely-indefinite symmetric matrices: the first
/// attempt adds nothing; each retry adds `initial_scale * mean(diag) *
/// growth^k` to the diagonal, for at most `max_escalations` retries.
#[derive(Debug, Clone, Copy)]
pub struct JitterPolicy {
    pub initial_scale: f64,
    pub growth: f64,
    pub max_escalations: u32,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy { initial_scale: 1e-12, growth: 10.0, max_escalations: 10 }
    }
}

impl JitterPolicy {
    /// No retries: fail on the first non-positive pivot. Useful when the
    /// caller wants to detect indefiniteness instead of papering over it.
    pub fn none() -> Self {
        JitterPolicy { initial_scale: 0.0, growth: 1.0, max_escalations: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct CholFactor {
    l: Array2<f64>,
    /// Diagonal shift that was actually added before factorization succeeded.
    pub jitter: f64,
}

impl CholFactor {
    /// The lower-triangular factor (upper triangle is explicitly zero).
    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solve (L L^T) x = b via the two triangular solves.
    pub fn solve_vec(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        let y = tri_solve_vec(&self.l, b, TriSide::Lower)?;
        tri_solve_vec(&self.l, &y, TriSide::LowerTransposed)
    }

    /// Matrix right-hand-side variant of [`solve_vec`](Self::solve_vec).
    pub fn solve_mat(&self, b: &Array2<f64>) -> Result<Array2<f64>> {
        let y = tri_solve(&self.l, b, TriSide::Lower)?;
        tri_solve(&self.l, &y, TriSide::LowerTransposed)
    }
}

/// Lower Cholesky factor of `a + jitter * I`, escalating jitter per `policy`.
///
/// `a` must be square and symmetric to 1e-10 * ||a||_F. The returned factor
/// records the jitter that was actually needed (0 when the first attempt
/// succeeds, as for any safely positive definite input).
pub fn cholesky(a: &Array2<f64>, policy: &JitterPolicy) -> Result<CholFactor> {
    let m = check_square_symmetric(a, "cholesky")?;
    let trace: f64 = (0..m).map(|i| a[[i, i]]).sum();
    // Scale-free unit for the shift; |trace|/m is the natural magnitude of
    // the diagonal, with a floor so an all-zero matrix still escalates.
    let unit = (trace / m as f64).abs().max(f64::MIN_POSITIVE);
    let base = a.as_standard_layout();
    let mut jitter = 0.0;
    for attempt in 0..=policy.max_escalations {
        let mut work = base.to_owned();
        if jitter > 0.0 {
            for i in 0..m {
                work[[i, i]] += jitter;
            }
        }
        if cholesky_in_place(&mut work).is_ok() {
            return Ok(CholFactor { l: work, jitter });
        }
        jitter = if jitter == 0.0 {
            policy.initial_scale * unit
        } else {
            jitter * policy.growth
        };
        if attempt == policy.max_escalations {
            break;
        }
    }
    Err(ParkError::Numerical(format!(
        "cholesky failed for {m}x{m} matrix after escalating jitter to {:.3e}",
        jitter
    )))
}

/// Right-looking in-place factorization; `Err(k)` reports the first failing
/// pivot. The trailing update is parallel over rows: column k is copied out
/// first so every row task reads shared finalized data and writes only its
/// own row, keeping results independent of thread count.
fn cholesky_in_place(a: &mut Array2<f64>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    let data = a.as_slice_mut().expect("owned matrices are row-major");
    let mut col = vec![0.0f64; n];
    for k in 0..n {
        let piv = data[k * n + k];
        if !(piv > 0.0) || !piv.is_finite() {
            return Err(k);
        }
        let piv = piv.sqrt();
        data[k * n + k] = piv;
        for i in k + 1..n {
            data[i * n + k] /= piv;
        }
        for i in k + 1..n {
            col[i] = data[i * n + k];
        }
        let (done, rest) = data.split_at_mut((k + 1) * n);
        let _ = &done;
        let col_ref = &col;
        parallel::for_each_chunk(rest, n, move |r, rowbuf| {
            let i = k + 1 + r;
            let ci = col_ref[i];
            for j in k + 1..=i {
                rowbuf[j] -= ci * col_ref[j];
            }
        });
    }
    // Zero the upper triangle so the factor is exactly lower-triangular.
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = 0.0;
        }
    }
    Ok(())
}

fn check_square_symmetric(a: &Array2<f64>, what: &str) -> Result<usize> {
    let (m, mc) = a.dim();
    if m == 0 || m != mc {
        return Err(ParkError::Input(format!(
            "{what} needs a nonempty square matrix, got {m}x{mc}"
        )));
    }
    let mut fro = 0.0;
    for v in a.iter() {
        if !v.is_finite() {
            return Err(ParkError::Input(format!("{what} input contains non-finite entries")));
        }
        fro += v * v;
    }
    let fro = fro.sqrt();
    let mut asym = 0.0f64;
    for i in 0..m {
        for j in 0..i {
            asym = asym.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    if asym > 1e-10 * fro.max(f64::MIN_POSITIVE) {
        return Err(ParkError::Input(format!(
            "{what} input is not symmetric: max asymmetry {asym:.3e} vs norm {fro:.3e}"
        )));
    }
    Ok(m)
}

// ===== Triangular solves ====================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriSide {
    /// Solve L x = b reading the lower triangle (forward substitution).
    Lower,
    /// Solve U x = b reading the upper triangle (back substitution).
    Upper,
    /// Solve L^T x = b reading the lower triangle, without materializing
    /// the transpose.
    LowerTransposed,
}

/// Triangular solve with a matrix right-hand side (m x k, k may be 0).
pub fn tri_solve(mat: &Array2<f64>, b: &Array2<f64>, side: TriSide) -> Result<Array2<f64>> {
    let m = mat.nrows();
    if mat.ncols() != m {
        return Err(ParkError::Input(format!(
            "triangular matrix must be square, got {}x{}",
            m,
            mat.ncols()
        )));
    }
    if b.nrows() != m {
        return Err(ParkError::Input(format!(
            "right-hand side has {} rows, expected {m}",
            b.nrows()
        )));
    }
    let k = b.ncols();
    let mut out = b.as_standard_layout().to_owned();
    if k == 0 {
        return Ok(out);
    }
    let std_mat = mat.as_standard_layout();
    let a = std_mat.as_slice().expect("standard layout is contiguous");
    for c in 0..k {
        let mut colv: Vec<f64> = (0..m).map(|r| out[[r, c]]).collect();
        solve_col(a, &mut colv, side)?;
        for r in 0..m {
            out[[r, c]] = colv[r];
        }
    }
    Ok(out)
}

/// Vector right-hand-side variant.
pub fn tri_solve_vec(mat: &Array2<f64>, b: &Array1<f64>, side: TriSide) -> Result<Array1<f64>> {
    let m = mat.nrows();
    if mat.ncols() != m || b.len() != m {
        return Err(ParkError::Input(format!(
            "triangular solve shapes disagree: matrix {}x{}, rhs {}",
            m,
            mat.ncols(),
            b.len()
        )));
    }
    let mut x = b.to_vec();
    let std_mat = mat.as_standard_layout();
    let a = std_mat.as_slice().expect("standard layout is contiguous");
    solve_col(a, &mut x, side)?;
    Ok(Array1::from_vec(x))
}

fn solve_col(a: &[f64], x: &mut [f64], side: TriSide) -> Result<()> {
    let m = x.len();
    let diag_err = |i: usize| {
        ParkError::Numerical(format!("singular triangular system: zero diagonal at row {i}"))
    };
    match side {
        TriSide::Lower => {
            for i in 0..m {
                let mut s = x[i];
                let rowi = &a[i * m..i * m + i];
                for (j, lij) in rowi.iter().enumerate() {
                    s -= lij * x[j];
                }
                let d = a[i * m + i];
                if d == 0.0 || !d.is_finite() {
                    return Err(diag_err(i));
                }
                x[i] = s / d;
            }
        }
        TriSide::Upper => {
            for i in (0..m).rev() {
                let mut s = x[i];
                for j in i + 1..m {
                    s -= a[i * m + j] * x[j];
                }
                let d = a[i * m + i];
                if d == 0.0 || !d.is_finite() {
                    return Err(diag_err(i));
                }
                x[i] = s / d;
            }
        }
        TriSide::LowerTransposed => {
            // (L^T x)_i = sum_{j >= i} L[j][i] x_j
            for i in (0..m).rev() {
                let mut s = x[i];
                for j in i + 1..m {
                    s -= a[j * m + i] * x[j];
                }
                let d = a[i * m + i];
                if d == 0.0 || !d.is_finite() {
                    return Err(diag_err(i));
                }
                x[i] = s / d;
            }
        }
    }
    Ok(())
}

// ===== Symmetric eigendecomposition ========================================

/// Eigenvalues (ascending) and matching orthonormal eigenvectors (columns)
/// of a symmetric matrix.
pub fn sym_eig(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let m = check_square_symmetric(a, "sym_eig")?;
    let na = nalgebra::DMatrix::from_fn(m, m, |i, j| a[[i, j]]);
    let eig = nalgebra::SymmetricEigen::try_new(na, f64::EPSILON, 100_000)
        .ok_or_else(|| {
            ParkError::Numerical(format!("eigendecomposition of {m}x{m} matrix did not converge"))
        })?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .expect("eigenvalues are finite")
    });
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Array2::zeros((m, m));
    for (c, &i) in order.iter().enumerate() {
        for r in 0..m {
            vectors[[r, c]] = eig.eigenvectors[(r, i)];
        }
    }
    Ok((values, vectors))
}

// ===== Conjugate gradients ==================================================

#[derive(Debug, Clone, Serialize)]
pub struct CgTrace {
    /// ||b|| (residual of the zero initial iterate).
    pub initial_residual: f64,
    /// Residual norm after each completed iteration; length = iteration count.
    pub residual_norms: Vec<f64>,
    pub converged: bool,
}

impl CgTrace {
    pub fn iterations(&self) -> usize {
        self.residual_norms.len()
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_norms.last().unwrap_or(&self.initial_residual)
    }
}

/// Conjugate gradients from a zero initial iterate.
///
/// `apply` must realize a symmetric positive semidefinite operator. Stops
/// after `t_max` iterations or once the residual norm drops to
/// `tol * ||b||`, whichever comes first; `tol = 0` runs exactly `t_max`
/// iterations unless the residual hits exact zero (the fixed-iteration mode
/// the partitioned trainer uses by default).
pub fn cg<F>(mut apply: F, b: &Array1<f64>, t_max: usize, tol: f64) -> Result<(Array1<f64>, CgTrace)>
where
    F: FnMut(&Array1<f64>) -> Array1<f64>,
{
    if t_max == 0 {
        return Err(ParkError::Input("cg needs t_max >= 1".into()));
    }
    if !(tol >= 0.0) {
        return Err(ParkError::Input(format!("cg tolerance must be >= 0, got {tol}")));
    }
    let m = b.len();
    let mut x = Array1::<f64>::zeros(m);
    let mut r = b.clone();
    let mut rs: f64 = r.dot(&r);
    let initial_residual = rs.sqrt();
    let mut trace = CgTrace { initial_residual, residual_norms: Vec::new(), converged: false };
    if !initial_residual.is_finite() {
        return Err(ParkError::NonFiniteCg { trace });
    }
    let threshold = tol * initial_residual;
    if initial_residual <= threshold {
        // b = 0 (or already within tolerance): zero iterate, zero iterations.
        trace.converged = true;
        return Ok((x, trace));
    }
    let mut p = r.clone();
    // Largest ||Ap|| / ||p|| seen so far: a running lower bound on ||A||
    // that scales the indefiniteness test below.
    let mut op_scale = 0.0_f64;
    for _ in 0..t_max {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !pap.is_finite() {
            return Err(ParkError::NonFiniteCg { trace });
        }
        let p_sq = p.dot(&p);
        op_scale = op_scale.max((ap.dot(&ap).sqrt() / p_sq.sqrt().max(f64::MIN_POSITIVE)).max(0.0));
        if pap <= 0.0 {
            // For a positive semidefinite operator, non-positive curvature
            // means the Krylov space is numerically exhausted: the direction
            // carries only rounding noise and no further iteration can
            // improve the iterate, so stop and return it. Two signals
            // separate that from a genuinely indefinite operator (a caller
            // bug): the residual has already shrunk well below its start --
            // after real convergence a curvature defect can only touch the
            // solution at the residual's own scale -- or the violation is
            // quiet relative to where the iteration started (||A|| ||b||^2,
            // since the first direction is b itself; solve round-off through
            // ill-conditioned factors can push curvature noise orders above
            // machine precision, hence the wide margin). An indefiniteness
            // bug fails both: it appears while unconverged and at a size
            // comparable to the operator scale.
            let start_scale = op_scale * initial_residual * initial_residual;
            if rs.sqrt() <= 1e-3 * initial_residual || pap >= -1e-2 * start_scale {
                trace.converged = trace.final_residual() <= threshold;
                return Ok((x, trace));
            }
            return Err(ParkError::Numerical(format!(
                "cg: operator is not positive semidefinite (p.Ap = {pap:.3e} \
                 against starting scale {start_scale:.3e} at iteration {})",
                trace.iterations() + 1
            )));
        }
        let alpha = rs / pap;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        let rs_new = r.dot(&r);
        let rnorm = rs_new.sqrt();
        trace.residual_norms.push(rnorm);
        if !rnorm.is_finite() {
            return Err(ParkError::NonFiniteCg { trace });
        }
        if rnorm <= threshold {
            trace.converged = true;
            return Ok((x, trace));
        }
        let beta = rs_new / rs;
        rs = rs_new;
        // p = r + beta p
        p.mapv_inplace(|v| v * beta);
        p += &r;
    }
    trace.converged = trace.final_residual() <= threshold;
    Ok((x, trace))
}

// ===== Small helpers ========================================================

/// Neumaier-compensated sum; used where spec tolerances (1e-12 relative on
/// risk identities) leave no room for naive-summation drift.
pub(crate) fn stable_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}


#[cfg(test)]
pub(crate) fn fro_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

//! Per-cell estimators: exact kernel ridge regression, exact Nystrom
//! regression over a sampled center set, and the sketched
//! preconditioned-conjugate-gradient solver used for production training.
//!
//! The preconditioner realizes B with B Bt = ((n/m) Km^2 + lambda n Km)^-1
//! through two Cholesky factors: L Lt = Km (+ jitter) and
//! C Ct = (1/m) Lt L + lambda I, giving B = (1/sqrt(n)) L^-t C^-t. Applying
//! B or Bt is two triangular solves; B is never formed densely.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ParkError, Result};
use crate::kernel::{kernel_expansion, rows_of, KernelSpec};
use crate::numerics::{cg, cholesky, sym_eig, tri_solve_vec, CholFactor, JitterPolicy, TriSide};
use crate::parallel;

/// Default number of data rows per streamed kernel-block product.
pub const DEFAULT_BLOCK_ROWS: usize = 4096;

/// Centers sampled uniformly without replacement from one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromSet {
    /// Positions into the cell's point list, ascending and distinct.
    pub center_indices: Vec<usize>,
    /// The center coordinates, one row per center.
    pub points: Array2<f64>,
    /// True when the requested center count exceeded the cell size and was
    /// clamped down to it.
    pub clamped: bool,
}

impl NystromSet {
    pub fn size(&self) -> usize {
        self.center_indices.len()
    }
}

/// Uniform without-replacement center sample for one cell. `cell_indices`
/// holds the cell's rows in `x`; the returned positions index into that
/// list. Requests larger than the cell are clamped (and flagged).
pub fn sample_nystrom(
    x: &Array2<f64>,
    cell_indices: &[usize],
    m: usize,
    seed: u64,
) -> Result<NystromSet> {
    let n_q = cell_indices.len();
    if n_q == 0 {
        return Err(ParkError::Input("cannot sample centers from an empty cell".into()));
    }
    if m == 0 {
        return Err(ParkError::Input("center count must be >= 1".into()));
    }
    if let Some(&bad) = cell_indices.iter().find(|&&i| i >= x.nrows()) {
        return Err(ParkError::Input(format!(
            "cell index {bad} out of range for {} points",
            x.nrows()
        )));
    }
    let clamped = m > n_q;
    let m_eff = m.min(n_q);
    let positions = if m_eff == n_q {
        (0..n_q).collect::<Vec<_>>()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = rand::seq::index::sample(&mut rng, n_q, m_eff).into_vec();
        p.sort_unstable();
        p
    };
    let d = x.ncols();
    let mut pts = Vec::with_capacity(m_eff * d);
    for &p in &positions {
        pts.extend(x.row(cell_indices[p]).iter().copied());
    }
    let points = Array2::from_shape_vec((m_eff, d), pts)
        .expect("center matrix shape follows from construction");
    Ok(NystromSet { center_indices: positions, points, clamped })
}

/// Sketched preconditioner for the normal equations of the local
/// least-squares problem.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    kernel_factor: CholFactor,
    regularized_factor: CholFactor,
    n_q: usize,
    m_q: usize,
    lambda: f64,
}

impl Preconditioner {
    pub fn size(&self) -> usize {
        self.m_q
    }

    pub fn cell_size(&self) -> usize {
        self.n_q
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Jitter added to the kernel block before its factorization.
    pub fn jitter(&self) -> f64 {
        self.kernel_factor.jitter
    }

    /// v -> B v = (1/sqrt(n)) L^-t (C^-t v).
    pub fn apply(&self, v: &Array1<f64>) -> Result<Array1<f64>> {
        let w = tri_solve_vec(self.regularized_factor.lower(), v, TriSide::LowerTransposed)?;
        let mut u = tri_solve_vec(self.kernel_factor.lower(), &w, TriSide::LowerTransposed)?;
        u.mapv_inplace(|t| t / (self.n_q as f64).sqrt());
        Ok(u)
    }

    /// v -> Bt v = (1/sqrt(n)) C^-1 (L^-1 v).
    pub fn apply_transpose(&self, v: &Array1<f64>) -> Result<Array1<f64>> {
        let z = tri_solve_vec(self.kernel_factor.lower(), v, TriSide::Lower)?;
        let mut y = tri_solve_vec(self.regularized_factor.lower(), &z, TriSide::Lower)?;
        y.mapv_inplace(|t| t / (self.n_q as f64).sqrt());
        Ok(y)
    }
}

/// Number of centers at or below which every build runs the definitional
/// probe `B Bt ((n/m) Km^2 + lambda n Km) v = v` on random vectors.
const PROBE_LIMIT: usize = 200;
const PROBE_VECTORS: usize = 3;
/// Floor of the probe tolerance; the effective tolerance grows with the
/// measured conditioning of the kernel factor, since triangular solves
/// through a near-singular factor amplify roundoff no matter how correct
/// the construction is. Construction bugs produce O(1) probe errors and
/// are caught regardless.
const PROBE_TOL: f64 = 1e-6;
const PROBE_COND_SLACK: f64 = 256.0;
/// Above this measured conditioning the identity drowns in roundoff even
/// for a correct build, so the probe certifies nothing and is skipped.
/// The preconditioner stays valid regardless of conditioning: it is
/// symmetric positive definite by construction and only shapes the
/// iteration, never the solution the iteration converges to.
const PROBE_COND_LIMIT: f64 = 1e10;

/// Build the two-factor preconditioner from the m x m center Gram block.
pub fn build_preconditioner(
    k_m: &Array2<f64>,
    n_q: usize,
    m_q: usize,
    lambda: f64,
) -> Result<Preconditioner> {
    if !(lambda > 0.0) {
        return Err(ParkError::Input(format!("lambda must be positive, got {lambda}")));
    }
    if k_m.nrows() != m_q || k_m.ncols() != m_q {
        return Err(ParkError::Input(format!(
            "center Gram block is {}x{} but m = {m_q}",
            k_m.nrows(),
            k_m.ncols()
        )));
    }
    if n_q < m_q || m_q == 0 {
        return Err(ParkError::Input(format!(
            "need 1 <= m <= n, got m = {m_q}, n = {n_q}"
        )));
    }
    let kernel_factor = cholesky(k_m, &JitterPolicy::default()).map_err(|e| match e {
        ParkError::Numerical(msg) => {
            ParkError::Numerical(format!("kernel-block factorization failed: {msg}"))
        }
        other => other,
    })?;
    let l = kernel_factor.lower();
    let mut inner = l.t().dot(l);
    inner.mapv_inplace(|v| v / m_q as f64);
    for i in 0..m_q {
        inner[[i, i]] += lambda;
    }
    let regularized_factor = cholesky(&inner, &JitterPolicy::default()).map_err(|e| match e {
        ParkError::Numerical(msg) => {
            ParkError::Numerical(format!("regularized factorization failed: {msg}"))
        }
        other => other,
    })?;
    let pre = Preconditioner { kernel_factor, regularized_factor, n_q, m_q, lambda };
    if m_q <= PROBE_LIMIT {
        probe_preconditioner(&pre)?;
    }
    Ok(pre)
}

/// Verify B Bt M = I (M the normal-equation matrix of the factored kernel
/// block) on a few fixed random probes; exact in exact arithmetic, so any
/// sizable residual signals a broken solve pipeline or severe conditioning.
fn probe_preconditioner(pre: &Preconditioner) -> Result<()> {
    let l = pre.kernel_factor.lower();
    let k_tilde = l.dot(&l.t());
    let (n, m) = (pre.n_q as f64, pre.m_q as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(0x70726f6265);
    let probes: Vec<Array1<f64>> = (0..PROBE_VECTORS)
        .map(|_| {
            Array1::from_shape_fn(pre.m_q, |_| rand::Rng::random_range(&mut rng, -1.0..1.0))
        })
        .collect();
    // cond(K) estimate in the style of the classic one-pass estimators:
    // ||L||_F^2 bounds ||K||_2 from above (within a factor m), and
    // ||K^-1 v|| / ||v|| on a random v sits within a small factor of
    // ||K^-1||_2. Erring large is the safe direction for a tolerance guard.
    let norm_upper = l.iter().map(|t| t * t).sum::<f64>();
    let mut inv_norm = 0.0_f64;
    for v in &probes {
        let solved = pre.kernel_factor.solve_vec(v)?;
        let ratio = solved.mapv(|t| t * t).sum().sqrt() / v.mapv(|t| t * t).sum().sqrt();
        inv_norm = inv_norm.max(ratio);
    }
    let cond_est = norm_upper * inv_norm;
    if cond_est > PROBE_COND_LIMIT {
        return Ok(());
    }
    let tol = PROBE_TOL.max(PROBE_COND_SLACK * f64::EPSILON * cond_est);
    for v in &probes {
        let kv = k_tilde.dot(v);
        let kkv = k_tilde.dot(&kv);
        let mv = kkv.mapv(|t| t * n / m) + kv.mapv(|t| t * pre.lambda * n);
        let out = pre.apply(&pre.apply_transpose(&mv)?)?;
        let err = (&out - v).mapv(|t| t * t).sum().sqrt();
        let scale = v.mapv(|t| t * t).sum().sqrt();
        if !(err <= tol * scale) {
            return Err(ParkError::Numerical(format!(
                "preconditioner probe failed: relative error {:.3e} (tolerance {:.3e})",
                err / scale,
                tol
            )));
        }
    }
    Ok(())
}

/// Exact kernel ridge regression: alpha = (K + lambda n I)^-1 y. The global
/// and per-cell reference solver.
pub fn exact_krr(
    x: &Array2<f64>,
    y: &Array1<f64>,
    spec: &KernelSpec,
    lambda: f64,
) -> Result<Array1<f64>> {
    let n = x.nrows();
    if n == 0 {
        return Err(ParkError::Input("need at least one training point".into()));
    }
    if y.len() != n {
        return Err(ParkError::Input(format!(
            "{} points but {} labels",
            n,
            y.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(ParkError::Input(format!("lambda must be positive, got {lambda}")));
    }
    let mut k = spec.gram(x, x)?;
    let ridge = lambda * n as f64;
    for i in 0..n {
        k[[i, i]] += ridge;
    }
    let f = cholesky(&k, &JitterPolicy::default())?;
    f.solve_vec(y)
}

/// Exact Nystrom regression: solve the normal equations
/// (Knm^t Knm + lambda n Km) alpha = Knm^t y, falling back to a
/// minimum-norm eigendecomposition solve if the factorization fails.
pub fn exact_nystrom(
    x_q: &Array2<f64>,
    y_q: &Array1<f64>,
    centers: &NystromSet,
    spec: &KernelSpec,
    lambda: f64,
) -> Result<Array1<f64>> {
    let n_q = x_q.nrows();
    if n_q == 0 || y_q.len() != n_q {
        return Err(ParkError::Input(format!(
            "{} points but {} labels",
            n_q,
            y_q.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(ParkError::Input(format!("lambda must be positive, got {lambda}")));
    }
    let knm = spec.gram(x_q, &centers.points)?;
    let km = spec.gram(&centers.points, &centers.points)?;
    let gram = knm.t().dot(&knm);
    let mut normal = &gram + &km.mapv(|v| v * lambda * n_q as f64);
    // symmetrize away round-off before factoring
    let nt = normal.t().to_owned();
    normal.zip_mut_with(&nt, |a, &b| *a = 0.5 * (*a + b));
    let rhs = knm.t().dot(y_q);
    let alpha = match cholesky(&normal, &JitterPolicy::default()) {
        Ok(f) => f.solve_vec(&rhs)?,
        Err(ParkError::Numerical(_)) => {
            // minimum-norm solution through the eigendecomposition
            let (eigs, vecs) = sym_eig(&normal)?;
            let cutoff = eigs.iter().fold(0.0f64, |a, &b| a.max(b.abs())) * 1e-12;
            let proj = vecs.t().dot(&rhs);
            let scaled = Array1::from_shape_fn(proj.len(), |i| {
                if eigs[i] > cutoff {
                    proj[i] / eigs[i]
                } else {
                    0.0
                }
            });
            vecs.dot(&scaled)
        }
        Err(other) => return Err(other),
    };
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(ParkError::Numerical("non-finite coefficients in normal-equation solve".into()));
    }
    Ok(alpha)
}

/// A trained per-cell model: centers plus expansion coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub nystrom: NystromSet,
    /// Expansion coefficients over the centers (already mapped out of the
    /// preconditioned coordinates).
    pub coefficients: Array1<f64>,
    pub lambda: f64,
    /// Conjugate-gradient iterations actually run.
    pub iterations: usize,
}

impl LocalModel {
    /// Prediction at a single point: sum_i alpha_i K(center_i, x). The
    /// accumulation order matches the batch path exactly.
    pub fn predict_one(&self, spec: &KernelSpec, x: &[f64]) -> Result<f64> {
        let d = self.nystrom.points.ncols();
        if x.len() != d {
            return Err(ParkError::Input(format!(
                "query has dimension {}, model expects {d}",
                x.len()
            )));
        }
        rows_of(&self.nystrom.points)?;
        Ok(self.predict_unchecked(spec, x))
    }

    /// Accumulation core shared by every prediction path; callers validate
    /// the query dimension first.
    pub(crate) fn predict_unchecked(&self, spec: &KernelSpec, x: &[f64]) -> f64 {
        let d = self.nystrom.points.ncols();
        let centers = self
            .nystrom
            .points
            .as_slice()
            .expect("center matrix is owned row-major by construction");
        let mut acc = 0.0;
        for (j, &aj) in self.coefficients.iter().enumerate() {
            acc += aj * spec.eval_raw(&centers[j * d..(j + 1) * d], x);
        }
        acc
    }

    pub fn predict_batch(&self, spec: &KernelSpec, x: &Array2<f64>) -> Result<Array1<f64>> {
        kernel_expansion(spec, &self.nystrom.points, &self.coefficients, x)
    }
}

/// Prediction of a trained local model at one point.
pub fn local_predict(model: &LocalModel, spec: &KernelSpec, x: &[f64]) -> Result<f64> {
    model.predict_one(spec, x)
}

/// Stream `f` over row blocks of the implicit n x m kernel matrix between
/// `x` rows and `centers` rows. The block buffer is filled in parallel
/// (one row per index); blocks run sequentially in row order.
fn stream_kernel_blocks<F>(
    spec: &KernelSpec,
    x: &Array2<f64>,
    centers: &Array2<f64>,
    block_rows: usize,
    mut f: F,
) -> Result<()>
where
    F: FnMut(ArrayView2<'_, f64>, std::ops::Range<usize>),
{
    let n = x.nrows();
    let m = centers.nrows();
    let d = x.ncols();
    let xs = rows_of(x)?;
    let cs = rows_of(centers)?;
    let block = block_rows.max(1).min(n);
    let mut buf = vec![0.0f64; block * m];
    let mut start = 0usize;
    while start < n {
        let end = (start + block).min(n);
        let rows = end - start;
        let slice = &mut buf[..rows * m];
        parallel::for_each_chunk(slice, m, |i, out| {
            let xr = &xs[(start + i) * d..(start + i + 1) * d];
            for (j, o) in out.iter_mut().enumerate() {
                *o = spec.eval_raw(xr, &cs[j * d..(j + 1) * d]);
            }
        });
        let view = ArrayView2::from_shape((rows, m), slice)
            .expect("block buffer shape follows from construction");
        f(view, start..end);
        start = end;
    }
    Ok(())
}

/// Train a local model by running `t` conjugate-gradient iterations on the
/// preconditioned normal equations of
///   L(beta) = (1/n) |Knm B beta - y|^2 + lambda beta^t (Bt Km B) beta,
/// i.e. operator beta -> Bt ((1/n) Knm^t Knm + lambda Km) B beta with
/// right-hand side Bt Knm^t y / n. Kernel-matrix products are streamed in
/// row blocks so memory stays O(m^2 + block m). Coefficients are returned
/// in expansion form, alpha = B beta.
#[allow(clippy::too_many_arguments)]
pub fn pcg_train(
    x_q: &Array2<f64>,
    y_q: &Array1<f64>,
    centers: NystromSet,
    precond: &Preconditioner,
    spec: &KernelSpec,
    lambda: f64,
    t: usize,
    block_rows: usize,
) -> Result<LocalModel> {
    let n_q = x_q.nrows();
    let m_q = centers.size();
    if y_q.len() != n_q {
        return Err(ParkError::Input(format!(
            "{} points but {} labels",
            n_q,
            y_q.len()
        )));
    }
    if precond.size() != m_q || precond.cell_size() != n_q {
        return Err(ParkError::Input(format!(
            "preconditioner built for m = {}, n = {} but got m = {m_q}, n = {n_q}",
            precond.size(),
            precond.cell_size()
        )));
    }
    if precond.lambda() != lambda {
        return Err(ParkError::Input(format!(
            "preconditioner lambda {} does not match solver lambda {lambda}",
            precond.lambda()
        )));
    }
    if t == 0 {
        return Err(ParkError::Input("iteration budget must be >= 1".into()));
    }
    let km = spec.gram(&centers.points, &centers.points)?;
    let nf = n_q as f64;

    // right-hand side: Bt (Knm^t y / n)
    let mut kty = Array1::<f64>::zeros(m_q);
    stream_kernel_blocks(spec, x_q, &centers.points, block_rows, |view, range| {
        let yb = y_q.slice(ndarray::s![range.start..range.end]);
        kty += &view.t().dot(&yb);
    })?;
    kty.mapv_inplace(|v| v / nf);
    let b = precond.apply_transpose(&kty)?;

    // The triangular factors were validated at build time, so the solves
    // inside the operator cannot fail on well-formed state; any error is
    // still captured and surfaced after the iteration instead of panicking.
    let mut op_failure: Option<ParkError> = None;
    let operator = |beta: &Array1<f64>| -> Array1<f64> {
        let inner = || -> Result<Array1<f64>> {
            let u = precond.apply(beta)?;
            let mut ktku = Array1::<f64>::zeros(m_q);
            stream_kernel_blocks(spec, x_q, &centers.points, block_rows, |view, _| {
                let t1 = view.dot(&u);
                ktku += &view.t().dot(&t1);
            })?;
            let v1 = ktku.mapv(|v| v / nf) + km.dot(&u).mapv(|v| v * lambda);
            precond.apply_transpose(&v1)
        };
        match inner() {
            Ok(v) => v,
            Err(e) => {
                op_failure.get_or_insert(e);
                Array1::zeros(m_q)
            }
        }
    };
    let cg_result = cg(operator, &b, t, 0.0);
    if let Some(e) = op_failure {
        return Err(e);
    }
    let (beta, trace) = cg_result?;
    let alpha = precond.apply(&beta)?;
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(ParkError::Numerical("non-finite coefficients after preconditioner map".into()));
    }
    Ok(LocalModel {
        nystrom: centers,
        coefficients: alpha,
        lambda,
        iterations: trace.iterations(),
    })
}

/// Training objective of the center expansion:
///   (1/n) |Knm alpha - y|^2 + lambda alpha^t Km alpha.
pub fn nystrom_objective(
    x_q: &Array2<f64>,
    y_q: &Array1<f64>,
    centers: &NystromSet,
    spec: &KernelSpec,
    lambda: f64,
    alpha: &ArrayView1<'_, f64>,
    block_rows: usize,
) -> Result<f64> {
    let n_q = x_q.nrows();
    if y_q.len() != n_q || alpha.len() != centers.size() {
        return Err(ParkError::Input("objective inputs have mismatched sizes".into()));
    }
    let mut sq = 0.0f64;
    let alpha_owned = alpha.to_owned();
    stream_kernel_blocks(spec, x_q, &centers.points, block_rows, |view, range| {
        let pred = view.dot(&alpha_owned);
        for (i, r) in range.enumerate() {
            let diff = pred[i] - y_q[r];
            sq += diff * diff;
        }
    })?;
    let km = spec.gram(&centers.points, &centers.points)?;
    Ok(sq / n_q as f64 + lambda * alpha_owned.dot(&km.dot(&alpha_owned)))
}

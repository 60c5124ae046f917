//! Kernel functions, Gram assembly, and the feature-space distance used for
//! Voronoi assignment.
//!
//! Conventions (the toolkit commits to these and documents them rather than
//! leaving them implicit):
//!
//! * gaussian: `exp(-||x - x'||^2 / (2 sigma^2))`
//! * laplacian: `exp(-||x - x'||_1 / sigma)`
//! * linear: plain dot product (degenerate-overlap stress case for the
//!   subspace diagnostics; bandwidth is ignored and stored as 1)
//!
//! Gram assembly parallelises over output rows; each entry is produced by one
//! closure call with a fixed summation order, so thread count never changes
//! results. All matrices are row-major `ndarray::Array2<f64>`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{ParkError, Result};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Laplacian,
    Linear,
}

impl KernelFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Laplacian => "laplacian",
            KernelFamily::Linear => "linear",
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = ParkError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "laplacian" => Ok(KernelFamily::Laplacian),
            "linear" => Ok(KernelFamily::Linear),
            other => Err(ParkError::Input(format!(
                "unknown kernel family {other:?} (expected gaussian, laplacian, or linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Length-scale for gaussian/laplacian; stored as 1.0 for linear.
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        match family {
            KernelFamily::Gaussian | KernelFamily::Laplacian => {
                if !bandwidth.is_finite() || bandwidth <= 0.0 {
                    return Err(ParkError::Input(format!(
                        "kernel bandwidth must be a positive finite number, got {bandwidth}"
                    )));
                }
                Ok(KernelSpec { family, bandwidth })
            }
            // Bandwidth is meaningless for the linear kernel; normalize it so
            // two linear specs always compare and serialize identically.
            KernelFamily::Linear => Ok(KernelSpec { family, bandwidth: 1.0 }),
        }
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, bandwidth)
    }

    pub fn laplacian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Laplacian, bandwidth)
    }

    pub fn linear() -> Self {
        KernelSpec { family: KernelFamily::Linear, bandwidth: 1.0 }
    }

    /// K(x, x'). Symmetric in its arguments.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() || x.is_empty() {
            return Err(ParkError::Input(format!(
                "kernel arguments must share a dimension >= 1, got {} and {}",
                x.len(),
                y.len()
            )));
        }
        Ok(self.eval_raw(x, y))
    }

    /// Entry evaluation without the shape check; callers validate once per
    /// matrix, not once per entry.
    #[inline]
    pub(crate) fn eval_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let mut s = 0.0;
                for (a, b) in x.iter().zip(y) {
                    let d = a - b;
                    s += d * d;
                }
                (-s / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
            KernelFamily::Laplacian => {
                let mut s = 0.0;
                for (a, b) in x.iter().zip(y) {
                    s += (a - b).abs();
                }
                (-s / self.bandwidth).exp()
            }
            KernelFamily::Linear => {
                let mut s = 0.0;
                for (a, b) in x.iter().zip(y) {
                    s += a * b;
                }
                s
            }
        }
    }

    /// Squared distance between feature maps:
    /// `K(x,x) + K(c,c) - 2 K(x,c)`, clamped below at 0 (cancellation can
    /// produce tiny negatives when x is essentially c).
    pub fn rkhs_dist_sq(&self, x: &[f64], c: &[f64]) -> Result<f64> {
        if x.len() != c.len() || x.is_empty() {
            return Err(ParkError::Input(format!(
                "distance arguments must share a dimension >= 1, got {} and {}",
                x.len(),
                c.len()
            )));
        }
        Ok(self.rkhs_dist_sq_raw(x, c))
    }

    #[inline]
    pub(crate) fn rkhs_dist_sq_raw(&self, x: &[f64], c: &[f64]) -> f64 {
        let d = self.eval_raw(x, x) + self.eval_raw(c, c) - 2.0 * self.eval_raw(x, c);
        d.max(0.0)
    }

    /// Full Gram matrix: entry (i, j) = K(X_i, Y_j).
    pub fn gram(&self, x: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != y.ncols() {
            return Err(ParkError::Input(format!(
                "gram operands must share a dimension, got {} and {}",
                x.ncols(),
                y.ncols()
            )));
        }
        if x.ncols() == 0 {
            return Err(ParkError::Input("gram operands must have dimension >= 1".into()));
        }
        let (n, m, d) = (x.nrows(), y.nrows(), x.ncols());
        let xs = rows_of(x)?;
        let ys = rows_of(y)?;
        let mut data = vec![0.0; n * m];
        parallel::for_each_chunk(&mut data, m.max(1), |i, out| {
            let xi = &xs[i * d..(i + 1) * d];
            for (j, o) in out.iter_mut().enumerate() {
                *o = self.eval_raw(xi, &ys[j * d..(j + 1) * d]);
            }
        });
        Ok(Array2::from_shape_vec((n, m), data).expect("shape matches buffer"))
    }

    /// Diagonal of the self-Gram, i.e. K(x_i, x_i) per row.
    pub fn gram_diag(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let d = x.ncols();
        if d == 0 {
            return Err(ParkError::Input("points must have dimension >= 1".into()));
        }
        let xs = rows_of(x)?;
        let diag = parallel::map_indexed(x.nrows(), |i| {
            let xi = &xs[i * d..(i + 1) * d];
            self.eval_raw(xi, xi)
        });
        Ok(Array1::from_vec(diag))
    }
}

/// Largest self-kernel value over the rows of `x` (1 for gaussian/laplacian;
/// data-dependent for linear). Used by the diagnostics as the kernel bound.
pub fn kappa_sq(spec: &KernelSpec, x: &Array2<f64>) -> Result<f64> {
    let diag = spec.gram_diag(x)?;
    Ok(diag.iter().cloned().fold(0.0f64, f64::max))
}

/// View a row-major matrix as one flat slice; rejects exotic layouts once so
/// the hot loops can slice rows without per-access checks.
pub(crate) fn rows_of(x: &Array2<f64>) -> Result<&[f64]> {
    x.as_slice()
        .ok_or_else(|| ParkError::Input("matrix must be contiguous row-major".into()))
}

/// Borrow row `i` of a row-major matrix as a slice.
#[cfg(test)]
pub(crate) fn row(x: &Array2<f64>, i: usize) -> &[f64] {
    let d = x.ncols();
    &x.as_slice().expect("row-major layout")[i * d..(i + 1) * d]
}

/// Predictions of a kernel expansion `f(x) = sum_j alpha_j K(s_j, x)` at each
/// row of `queries`. Parallel over query rows; the inner sum runs in support
/// order, so results are deterministic.
pub fn kernel_expansion(
    spec: &KernelSpec,
    support: &Array2<f64>,
    alpha: &Array1<f64>,
    queries: &Array2<f64>,
) -> Result<Array1<f64>> {
    if support.nrows() != alpha.len() {
        return Err(ParkError::Input(format!(
            "expansion has {} support points but {} coefficients",
            support.nrows(),
            alpha.len()
        )));
    }
    if support.ncols() != queries.ncols() {
        return Err(ParkError::Input(format!(
            "support dimension {} does not match query dimension {}",
            support.ncols(),
            queries.ncols()
        )));
    }
    let d = support.ncols();
    let ss = rows_of(support)?;
    let qs = rows_of(queries)?;
    let a = alpha.as_slice().ok_or_else(|| {
        ParkError::Input("coefficient vector must be contiguous".into())
    })?;
    let out = parallel::map_indexed(queries.nrows(), |i| {
        let q = &qs[i * d..(i + 1) * d];
        let mut acc = 0.0;
        for (j, &aj) in a.iter().enumerate() {
            acc += aj * spec.eval_raw(&ss[j * d..(j + 1) * d], q);
        }
        acc
    });
    Ok(Array1::from_vec(out))
}

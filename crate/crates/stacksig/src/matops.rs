//! Dense symmetric-matrix numerics shared by every other module: eigen
//! decompositions, PSD square roots, Moore-Penrose pseudo-inverses,
//! idempotent rounding, and projection onto the PSD cone.
//!
//! All routines go through a single symmetric eigendecomposition so the
//! accuracy of everything downstream reduces to the accuracy of one
//! primitive.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative clamp for "PSD up to solver noise" inputs: eigenvalues in
/// `[-PSD_CLAMP_RTOL * ||M||_2, 0)` are treated as zero.
pub const PSD_CLAMP_RTOL: f64 = 1e-8;

/// Relative cutoff below which eigenvalues are treated as zero in the
/// pseudo-inverse.
pub const PINV_RTOL: f64 = 1e-10;

/// Eigenvalues of an approximate projector inside this band make the
/// 0/1 rounding ambiguous.
pub const AMBIGUOUS_BAND: (f64, f64) = (0.35, 0.65);

/// A square real symmetric matrix with finite entries.
///
/// Construction symmetrizes `(M + M') / 2`, so the exact-symmetry invariant
/// holds by representation rather than by discipline.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes and validates a square matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel(
                "matrix has non-finite entries".to_string(),
            ));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix(sym))
    }

    /// Symmetrizes without the finiteness check; for internal expressions
    /// that are finite by construction.
    pub(crate) fn symmetrize(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        let sym = (&m + m.transpose()) * 0.5;
        SymMatrix(sym)
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Congruence transform `A * M * A'`, symmetric by construction.
    pub fn congruence(&self, a: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrize(a * &self.0 * a.transpose())
    }

    /// Sorted symmetric eigendecomposition.
    pub fn eigen(&self) -> EigenDecomp {
        EigenDecomp::new(self)
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().values[0]
    }

    /// Spectral norm (largest absolute eigenvalue).
    pub fn spectral_norm(&self) -> f64 {
        let e = self.eigen();
        e.values
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

impl std::fmt::Display for SymMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending and
/// eigenvectors orthonormal in the matching column order.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenDecomp {
    pub fn new(m: &SymMatrix) -> Self {
        let se = m.0.clone().symmetric_eigen();
        let n = se.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &se.eigenvectors.column(src));
        }
        EigenDecomp { values, vectors }
    }

    /// Rebuilds `Q f(lambda) Q'`.
    pub fn recompose_with<F: Fn(f64) -> f64>(&self, f: F) -> SymMatrix {
        let mapped = DVector::from_iterator(self.values.len(), self.values.iter().map(|&v| f(v)));
        let scaled = &self.vectors * DMatrix::from_diagonal(&mapped);
        SymMatrix::symmetrize(scaled * self.vectors.transpose())
    }
}

/// Symmetric PSD square root `R` with `R * R = M`.
///
/// Eigenvalues in `[-PSD_CLAMP_RTOL * ||M||_2, 0)` are clamped to zero;
/// anything lower is a genuine PSD violation.
pub fn psd_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = m.eigen();
    let spectral = eig.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let threshold = -PSD_CLAMP_RTOL * spectral;
    let min_eig = eig.values[0];
    if min_eig < threshold {
        return Err(Error::NotPsd { min_eig, threshold });
    }
    Ok(eig.recompose_with(|v| v.max(0.0).sqrt()))
}

/// `M^{-1/2}` through the same clamped eigenbasis; requires `M` positive
/// definite at working precision.
pub fn psd_inv_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = m.eigen();
    let min_eig = eig.values[0];
    if min_eig <= 0.0 {
        return Err(Error::NotPd {
            context: "inverse square root",
            min_eig,
        });
    }
    Ok(eig.recompose_with(|v| 1.0 / v.sqrt()))
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
///
/// Eigenvalues below `PINV_RTOL * lambda_max` in magnitude map to zero, the
/// rest to their reciprocal. The zero matrix maps to the zero matrix.
pub fn pinv(m: &SymMatrix) -> SymMatrix {
    let eig = m.eigen();
    let lambda_max = eig.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let cutoff = PINV_RTOL * lambda_max;
    eig.recompose_with(|v| if v.abs() <= cutoff { 0.0 } else { 1.0 / v })
}

/// Result of rounding an approximate projector onto the idempotent manifold.
#[derive(Debug, Clone)]
pub struct IdempotentRounding {
    /// The rounded symmetric idempotent.
    pub matrix: SymMatrix,
    /// `||P^2 - P||_F` of the rounded output.
    pub residual: f64,
    /// Input eigenvalues inside the ambiguous band `[0.35, 0.65]`; non-empty
    /// means the SDP solution may not be an extreme point.
    pub ambiguous: Vec<f64>,
    /// Number of eigenvalues rounded to one.
    pub rank: usize,
}

impl IdempotentRounding {
    pub fn is_ambiguous(&self) -> bool {
        !self.ambiguous.is_empty()
    }
}

/// Rounds eigenvalues to `{0, 1}` (threshold 0.5, ties to 1), keeping the
/// eigenvectors. Eigenvalues inside `[0.35, 0.65]` are reported as an
/// ambiguity diagnostic rather than an error.
pub fn nearest_idempotent(m: &SymMatrix) -> IdempotentRounding {
    let eig = m.eigen();
    let ambiguous: Vec<f64> = eig
        .values
        .iter()
        .copied()
        .filter(|&v| (AMBIGUOUS_BAND.0..=AMBIGUOUS_BAND.1).contains(&v))
        .collect();
    let rank = eig.values.iter().filter(|&&v| v >= 0.5).count();
    let matrix = eig.recompose_with(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    let residual = (matrix.as_matrix() * matrix.as_matrix() - matrix.as_matrix()).norm();
    IdempotentRounding {
        matrix,
        residual,
        ambiguous,
        rank,
    }
}

/// `tr{A B}` for symmetric `A`, `B` of equal dimension.
pub fn trace_dot(a: &SymMatrix, b: &SymMatrix) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.as_matrix()
        .iter()
        .zip(b.as_matrix().iter())
        .map(|(x, y)| x * y)
        .sum()
}

/// Frobenius-nearest PSD matrix: negative eigenvalues clipped to zero.
pub fn psd_project(m: &SymMatrix) -> SymMatrix {
    let eig = m.eigen();
    if eig.values[0] >= 0.0 {
        return m.clone();
    }
    eig.recompose_with(|v| v.max(0.0))
}

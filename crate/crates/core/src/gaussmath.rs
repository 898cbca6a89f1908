//! Small dense-matrix utilities with explicit handling of symmetric
//! positive-(semi)definite matrices.
//!
//! Every covariance produced by this crate goes through [`symmetrize`];
//! residual covariances from statistical linearization additionally go
//! through [`psd_clip`]. Solves against positive definite matrices use
//! [`spd_factorize`], which applies a jitter ladder before giving up,
//! and never form an explicit inverse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// A square matrix that is symmetric by construction.
///
/// The wrapped matrix satisfies `m[(i, j)] == m[(j, i)]` bitwise; all
/// constructors enforce this by averaging with the transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// All-zero symmetric matrix.
    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    /// Identity scaled by `s`.
    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        SymMatrix(DMatrix::identity(dim, dim) * s)
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    /// Build from a diagonal.
    pub fn from_diagonal(diag: &DVector<f64>) -> Self {
        SymMatrix(DMatrix::from_diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Smallest eigenvalue, from a symmetric eigendecomposition.
    pub fn min_eigenvalue(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Symmetric part `(m + mᵀ)/2` of a square matrix.
///
/// Errors if `m` is not square. The result is bitwise symmetric because
/// `(a + b)/2` and `(b + a)/2` round identically.
pub fn symmetrize(m: &DMatrix<f64>) -> Result<SymMatrix> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            context: "symmetrize",
            detail: format!("expected square matrix, got {}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(SymMatrix((m + m.transpose()) * 0.5))
}

/// Cholesky factorization of a symmetric matrix, with the jitter
/// actually added to the diagonal to make it succeed.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Solve `a · X = b` for a matrix right-hand side.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Solve `a · x = b` for a vector right-hand side.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Lower-triangular Cholesky factor `L` with `a + jitter·I = L·Lᵀ`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Diagonal jitter that was required, 0 when the plain factorization
    /// succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }
}

/// Factorize a symmetric positive definite matrix.
///
/// Attempts a plain Cholesky first, then retries with diagonal jitter
/// `1e-12 · trace(a)/dim`, escalating tenfold up to `1e-6 · trace(a)/dim`
/// before failing with a singular-matrix error.
pub fn spd_factorize(a: &SymMatrix) -> Result<SpdFactor> {
    let dim = a.dim();
    if dim == 0 {
        return Err(Error::Dimension {
            context: "spd_factorize",
            detail: "empty matrix".to_string(),
        });
    }
    if let Some(chol) = Cholesky::new(a.0.clone()) {
        return Ok(SpdFactor { chol, jitter: 0.0 });
    }
    let scale = a.0.trace().max(0.0) / dim as f64;
    let mut level = 1e-12;
    while level <= 1e-6 {
        let jitter = level * scale;
        let jittered = &a.0 + DMatrix::identity(dim, dim) * jitter;
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(SpdFactor { chol, jitter });
        }
        level *= 10.0;
    }
    Err(Error::Singular {
        context: "spd_factorize",
        step: None,
    })
}

/// Solve `a · X = b` through a symmetric factorization (never an
/// explicit inverse). `a` must be positive definite up to the jitter
/// ladder of [`spd_factorize`].
pub fn spd_solve(a: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.dim() != b.nrows() {
        return Err(Error::Dimension {
            context: "spd_solve",
            detail: format!(
                "lhs is {}x{} but rhs has {} rows",
                a.dim(),
                a.dim(),
                b.nrows()
            ),
        });
    }
    Ok(spd_factorize(a)?.solve_mat(b))
}

/// Clip negative eigenvalues to zero.
///
/// Inputs that are already positive semidefinite are returned unchanged.
pub fn psd_clip(m: &SymMatrix) -> SymMatrix {
    let eig = m.0.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return m.clone();
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let recomposed =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    // recomposition is symmetric only up to roundoff
    symmetrize(&recomposed).expect("recomposed matrix is square")
}

/// Symmetric square root with negative eigenvalues clamped to zero,
/// so that `s·sᵀ ≈ m` for PSD `m`. Unlike Cholesky this accepts
/// singular matrices (including zero), which is what sampling from a
/// degenerate prior needs.
pub fn psd_sqrt(m: &SymMatrix) -> DMatrix<f64> {
    let eig = m.0.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

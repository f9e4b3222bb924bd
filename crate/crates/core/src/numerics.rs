//! Dense symmetric linear algebra and closed-form Gaussian divergences.
//!
//! Everything here is a pure function of its inputs. Matrices are stored
//! column-major (`nalgebra::DMatrix`), which the Cholesky kernel exploits by
//! running its inner loops down contiguous columns.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default ridge strength for address solves.
pub const DEFAULT_LAMBDA: f64 = 0.35;

/// Relative pivot floor used to declare unregularized normal equations singular.
const SINGULAR_PIVOT_RTOL: f64 = 1e-12;

/// A square matrix that is exactly symmetric.
///
/// Construction averages the input with its transpose, so entries `(i, j)` and
/// `(j, i)` are bitwise equal afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn new(a: Matrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                context: "SymMatrix (square)",
                expected: a.nrows(),
                actual: a.ncols(),
            });
        }
        Ok(Self::symmetrized(a))
    }

    /// Wraps a matrix the caller guarantees to be exactly symmetric.
    pub(crate) fn from_symmetric(a: Matrix) -> Self {
        debug_assert!(a.nrows() == a.ncols());
        SymMatrix(a)
    }

    pub(crate) fn symmetrized(mut a: Matrix) -> Self {
        let n = a.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
                a[(i, j)] = avg;
                a[(j, i)] = avg;
            }
        }
        SymMatrix(a)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(Matrix::identity(dim, dim))
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        SymMatrix(Matrix::identity(dim, dim) * scale)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(Matrix::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn quad_form(&self, x: &Vector) -> f64 {
        x.dot(&(&self.0 * x))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// True when the smallest eigenvalue is at least `-rtol` times the largest
    /// eigenvalue magnitude.
    pub fn is_numerically_psd(&self, rtol: f64) -> bool {
        let ev = self.eigenvalues();
        match (ev.first(), ev.last()) {
            (Some(&lo), Some(&hi)) => lo >= -rtol * hi.abs().max(lo.abs()),
            _ => true,
        }
    }
}

impl TryFrom<Matrix> for SymMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        SymMatrix::new(m)
    }
}

impl From<SymMatrix> for Matrix {
    fn from(s: SymMatrix) -> Matrix {
        s.0
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: Matrix,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn reconstruct(&self) -> Matrix {
        &self.lower * self.lower.transpose()
    }

    /// `ln det A = 2 Σ ln L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L y = b` in place.
    fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for j in 0..n {
            let col = self.lower.column(j);
            b[j] /= col[j];
            let bj = b[j];
            for i in (j + 1)..n {
                b[i] -= col[i] * bj;
            }
        }
    }

    /// Solves `Lᵀ x = y` in place.
    fn backward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for j in (0..n).rev() {
            let col = self.lower.column(j);
            let mut acc = b[j];
            for i in (j + 1)..n {
                acc -= col[i] * b[i];
            }
            b[j] = acc / col[j];
        }
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &Vector) -> Vector {
        let mut y = b.clone();
        self.forward_in_place(y.as_mut_slice());
        y
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &Vector) -> Vector {
        let mut x = b.clone();
        self.forward_in_place(x.as_mut_slice());
        self.backward_in_place(x.as_mut_slice());
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            let slice = col.as_mut_slice();
            self.forward_in_place(slice);
            self.backward_in_place(slice);
        }
        x
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim();
        SymMatrix::symmetrized(self.solve_matrix(&Matrix::identity(n, n)))
    }
}

/// Right-looking column Cholesky. Fails at the first pivot `<= min_pivot`.
fn factorize(a: &Matrix, min_pivot: f64) -> std::result::Result<CholeskyFactor, (usize, f64)> {
    let n = a.nrows();
    let mut l = a.clone();
    for j in 0..n {
        let pivot = l[(j, j)];
        if !(pivot > min_pivot) {
            return Err((j, pivot));
        }
        let d = pivot.sqrt();
        {
            let mut col = l.column_mut(j);
            col[j] = d;
            for i in (j + 1)..n {
                col[i] /= d;
            }
        }
        // Trailing update on the lower triangle: A[i,p] -= L[i,j] L[p,j].
        for p in (j + 1)..n {
            let lpj = l[(p, j)];
            if lpj == 0.0 {
                continue;
            }
            let (src, mut dst) = l.columns_range_pair_mut(j, p);
            let src = src.column(0);
            let mut dst = dst.column_mut(0);
            for i in p..n {
                dst[i] -= src[i] * lpj;
            }
        }
    }
    for j in 1..n {
        for i in 0..j {
            l[(i, j)] = 0.0;
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Cholesky factorization of a symmetric positive definite matrix.
pub fn cholesky_spd(a: &SymMatrix) -> Result<CholeskyFactor> {
    factorize(a.as_matrix(), 0.0).map_err(|(index, pivot)| Error::NotPositiveDefinite { index, pivot })
}

/// Minimizes `‖M w − z‖² + λ‖w‖²` through the normal equations
/// `(MᵀM + λI) w = Mᵀz`.
///
/// With `lambda == 0` a pivot below `1e-12 · max diag(MᵀM)` is reported as
/// [`Error::SingularSystem`].
pub fn solve_regularized_ls(m: &Matrix, z: &Vector, lambda: f64) -> Result<Vector> {
    check_len("least-squares rhs", m.nrows(), z.len())?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let cols = m.ncols();
    // An explicit transpose lets the product go through the blocked GEMM
    // kernel; `tr_mul` computes one short dot product per entry.
    let mt = m.transpose();
    let mut gram = &mt * m;
    for i in 0..cols {
        gram[(i, i)] += lambda;
    }
    let rhs = &mt * z;
    let floor = if lambda == 0.0 {
        let scale = gram.diagonal().iter().fold(0.0_f64, |acc, &d| acc.max(d));
        SINGULAR_PIVOT_RTOL * scale
    } else {
        0.0
    };
    match factorize(&gram, floor) {
        Ok(factor) => Ok(factor.solve(&rhs)),
        Err(_) if lambda == 0.0 => Err(Error::SingularSystem),
        Err((index, pivot)) => Err(Error::NotPositiveDefinite { index, pivot }),
    }
}

/// `KL(N(mu1, diag var1) ‖ N(mu2, diag var2))`.
pub fn kl_diag_gaussian(mu1: &[f64], var1: &[f64], mu2: &[f64], var2: &[f64]) -> Result<f64> {
    let n = mu1.len();
    check_len("kl var1", n, var1.len())?;
    check_len("kl mu2", n, mu2.len())?;
    check_len("kl var2", n, var2.len())?;
    let mut total = 0.0;
    for i in 0..n {
        let (v1, v2) = (var1[i], var2[i]);
        if !(v1 > 0.0) {
            return Err(Error::NonPositiveVariance(v1));
        }
        if !(v2 > 0.0) {
            return Err(Error::NonPositiveVariance(v2));
        }
        let d = mu1[i] - mu2[i];
        total += 0.5 * ((v2 / v1).ln() + v1 / v2 + d * d / v2 - 1.0);
    }
    Ok(total.max(0.0))
}

/// KL divergence between matrix normals `N(vec R1, V1 ⊗ I_c)` and
/// `N(vec R2, V2 ⊗ I_c)`, where `R` is `c × m` and `V` is the `m × m` column
/// covariance.
pub fn kl_matrix_normal(r1: &Matrix, v1: &SymMatrix, r2: &Matrix, v2: &SymMatrix) -> Result<f64> {
    let (c, m) = r1.shape();
    check_len("kl_matrix_normal R2 rows", c, r2.nrows())?;
    check_len("kl_matrix_normal R2 cols", m, r2.ncols())?;
    check_len("kl_matrix_normal V1", m, v1.dim())?;
    check_len("kl_matrix_normal V2", m, v2.dim())?;

    let l1 = cholesky_spd(v1)?;
    let l2 = cholesky_spd(v2)?;

    let trace = l2.solve_matrix(v1.as_matrix()).trace();
    // tr(D V2⁻¹ Dᵀ) = ‖L2⁻¹ Dᵀ‖²_F
    let diff_t = (r1 - r2).transpose();
    let mut mahalanobis = 0.0;
    for col in diff_t.column_iter() {
        let y = l2.solve_lower(&col.into_owned());
        mahalanobis += y.norm_squared();
    }
    let cf = c as f64;
    let kl = 0.5 * (cf * trace + mahalanobis - cf * m as f64 + cf * (l2.log_det() - l1.log_det()));
    Ok(kl.max(0.0))
}

pub fn cosine_similarity(a: &Vector, b: &Vector) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(b) / denom
    }
}

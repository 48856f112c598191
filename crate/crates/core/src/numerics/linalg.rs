use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold: a pivot at or below `PIVOT_TOLERANCE * max(diag)`
/// counts as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Square matrix that is exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `(A + A^T) / 2`. Panics if `a` is not square.
    pub fn new(a: DMatrix<f64>) -> Self {
        assert!(a.is_square(), "SymMatrix requires a square matrix");
        let t = a.transpose();
        SymMatrix((a + t) * 0.5)
    }

    pub fn zeros(order: usize) -> Self {
        SymMatrix(DMatrix::zeros(order, order))
    }

    pub fn identity(order: usize) -> Self {
        SymMatrix(DMatrix::identity(order, order))
    }

    pub fn from_row_slice(order: usize, data: &[f64]) -> Self {
        Self::new(DMatrix::from_row_slice(order, order, data))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    fn max_diagonal(&self) -> f64 {
        self.0.diagonal().iter().fold(0.0f64, |m, &v| m.max(v))
    }
}

/// Lower-triangular Cholesky factor `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.l.nrows();
        assert_eq!(b.nrows(), d, "right-hand side has wrong row count");
        let mut x = b.clone();
        for col in 0..x.ncols() {
            // forward: L y = b
            for i in 0..d {
                let mut s = x[(i, col)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, col)];
                }
                x[(i, col)] = s / self.l[(i, i)];
            }
            // backward: L^T x = y
            for i in (0..d).rev() {
                let mut s = x[(i, col)];
                for k in i + 1..d {
                    s -= self.l[(k, i)] * x[(k, col)];
                }
                x[(i, col)] = s / self.l[(i, i)];
            }
        }
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        DVector::from_column_slice(self.solve(&m).as_slice())
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let d = self.l.nrows();
        SymMatrix::new(self.solve(&DMatrix::identity(d, d))).into_inner()
    }
}

/// Strict Cholesky factorization; fails with the one-based index of the first
/// pivot not exceeding `PIVOT_TOLERANCE * max(diag)`.
pub fn cholesky(a: &SymMatrix) -> Result<Cholesky> {
    let d = a.order();
    let a = a.as_matrix();
    let tol = PIVOT_TOLERANCE * SymMatrix(a.clone()).max_diagonal();
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !pivot.is_finite() || pivot <= tol {
            return Err(Error::singular("matrix is not positive definite", j + 1));
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..d {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(Cholesky { l })
}

/// Factor for positive semi-definite input: zero pivots yield zero columns.
/// Fails if a pivot is clearly negative or a zero pivot has a non-zero column.
pub fn cholesky_psd(a: &SymMatrix) -> Result<DMatrix<f64>> {
    let d = a.order();
    let scale = a.max_diagonal();
    let m = a.as_matrix();
    let tol = PIVOT_TOLERANCE * scale;
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        let mut col: Vec<f64> = (j + 1..d)
            .map(|i| {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                s
            })
            .collect();
        if pivot > tol {
            let ljj = pivot.sqrt();
            l[(j, j)] = ljj;
            for (off, v) in col.iter_mut().enumerate() {
                l[(j + 1 + off, j)] = *v / ljj;
            }
        } else if pivot >= -tol.max(f64::MIN_POSITIVE)
            && col
                .iter()
                .all(|v| v.abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE))
        {
            // zero direction; column stays zero
        } else {
            return Err(Error::singular(
                "matrix is not positive semi-definite",
                j + 1,
            ));
        }
    }
    Ok(l)
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn solve_spd(a: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != a.order() {
        return Err(Error::Domain(format!(
            "right-hand side has {} rows, matrix has order {}",
            b.nrows(),
            a.order()
        )));
    }
    Ok(cholesky(a)?.solve(b))
}

/// Count of eigenvalues above `1e-10 * max |eigenvalue|`.
pub fn numerical_rank(a: &SymMatrix) -> usize {
    if a.order() == 0 {
        return 0;
    }
    let eig = a.as_matrix().clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if top == 0.0 {
        return 0;
    }
    eig.eigenvalues.iter().filter(|v| **v > 1e-10 * top).count()
}

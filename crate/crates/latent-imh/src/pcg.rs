//! Sparse symmetric positive definite solves: CSR storage, zero fill-in
//! incomplete Cholesky, and preconditioned conjugate gradients.
//!
//! The conjugate gradient loop reports how many iterations it spent, so
//! callers can profile how solve cost responds to the requested tolerance.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix. Only what the solver layer needs.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from `(row, col, value)` triplets.
    /// Duplicate entries are summed; columns within a row end up sorted.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument {
                    context: "CsrMatrix::from_triplets",
                    reason: format!("entry ({i}, {j}) outside {n}x{n}"),
                });
            }
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *values.last_mut().expect("entry exists") += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Matrix dimension.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row `i` as parallel slices of column indices and values.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Matrix-vector product `A x`.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n, "CsrMatrix::mul_vec dimension");
        let mut out = DVector::zeros(self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Diagonal entries (zero where absent).
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            if let Ok(k) = cols.binary_search(&i) {
                d[i] = vals[k];
            }
        }
        d
    }

    /// Dense copy, for small cross-checks.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Stopping rule for the conjugate gradient loop.
///
/// `tolerance` is relative: the loop stops once `||b - A x|| <= tolerance * ||b||`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PcgSettings {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl PcgSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config {
                field: "pcg.tolerance".into(),
                reason: format!("must lie in (0, 1); got {}", self.tolerance),
            });
        }
        if self.max_iters == 0 {
            return Err(Error::Config {
                field: "pcg.max_iters".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

impl Default for PcgSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iters: 10_000,
        }
    }
}

/// Sparse lower-triangular factor `G` with `A ~ G G^T`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: CsrMatrix,
}

impl CholeskyFactor {
    /// Applies `(G G^T)^{-1}` by one forward and one backward substitution.
    pub fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let n = self.lower.dim();
        assert_eq!(r.len(), n, "CholeskyFactor::solve dimension");
        // Forward: G w = r, rows visited in order, strictly lower entries gathered.
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let (cols, vals) = self.lower.row(i);
            let mut acc = r[i];
            let mut diag = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                if j < i {
                    acc -= v * w[j];
                } else {
                    diag = v;
                }
            }
            w[i] = acc / diag;
        }
        // Backward: G^T z = w, contributions scattered as each z[i] resolves.
        let mut c = w;
        let mut z = DVector::zeros(n);
        for i in (0..n).rev() {
            let (cols, vals) = self.lower.row(i);
            let diag = vals[cols.binary_search(&i).expect("diagonal stored")];
            z[i] = c[i] / diag;
            for (&j, &v) in cols.iter().zip(vals) {
                if j < i {
                    c[j] -= v * z[i];
                }
            }
        }
        z
    }

    /// The stored lower factor.
    pub fn lower(&self) -> &CsrMatrix {
        &self.lower
    }
}

/// Zero fill-in incomplete Cholesky of a sparse SPD matrix.
///
/// The factor keeps exactly the lower-triangular sparsity pattern of `a`.
/// Fails if a pivot becomes non-positive, which does not happen for the
/// diagonally dominant Laplacian-type matrices built in this crate.
pub fn incomplete_cholesky(a: &CsrMatrix) -> Result<CholeskyFactor> {
    let n = a.dim();
    // Lower-triangular pattern of `a`, row by row; values filled in place.
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let mut has_diag = false;
        for (&j, &v) in cols.iter().zip(vals) {
            if j < i {
                col_idx.push(j);
                values.push(v);
            } else if j == i {
                col_idx.push(j);
                values.push(v);
                has_diag = true;
            }
        }
        if !has_diag {
            return Err(Error::Singular {
                detail: format!("row {i} has no diagonal entry"),
            });
        }
        row_ptr.push(col_idx.len());
    }

    // Sparse dot of the already-computed prefixes of rows `i` and `j`,
    // restricted to columns < j. Both index slices are sorted.
    let sparse_dot = |col_idx: &[usize],
                      values: &[f64],
                      (ilo, ihi): (usize, usize),
                      (jlo, jhi): (usize, usize),
                      limit: usize| {
        let mut acc = 0.0;
        let (mut p, mut q) = (ilo, jlo);
        while p < ihi && q < jhi {
            let (cp, cq) = (col_idx[p], col_idx[q]);
            if cp >= limit || cq >= limit {
                break;
            }
            match cp.cmp(&cq) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    acc += values[p] * values[q];
                    p += 1;
                    q += 1;
                }
            }
        }
        acc
    };

    for i in 0..n {
        let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
        for k in lo..hi {
            let j = col_idx[k];
            if j < i {
                let dot = sparse_dot(
                    &col_idx,
                    &values,
                    (lo, k),
                    (row_ptr[j], row_ptr[j + 1]),
                    j,
                );
                let jj = row_ptr[j + 1] - 1; // diagonal is last in row j
                values[k] = (values[k] - dot) / values[jj];
            } else {
                let dot = sparse_dot(&col_idx, &values, (lo, k), (lo, k), i);
                let pivot = values[k] - dot;
                if pivot <= 0.0 {
                    return Err(Error::Singular {
                        detail: format!("incomplete factorization pivot {pivot:.3e} at row {i}"),
                    });
                }
                values[k] = pivot.sqrt();
            }
        }
    }

    Ok(CholeskyFactor {
        lower: CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        },
    })
}

/// Preconditioner choice for [`pcg_solve`].
#[derive(Debug, Clone)]
pub enum Preconditioner {
    /// Plain conjugate gradients.
    None,
    /// Split preconditioning with a sparse factor `G`, applying `(G G^T)^{-1}`.
    Factorization(CholeskyFactor),
}

impl Preconditioner {
    fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        match self {
            Preconditioner::None => r.clone(),
            Preconditioner::Factorization(f) => f.solve(r),
        }
    }
}

/// Preconditioned conjugate gradients for `A x = b` with SPD `A`.
///
/// Returns the solution together with the number of iterations spent.
/// A zero right-hand side returns immediately with the zero vector.
pub fn pcg_solve(
    a: &CsrMatrix,
    b: &DVector<f64>,
    preconditioner: &Preconditioner,
    settings: &PcgSettings,
) -> Result<(DVector<f64>, usize)> {
    settings.validate()?;
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            context: "pcg_solve",
            expected: n,
            actual: b.len(),
        });
    }
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok((DVector::zeros(n), 0));
    }

    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut z = preconditioner.apply(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);

    for iter in 1..=settings.max_iters {
        let ap = a.mul_vec(&p);
        let alpha = rz / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let res = r.norm() / b_norm;
        if res <= settings.tolerance {
            return Ok((x, iter));
        }
        z = preconditioner.apply(&r);
        let rz_next = r.dot(&z);
        let beta = rz_next / rz;
        rz = rz_next;
        p = z.clone() + beta * p;
    }

    Err(Error::SolverStalled {
        iterations: settings.max_iters,
        residual: r.norm() / b_norm,
        tolerance: settings.tolerance,
    })
}

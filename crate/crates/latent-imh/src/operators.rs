//! Linear operator algebra for inverse problems.
//!
//! [`LinearMap`] covers the operator shapes used throughout the crate: dense
//! rectangular blocks, diagonal scalings, symmetric spectral forms
//! `V S V^T`, compositions, and the inverse action of a sparse SPD matrix
//! evaluated by preconditioned conjugate gradients.
//!
//! [`build_reparameterization`] restricts a tall latent space to the smallest
//! subspace that keeps the observation operator exact: an orthonormal basis
//! whose leading columns span the observation row space and whose trailing
//! columns are aligned with the dominant unobserved directions of the cheap
//! forward map. After the change of variables the forward operator is square,
//! so proposals can be pulled back through a single inverse solve.
//!
//! Solve accounting lives at the problem level (see [`SolveCounters`]); the
//! maps themselves are free of instrumentation so the same operator value can
//! back both counted and uncounted paths.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::pcg::{pcg_solve, CsrMatrix, PcgSettings, Preconditioner};

/// Relative threshold below which singular values and pivots count as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Monotone counters for operator applications that touch the expensive
/// exact operator. `forward` counts applications of the exact forward map or
/// its adjoint; `inverse` counts solves against it.
#[derive(Debug, Default)]
pub struct SolveCounters {
    forward: AtomicU64,
    inverse: AtomicU64,
}

impl SolveCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_forward(&self) {
        self.forward.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_inverse(&self) {
        self.inverse.fetch_add(1, Ordering::Relaxed);
    }

    pub fn forward(&self) -> u64 {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn inverse(&self) -> u64 {
        self.inverse.load(Ordering::Relaxed)
    }

    /// `(forward, inverse)` snapshot.
    pub fn snapshot(&self) -> (u64, u64) {
        (self.forward(), self.inverse())
    }
}

/// Cached LU factorization of a dense square matrix with pivot diagnostics.
#[derive(Debug)]
struct DenseFactor {
    lu: nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    min_pivot: f64,
    max_pivot: f64,
}

impl DenseFactor {
    fn new(m: &DMatrix<f64>) -> Self {
        let lu = m.clone().lu();
        let u = lu.u();
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for i in 0..u.nrows().min(u.ncols()) {
            let p = u[(i, i)].abs();
            min_pivot = min_pivot.min(p);
            max_pivot = max_pivot.max(p);
        }
        Self {
            lu,
            min_pivot,
            max_pivot,
        }
    }

    fn check(&self) -> Result<()> {
        if self.min_pivot <= RANK_TOLERANCE * self.max_pivot {
            return Err(Error::Singular {
                detail: format!(
                    "pivot ratio {:.3e} below {RANK_TOLERANCE:.0e}",
                    self.min_pivot / self.max_pivot.max(f64::MIN_POSITIVE)
                ),
            });
        }
        Ok(())
    }

    fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check()?;
        self.lu.solve(b).ok_or_else(|| Error::Singular {
            detail: "LU back-substitution failed".into(),
        })
    }

    fn log_abs_det(&self) -> Result<f64> {
        self.check()?;
        let u = self.lu.u();
        let mut acc = 0.0;
        for i in 0..u.nrows() {
            acc += u[(i, i)].abs().ln();
        }
        Ok(acc)
    }
}

/// A real linear operator.
///
/// Construct with [`LinearMap::dense`], [`LinearMap::diagonal`],
/// [`LinearMap::svd_structured`], [`LinearMap::composed`], or
/// [`LinearMap::solver_backed`].
#[derive(Debug)]
pub struct LinearMap {
    kind: MapKind,
}

#[derive(Debug)]
enum MapKind {
    /// Explicit dense matrix; LU factors are cached lazily for solves.
    Dense {
        matrix: DMatrix<f64>,
        factor: OnceLock<DenseFactor>,
        factor_transpose: OnceLock<DenseFactor>,
    },
    /// Diagonal scaling.
    Diagonal { entries: DVector<f64> },
    /// Symmetric spectral form `basis * diag(values) * basis^T` with an
    /// orthonormal `basis` (square for solvability).
    SvdStructured {
        basis: DMatrix<f64>,
        values: DVector<f64>,
    },
    /// Product of factors, leftmost first: `factors[0] * factors[1] * ...`.
    Composed { factors: Vec<LinearMap> },
    /// The inverse action `matrix^{-1}` of a sparse SPD matrix, evaluated by
    /// preconditioned conjugate gradients at the stored tolerance. Applying
    /// this map runs a solve; solving against it multiplies by `matrix`.
    SolverBacked {
        matrix: CsrMatrix,
        preconditioner: Preconditioner,
        settings: PcgSettings,
        iterations: AtomicU64,
        applications: AtomicU64,
    },
}

impl Clone for LinearMap {
    fn clone(&self) -> Self {
        match &self.kind {
            MapKind::Dense { matrix, .. } => LinearMap::dense(matrix.clone()),
            MapKind::Diagonal { entries } => LinearMap::diagonal(entries.clone()),
            MapKind::SvdStructured { basis, values } => LinearMap {
                kind: MapKind::SvdStructured {
                    basis: basis.clone(),
                    values: values.clone(),
                },
            },
            MapKind::Composed { factors } => LinearMap {
                kind: MapKind::Composed {
                    factors: factors.clone(),
                },
            },
            MapKind::SolverBacked {
                matrix,
                preconditioner,
                settings,
                ..
            } => LinearMap::solver_backed(matrix.clone(), preconditioner.clone(), *settings),
        }
    }
}

impl LinearMap {
    pub fn dense(matrix: DMatrix<f64>) -> Self {
        LinearMap {
            kind: MapKind::Dense {
                matrix,
                factor: OnceLock::new(),
                factor_transpose: OnceLock::new(),
            },
        }
    }

    pub fn identity(n: usize) -> Self {
        LinearMap::diagonal(DVector::from_element(n, 1.0))
    }

    pub fn diagonal(entries: DVector<f64>) -> Self {
        LinearMap {
            kind: MapKind::Diagonal { entries },
        }
    }

    /// Symmetric map `basis * diag(values) * basis^T`. The basis columns must
    /// be orthonormal; this is checked to a loose tolerance.
    pub fn svd_structured(basis: DMatrix<f64>, values: DVector<f64>) -> Result<Self> {
        if basis.ncols() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "LinearMap::svd_structured",
                expected: basis.ncols(),
                actual: values.len(),
            });
        }
        let gram = basis.tr_mul(&basis);
        let defect = (&gram - DMatrix::<f64>::identity(gram.nrows(), gram.ncols())).norm();
        if defect > 1e-8 * (gram.nrows() as f64).sqrt().max(1.0) {
            return Err(Error::InvalidArgument {
                context: "LinearMap::svd_structured",
                reason: format!("basis is not orthonormal (defect {defect:.3e})"),
            });
        }
        Ok(LinearMap {
            kind: MapKind::SvdStructured { basis, values },
        })
    }

    /// Product `factors[0] * factors[1] * ...` with chained dimensions.
    pub fn composed(factors: Vec<LinearMap>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidArgument {
                context: "LinearMap::composed",
                reason: "needs at least one factor".into(),
            });
        }
        for pair in factors.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::DimensionMismatch {
                    context: "LinearMap::composed",
                    expected: pair[0].cols(),
                    actual: pair[1].rows(),
                });
            }
        }
        Ok(LinearMap {
            kind: MapKind::Composed { factors },
        })
    }

    /// Inverse action of a sparse SPD `matrix`, evaluated iteratively.
    pub fn solver_backed(
        matrix: CsrMatrix,
        preconditioner: Preconditioner,
        settings: PcgSettings,
    ) -> Self {
        LinearMap {
            kind: MapKind::SolverBacked {
                matrix,
                preconditioner,
                settings,
                iterations: AtomicU64::new(0),
                applications: AtomicU64::new(0),
            },
        }
    }

    pub fn rows(&self) -> usize {
        match &self.kind {
            MapKind::Dense { matrix, .. } => matrix.nrows(),
            MapKind::Diagonal { entries } => entries.len(),
            MapKind::SvdStructured { basis, .. } => basis.nrows(),
            MapKind::Composed { factors } => factors[0].rows(),
            MapKind::SolverBacked { matrix, .. } => matrix.dim(),
        }
    }

    pub fn cols(&self) -> usize {
        match &self.kind {
            MapKind::Dense { matrix, .. } => matrix.ncols(),
            MapKind::Diagonal { entries } => entries.len(),
            MapKind::SvdStructured { basis, .. } => basis.nrows(),
            MapKind::Composed { factors } => factors[factors.len() - 1].cols(),
            MapKind::SolverBacked { matrix, .. } => matrix.dim(),
        }
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    fn check_len(&self, len: usize, expected: usize, context: &'static str) -> Result<()> {
        if len != expected {
            return Err(Error::DimensionMismatch {
                context,
                expected,
                actual: len,
            });
        }
        Ok(())
    }

    /// `y = M x`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x.len(), self.cols(), "LinearMap::apply")?;
        match &self.kind {
            MapKind::Dense { matrix, .. } => Ok(matrix * x),
            MapKind::Diagonal { entries } => Ok(entries.component_mul(x)),
            MapKind::SvdStructured { basis, values } => {
                let mut c = basis.tr_mul(x);
                c.component_mul_assign(values);
                Ok(basis * c)
            }
            MapKind::Composed { factors } => {
                let mut v = x.clone();
                for f in factors.iter().rev() {
                    v = f.apply(&v)?;
                }
                Ok(v)
            }
            MapKind::SolverBacked {
                matrix,
                preconditioner,
                settings,
                iterations,
                applications,
            } => {
                let (y, iters) = pcg_solve(matrix, x, preconditioner, settings)?;
                iterations.fetch_add(iters as u64, Ordering::Relaxed);
                applications.fetch_add(1, Ordering::Relaxed);
                Ok(y)
            }
        }
    }

    /// `y = M^T x`.
    pub fn apply_transpose(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x.len(), self.rows(), "LinearMap::apply_transpose")?;
        match &self.kind {
            MapKind::Dense { matrix, .. } => Ok(matrix.tr_mul(x)),
            MapKind::Diagonal { .. } | MapKind::SvdStructured { .. } => self.apply(x),
            MapKind::Composed { factors } => {
                let mut v = x.clone();
                for f in factors {
                    v = f.apply_transpose(&v)?;
                }
                Ok(v)
            }
            // SPD inverse action is symmetric.
            MapKind::SolverBacked { .. } => self.apply(x),
        }
    }

    /// Whether `solve` can succeed structurally (square with invertible kind).
    pub fn is_solvable(&self) -> bool {
        match &self.kind {
            MapKind::Dense { matrix, .. } => matrix.is_square(),
            MapKind::Diagonal { .. } => true,
            MapKind::SvdStructured { basis, .. } => basis.is_square(),
            MapKind::Composed { factors } => {
                self.is_square() && factors.iter().all(|f| f.is_square() && f.is_solvable())
            }
            MapKind::SolverBacked { .. } => true,
        }
    }

    /// Solves `M x = b` for square maps. Direct kinds factorize once and cache;
    /// solver-backed maps multiply by their stored matrix (the inverse of an
    /// inverse action). Near-singular systems report [`Error::Singular`].
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows(),
                cols: self.cols(),
            });
        }
        self.check_len(b.len(), self.rows(), "LinearMap::solve")?;
        match &self.kind {
            MapKind::Dense { matrix, factor, .. } => {
                factor.get_or_init(|| DenseFactor::new(matrix)).solve(b)
            }
            MapKind::Diagonal { entries } => {
                let max = entries.amax();
                let mut out = b.clone();
                for i in 0..entries.len() {
                    if entries[i].abs() <= RANK_TOLERANCE * max {
                        return Err(Error::Singular {
                            detail: format!("diagonal entry {i} is numerically zero"),
                        });
                    }
                    out[i] /= entries[i];
                }
                Ok(out)
            }
            MapKind::SvdStructured { basis, values } => {
                if !basis.is_square() {
                    return Err(Error::NotSquare {
                        rows: basis.nrows(),
                        cols: basis.ncols(),
                    });
                }
                let max = values.amax();
                let mut c = basis.tr_mul(b);
                for i in 0..values.len() {
                    if values[i].abs() <= RANK_TOLERANCE * max {
                        return Err(Error::Singular {
                            detail: format!("spectral value {i} is numerically zero"),
                        });
                    }
                    c[i] /= values[i];
                }
                Ok(basis * c)
            }
            MapKind::Composed { factors } => {
                let mut v = b.clone();
                for f in factors {
                    v = f.solve(&v)?;
                }
                Ok(v)
            }
            MapKind::SolverBacked { matrix, .. } => Ok(matrix.mul_vec(b)),
        }
    }

    /// Solves `M^T x = b` for square maps.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows(),
                cols: self.cols(),
            });
        }
        self.check_len(b.len(), self.cols(), "LinearMap::solve_transpose")?;
        match &self.kind {
            MapKind::Dense {
                matrix,
                factor_transpose,
                ..
            } => factor_transpose
                .get_or_init(|| DenseFactor::new(&matrix.transpose()))
                .solve(b),
            MapKind::Diagonal { .. }
            | MapKind::SvdStructured { .. }
            | MapKind::SolverBacked { .. } => self.solve(b),
            MapKind::Composed { factors } => {
                let mut v = b.clone();
                for f in factors.iter().rev() {
                    v = f.solve_transpose(&v)?;
                }
                Ok(v)
            }
        }
    }

    /// `log |det M|` for square solvable maps.
    pub fn log_abs_det(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows(),
                cols: self.cols(),
            });
        }
        match &self.kind {
            MapKind::Dense { matrix, factor, .. } => factor
                .get_or_init(|| DenseFactor::new(matrix))
                .log_abs_det(),
            MapKind::Diagonal { entries } => {
                let max = entries.amax();
                let mut acc = 0.0;
                for (i, v) in entries.iter().enumerate() {
                    if v.abs() <= RANK_TOLERANCE * max {
                        return Err(Error::Singular {
                            detail: format!("diagonal entry {i} is numerically zero"),
                        });
                    }
                    acc += v.abs().ln();
                }
                Ok(acc)
            }
            MapKind::SvdStructured { basis, values } => {
                if !basis.is_square() {
                    return Err(Error::NotSquare {
                        rows: basis.nrows(),
                        cols: basis.ncols(),
                    });
                }
                let max = values.amax();
                let mut acc = 0.0;
                for (i, v) in values.iter().enumerate() {
                    if v.abs() <= RANK_TOLERANCE * max {
                        return Err(Error::Singular {
                            detail: format!("spectral value {i} is numerically zero"),
                        });
                    }
                    acc += v.abs().ln();
                }
                Ok(acc)
            }
            MapKind::Composed { factors } => {
                let mut acc = 0.0;
                for f in factors {
                    acc += f.log_abs_det()?;
                }
                Ok(acc)
            }
            MapKind::SolverBacked { .. } => Err(Error::Unsupported {
                operation: "log_abs_det of a solver-backed map",
            }),
        }
    }

    /// Materializes the map as a dense matrix. For solver-backed maps this
    /// runs one solve per column, so reserve it for generation-time algebra
    /// and diagnostics on desk-scale problems.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        match &self.kind {
            MapKind::Dense { matrix, .. } => Ok(matrix.clone()),
            MapKind::Diagonal { entries } => Ok(DMatrix::from_diagonal(entries)),
            MapKind::SvdStructured { basis, values } => {
                let mut scaled = basis.clone();
                for (j, v) in values.iter().enumerate() {
                    scaled.column_mut(j).scale_mut(*v);
                }
                Ok(scaled * basis.transpose())
            }
            MapKind::Composed { factors } => {
                let mut acc = factors[factors.len() - 1].to_dense()?;
                for f in factors.iter().rev().skip(1) {
                    acc = f.to_dense()? * acc;
                }
                Ok(acc)
            }
            MapKind::SolverBacked { .. } => {
                let n = self.cols();
                let mut out = DMatrix::zeros(self.rows(), n);
                let mut e = DVector::zeros(n);
                for j in 0..n {
                    e[j] = 1.0;
                    out.set_column(j, &self.apply(&e)?);
                    e[j] = 0.0;
                }
                Ok(out)
            }
        }
    }

    /// Mean conjugate gradient iterations per application, for solver-backed
    /// maps that have been applied at least once.
    pub fn mean_solver_iterations(&self) -> Option<f64> {
        match &self.kind {
            MapKind::SolverBacked {
                iterations,
                applications,
                ..
            } => {
                let calls = applications.load(Ordering::Relaxed);
                (calls > 0)
                    .then(|| iterations.load(Ordering::Relaxed) as f64 / calls as f64)
            }
            _ => None,
        }
    }
}

/// Singular value decomposition with factors reordered so the singular values
/// are descending. Returns `(u, singular_values, v_t)`.
pub fn sorted_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.ok_or(Error::Unsupported {
        operation: "SVD without left vectors",
    })?;
    let v_t = svd.v_t.ok_or(Error::Unsupported {
        operation: "SVD without right vectors",
    })?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).expect("finite singular values"));
    let u_sorted = DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, order[j])]);
    let s_sorted = DVector::from_fn(s.len(), |i, _| s[order[i]]);
    let v_t_sorted = DMatrix::from_fn(v_t.nrows(), v_t.ncols(), |i, j| v_t[(order[i], j)]);
    Ok((u_sorted, s_sorted, v_t_sorted))
}

/// Orthonormal basis produced by [`build_reparameterization`].
#[derive(Debug, Clone)]
pub struct ReparamResult {
    /// Latent-space basis `(d_u x d_x)`; the first `d_y` columns equal
    /// [`ReparamResult::observation_basis`].
    pub basis: DMatrix<f64>,
    /// Orthonormal basis of the observation row space `(d_u x d_y)`.
    pub observation_basis: DMatrix<f64>,
    /// Observation operator restricted to the new coordinates `(d_y x d_x)`;
    /// satisfies `reduced_observation * basis^T = observation`.
    pub reduced_observation: DMatrix<f64>,
}

impl ReparamResult {
    /// `|| basis^T basis - I ||` (Frobenius), which should be at rounding level.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.basis.tr_mul(&self.basis);
        (&gram - DMatrix::<f64>::identity(gram.nrows(), gram.ncols())).norm()
    }

    /// Relative Frobenius defect of `reduced_observation * basis^T` against
    /// the original observation operator.
    pub fn reconstruction_defect(&self, observation: &DMatrix<f64>) -> f64 {
        let rebuilt = &self.reduced_observation * self.basis.transpose();
        (&rebuilt - observation).norm() / observation.norm().max(f64::MIN_POSITIVE)
    }
}

/// Builds the orthonormal latent basis that makes the forward operator square
/// while representing the observation operator exactly.
///
/// The first `d_y` columns span the row space of `observation`; the remaining
/// `d_x - d_y` columns are the dominant left singular directions of the cheap
/// forward map after the observed subspace has been projected out, which
/// keeps the restricted operator well conditioned. Requires
/// `d_y <= d_x <= d_u` and a full-rank observation operator.
pub fn build_reparameterization(
    observation: &LinearMap,
    forward_approx_raw: &LinearMap,
) -> Result<ReparamResult> {
    let d_u = observation.cols();
    let d_y = observation.rows();
    let d_x = forward_approx_raw.cols();
    if forward_approx_raw.rows() != d_u {
        return Err(Error::DimensionMismatch {
            context: "build_reparameterization",
            expected: d_u,
            actual: forward_approx_raw.rows(),
        });
    }
    if d_y > d_x || d_x > d_u {
        return Err(Error::InvalidArgument {
            context: "build_reparameterization",
            reason: format!("needs d_y <= d_x <= d_u; got d_y={d_y}, d_x={d_x}, d_u={d_u}"),
        });
    }

    let obs = observation.to_dense()?;
    let (_, sigma, v_t) = sorted_svd(&obs)?;
    let largest = sigma[0];
    let smallest = sigma[d_y - 1];
    if smallest <= RANK_TOLERANCE * largest {
        return Err(Error::RankDeficient { smallest, largest });
    }
    // Rows of v_t are the right singular vectors; keep the d_y that carry
    // the nonzero singular values.
    let observation_basis = DMatrix::from_fn(d_u, d_y, |i, j| v_t[(j, i)]);

    let mut basis = DMatrix::zeros(d_u, d_x);
    basis.view_mut((0, 0), (d_u, d_y)).copy_from(&observation_basis);

    if d_x > d_y {
        let raw = forward_approx_raw.to_dense()?;
        // Project the observed subspace out of the cheap forward range.
        let projected = &raw - &observation_basis * observation_basis.tr_mul(&raw);
        let (u, _, _) = sorted_svd(&projected)?;
        for j in 0..(d_x - d_y) {
            basis.set_column(d_y + j, &u.column(j));
        }
        orthonormalize_tail(&mut basis, d_y);
    }

    let reduced_observation = &obs * &basis;
    Ok(ReparamResult {
        basis,
        observation_basis,
        reduced_observation,
    })
}

/// One modified Gram-Schmidt pass over columns `start..` against everything
/// before them. Columns that collapse (numerically inside the span of the
/// previous ones) are replaced by the first canonical direction that survives
/// projection, so the result is always orthonormal.
fn orthonormalize_tail(basis: &mut DMatrix<f64>, start: usize) {
    let (n, k) = (basis.nrows(), basis.ncols());
    for j in start..k {
        let mut v = basis.column(j).clone_owned();
        for pass in 0..2 {
            for p in 0..j {
                let prev = basis.column(p);
                let coeff = prev.dot(&v);
                v.axpy(-coeff, &prev, 1.0);
            }
            let norm = v.norm();
            if norm > 1e-8 {
                v /= norm;
                if pass == 1 || norm > 0.5 {
                    break;
                }
            } else {
                // Deterministic fallback: seed from canonical directions.
                let mut replaced = false;
                for c in 0..n {
                    let mut e = DVector::zeros(n);
                    e[c] = 1.0;
                    for p in 0..j {
                        let prev = basis.column(p);
                        let coeff = prev.dot(&e);
                        e.axpy(-coeff, &prev, 1.0);
                    }
                    let norm = e.norm();
                    if norm > 1e-4 {
                        v = e / norm;
                        replaced = true;
                        break;
                    }
                }
                assert!(replaced, "no direction orthogonal to current basis");
            }
        }
        basis.set_column(j, &v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn random_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn identity_and_diagonal_apply() {
        let x = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let eye = LinearMap::identity(3);
        assert_eq!(eye.apply(&x).expect("apply"), x);
        let diag = LinearMap::diagonal(DVector::from_vec(vec![2.0, 0.5, -1.0]));
        assert_eq!(
            diag.apply(&x).expect("apply"),
            DVector::from_vec(vec![2.0, -1.0, -3.0])
        );
        assert_eq!(
            diag.solve(&DVector::from_vec(vec![2.0, -1.0, -3.0]))
                .expect("solve"),
            x
        );
    }

    #[test]
    fn adjoint_identity_on_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 5, 4);
        let map = LinearMap::dense(m);
        for _ in 0..100 {
            let x = random_vector(&mut rng, 4);
            let y = random_vector(&mut rng, 5);
            let lhs = map.apply(&x).expect("apply").dot(&y);
            let rhs = x.dot(&map.apply_transpose(&y).expect("adjoint"));
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn composed_matches_dense_product_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 3, 5);
        let b = random_matrix(&mut rng, 5, 4);
        let product = &a * &b;
        let composed =
            LinearMap::composed(vec![LinearMap::dense(a), LinearMap::dense(b)]).expect("chain");
        assert_eq!(composed.rows(), 3);
        assert_eq!(composed.cols(), 4);
        let x = random_vector(&mut rng, 4);
        assert_relative_eq!(
            composed.apply(&x).expect("apply"),
            &product * &x,
            epsilon = 1e-12
        );
        let y = random_vector(&mut rng, 3);
        assert_relative_eq!(
            composed.apply_transpose(&y).expect("adjoint"),
            product.tr_mul(&y),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            composed.to_dense().expect("dense"),
            product,
            epsilon = 1e-12
        );
    }

    #[test]
    fn dense_solve_round_trips_and_composed_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 6, 6);
        let map = LinearMap::dense(a.clone());
        let x = random_vector(&mut rng, 6);
        let b = map.apply(&x).expect("apply");
        assert_relative_eq!(map.solve(&b).expect("solve"), x, epsilon = 1e-9);
        let bt = map.apply_transpose(&x).expect("adjoint");
        assert_relative_eq!(
            map.solve_transpose(&bt).expect("transpose solve"),
            x,
            epsilon = 1e-9
        );

        let c = random_matrix(&mut rng, 6, 6);
        let chain = LinearMap::composed(vec![LinearMap::dense(a.clone()), LinearMap::dense(c.clone())])
            .expect("chain");
        let b2 = chain.apply(&x).expect("apply");
        assert_relative_eq!(chain.solve(&b2).expect("solve"), x, epsilon = 1e-8);
        let b3 = chain.apply_transpose(&x).expect("adjoint");
        assert_relative_eq!(
            chain.solve_transpose(&b3).expect("transpose solve"),
            x,
            epsilon = 1e-8
        );

        let logdet = chain.log_abs_det().expect("log det");
        let expected = (&a * &c).determinant().abs().ln();
        assert_relative_eq!(logdet, expected, epsilon = 1e-8, max_relative = 1e-8);
    }

    #[test]
    fn svd_structured_apply_solve_and_det() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let raw = random_matrix(&mut rng, 5, 5);
        let q = raw.qr().q();
        let values = DVector::from_vec(vec![3.0, -1.5, 0.7, 0.2, 1.1]);
        let map = LinearMap::svd_structured(q.clone(), values.clone()).expect("orthonormal");
        let dense = {
            let mut scaled = q.clone();
            for (j, v) in values.iter().enumerate() {
                scaled.column_mut(j).scale_mut(*v);
            }
            scaled * q.transpose()
        };
        let x = random_vector(&mut rng, 5);
        assert_relative_eq!(map.apply(&x).expect("apply"), &dense * &x, epsilon = 1e-10);
        let b = map.apply(&x).expect("apply");
        assert_relative_eq!(map.solve(&b).expect("solve"), x, epsilon = 1e-9);
        assert_relative_eq!(
            map.log_abs_det().expect("log det"),
            values.iter().map(|v| v.abs().ln()).sum::<f64>(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn singular_maps_report_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let map = LinearMap::dense(m);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(map.solve(&b), Err(Error::Singular { .. })));

        let diag = LinearMap::diagonal(DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(diag.solve(&b), Err(Error::Singular { .. })));
    }

    #[test]
    fn solver_backed_inverse_action_matches_dense() {
        let n = 20;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let sparse = CsrMatrix::from_triplets(n, &t).expect("triplets");
        let dense = sparse.to_dense();
        let map = LinearMap::solver_backed(
            sparse,
            Preconditioner::None,
            PcgSettings {
                tolerance: 1e-10,
                max_iters: 1000,
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_vector(&mut rng, n);
        let y = map.apply(&b).expect("inverse action");
        let y_ref = dense.clone().lu().solve(&b).expect("dense solve");
        assert!(
            (&y - &y_ref).norm() / y_ref.norm() <= 1e-8,
            "relative error too large"
        );
        // solve() multiplies by the matrix itself.
        assert_relative_eq!(map.solve(&y).expect("solve"), &dense * y, epsilon = 1e-12);
        assert!(map.mean_solver_iterations().expect("applied once") >= 1.0);
    }

    #[test]
    fn reparam_canonical_observation_keeps_canonical_subspace() {
        // Observation picks the first two latent coordinates out of four.
        let mut obs = DMatrix::zeros(2, 4);
        obs[(0, 0)] = 1.0;
        obs[(1, 1)] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let raw = random_matrix(&mut rng, 4, 3);
        let result = build_reparameterization(
            &LinearMap::dense(obs.clone()),
            &LinearMap::dense(raw),
        )
        .expect("reparameterization");
        assert_eq!(result.basis.shape(), (4, 3));
        // The observed block must span exactly the first two canonical axes.
        let projector = &result.observation_basis * result.observation_basis.transpose();
        let mut expected = DMatrix::zeros(4, 4);
        expected[(0, 0)] = 1.0;
        expected[(1, 1)] = 1.0;
        assert_relative_eq!(projector, expected, epsilon = 1e-10);
        assert!(result.orthonormality_defect() <= 1e-10);
        assert!(result.reconstruction_defect(&obs) <= 1e-10);
        // Leading columns are the observation basis by construction.
        assert_relative_eq!(
            result.basis.view((0, 0), (4, 2)).clone_owned(),
            result.observation_basis,
            epsilon = 0.0
        );
    }

    #[test]
    fn reparam_square_case_has_no_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let obs = random_matrix(&mut rng, 3, 6);
        let raw = random_matrix(&mut rng, 6, 3);
        let result =
            build_reparameterization(&LinearMap::dense(obs.clone()), &LinearMap::dense(raw))
                .expect("reparameterization");
        assert_eq!(result.basis.shape(), (6, 3));
        assert_relative_eq!(result.basis, result.observation_basis, epsilon = 0.0);
        assert!(result.reconstruction_defect(&obs) <= 1e-10);
    }

    #[test]
    fn reparam_observation_equivalence_end_to_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (d_u, d_x, d_y) = (50, 10, 5);
        let obs = random_matrix(&mut rng, d_y, d_u);
        let raw = random_matrix(&mut rng, d_u, d_x);
        let result =
            build_reparameterization(&LinearMap::dense(obs.clone()), &LinearMap::dense(raw.clone()))
                .expect("reparameterization");
        assert!(result.orthonormality_defect() <= 1e-10);
        assert!(result.reconstruction_defect(&obs) <= 1e-10);
        // Observing the restricted latent state reproduces the full
        // observation of the raw forward map.
        let restricted = result.basis.tr_mul(&raw);
        for _ in 0..20 {
            let x = random_vector(&mut rng, d_x);
            let full = &obs * (&raw * &x);
            let reduced = &result.reduced_observation * (&restricted * &x);
            assert!(
                (&full - &reduced).norm() <= 1e-9 * full.norm().max(1.0),
                "observation mismatch"
            );
        }
    }

    #[test]
    fn reparam_rejects_rank_deficient_observation() {
        let mut obs = DMatrix::zeros(2, 4);
        obs[(0, 0)] = 1.0;
        obs[(1, 0)] = 1.0; // second row duplicates the first
        let raw = DMatrix::identity(4, 3);
        let err = build_reparameterization(&LinearMap::dense(obs), &LinearMap::dense(raw))
            .expect_err("rank deficiency must be detected");
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    fn random_orthonormal_completion(
        rng: &mut impl Rng,
        observation_basis: &DMatrix<f64>,
        d_x: usize,
    ) -> DMatrix<f64> {
        let (d_u, d_y) = observation_basis.shape();
        let mut alt = DMatrix::zeros(d_u, d_x);
        alt.view_mut((0, 0), (d_u, d_y)).copy_from(observation_basis);
        let noise = random_matrix(rng, d_u, d_x - d_y);
        alt.view_mut((0, d_y), (d_u, d_x - d_y)).copy_from(&noise);
        orthonormalize_tail(&mut alt, d_y);
        alt
    }

    fn condition_number(m: &DMatrix<f64>) -> f64 {
        let s = m.clone().svd(false, false).singular_values;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for v in s.iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        hi / lo
    }

    #[test]
    fn reparam_conditioning_beats_random_complement_on_most_trials() {
        // The complement choice controls the subspace-alignment part of the
        // restricted operator's conditioning, so test on maps with unit
        // spectrum: there the condition number measures alignment alone.
        // Intrinsic spectral decay is carried into the restriction by every
        // complement choice alike and would just add noise to the comparison.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (d_u, d_x, d_y) = (30, 10, 3);
        let mut wins = 0;
        for _ in 0..10 {
            let obs = random_matrix(&mut rng, d_y, d_u);
            let raw = random_matrix(&mut rng, d_u, d_x).qr().q();
            let result = build_reparameterization(
                &LinearMap::dense(obs.clone()),
                &LinearMap::dense(raw.clone()),
            )
            .expect("reparameterization");
            let chosen = condition_number(&result.basis.tr_mul(&raw));
            let alt = random_orthonormal_completion(&mut rng, &result.observation_basis, d_x);
            if chosen <= condition_number(&alt.tr_mul(&raw)) {
                wins += 1;
            }
        }
        assert!(wins >= 8, "won only {wins}/10 conditioning trials");
    }

    #[test]
    fn reparam_complement_block_dominates_every_singular_value() {
        // The dominant-direction complement maximizes each singular value of
        // the complement block simultaneously, for any spectrum. This is the
        // guarantee behind the conditioning heuristic: the restricted cheap
        // map keeps the largest possible invertibility margin.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (d_u, d_x, d_y) = (30, 10, 3);
        for _ in 0..10 {
            let obs = random_matrix(&mut rng, d_y, d_u);
            let left = random_matrix(&mut rng, d_u, d_x).qr().q();
            let right = random_matrix(&mut rng, d_x, d_x).qr().q();
            let mut raw = DMatrix::zeros(d_u, d_x);
            for i in 0..d_x {
                raw += (1.0 / ((i + 1) as f64).powi(2)) * left.column(i) * right.column(i).transpose();
            }
            let result = build_reparameterization(
                &LinearMap::dense(obs.clone()),
                &LinearMap::dense(raw.clone()),
            )
            .expect("reparameterization");
            let tail = result.basis.view((0, d_y), (d_u, d_x - d_y)).clone_owned();
            let chosen = sorted_svd(&tail.tr_mul(&raw)).expect("svd").1;
            let alt = random_orthonormal_completion(&mut rng, &result.observation_basis, d_x);
            let alt_tail = alt.view((0, d_y), (d_u, d_x - d_y)).clone_owned();
            let other = sorted_svd(&alt_tail.tr_mul(&raw)).expect("svd").1;
            for i in 0..chosen.len() {
                assert!(
                    chosen[i] >= other[i] - 1e-10,
                    "singular value {i}: chosen {:.6e} below random {:.6e}",
                    chosen[i],
                    other[i]
                );
            }
        }
    }

    #[test]
    fn sorted_svd_is_descending() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = random_matrix(&mut rng, 7, 4);
        let (u, s, v_t) = sorted_svd(&m).expect("svd");
        for i in 1..s.len() {
            assert!(s[i - 1] >= s[i], "singular values not sorted");
        }
        let rebuilt = {
            let mut scaled = u.clone();
            for (j, v) in s.iter().enumerate() {
                scaled.column_mut(j).scale_mut(*v);
            }
            scaled * v_t
        };
        assert_relative_eq!(rebuilt, m, epsilon = 1e-10);
    }
}

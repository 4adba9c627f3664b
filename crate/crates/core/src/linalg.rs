//! Sparse matrices and direct solvers.
//!
//! Matrices are assembled in compressed-row form from triplets. Complex
//! symmetric saddle systems are factorized with a sparse LU with partial
//! pivoting; real SPD systems with a sparse Cholesky. Both solvers are
//! provided by `faer` and wrapped with iterative refinement so every solve
//! meets a relative residual of `RESIDUAL_TOL`.

use std::fmt::Debug;
use std::io::Write;
use std::ops::{Add, AddAssign, Mul, Sub};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative residual every solve must reach.
pub const RESIDUAL_TOL: f64 = 1e-10;
const REFINEMENT_STEPS: usize = 4;

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + AddAssign
    + 'static
{
    fn zero() -> Self;
    fn norm_sqr(self) -> f64;
    fn to_complex(self) -> C64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn norm_sqr(self) -> f64 {
        self * self
    }
    fn to_complex(self) -> C64 {
        C64::new(self, 0.0)
    }
}

impl Scalar for C64 {
    fn zero() -> Self {
        C64::new(0.0, 0.0)
    }
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    fn to_complex(self) -> C64 {
        self
    }
}

pub fn norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Compressed sparse row matrix with sorted, duplicate-free columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates
    /// in input order.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&i| (triplets[i].0, triplets[i].1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for i in order {
            let (r, c, v) = triplets[i];
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self
    where
        T: From<f64>,
    {
        let t: Vec<_> = (0..n).map(|i| (i, i, T::from(1.0))).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let row = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        match row.binary_search(&c) {
            Ok(k) => self.values[self.row_ptr[r] + k],
            Err(_) => T::zero(),
        }
    }

    /// Entries of row `r` as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn mul_vec<U>(&self, x: &[U]) -> Vec<U>
    where
        U: Scalar + Mul<T, Output = U>,
    {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| {
                let mut acc = U::zero();
                for (c, v) in self.row(r) {
                    acc += x[c] * v;
                }
                acc
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// Largest absolute difference between `self` and its transpose
    /// (without conjugation).
    pub fn symmetry_defect(&self) -> f64 {
        self.iter()
            .map(|(r, c, v)| (v - self.get(c, r)).norm_sqr().sqrt())
            .fold(0.0, f64::max)
            .max(
                self.transpose()
                    .iter()
                    .map(|(r, c, v)| (v - self.get(r, c)).norm_sqr().sqrt())
                    .fold(0.0, f64::max),
            )
    }

    /// Entry-wise map into another scalar type.
    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> SparseMatrix<U> {
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Writes the matrix in Matrix Market coordinate format.
    pub fn write_matrix_market(&self, mut w: impl Write) -> std::io::Result<()> {
        let complex = std::any::TypeId::of::<T>() == std::any::TypeId::of::<C64>();
        writeln!(
            w,
            "%%MatrixMarket matrix coordinate {} general",
            if complex { "complex" } else { "real" }
        )?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.iter() {
            let z = v.to_complex();
            if complex {
                writeln!(w, "{} {} {:e} {:e}", r + 1, c + 1, z.re, z.im)?;
            } else {
                writeln!(w, "{} {} {:e}", r + 1, c + 1, z.re)?;
            }
        }
        Ok(())
    }

    pub(crate) fn to_faer(&self) -> Result<SparseColMat<usize, T>>
    where
        T: faer::traits::ComplexField,
    {
        let triplets: Vec<_> = self.iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| Error::Singular(format!("matrix conversion failed: {e:?}")))
    }
}

impl<T: Scalar> Sub for &SparseMatrix<T> {
    type Output = SparseMatrix<T>;

    fn sub(self, rhs: Self) -> SparseMatrix<T> {
        assert_eq!((self.nrows, self.ncols), (rhs.nrows, rhs.ncols));
        let mut t: Vec<_> = self.iter().collect();
        t.extend(rhs.iter().map(|(r, c, v)| (r, c, T::zero() - v)));
        SparseMatrix::from_triplets(self.nrows, self.ncols, &t)
    }
}

/// Size and fill summary of a factorization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FactorStats {
    pub dim: usize,
    pub matrix_nnz: usize,
}

/// Sparse LU factorization of a complex (symmetric) matrix.
pub struct Factorization {
    lu: Lu<usize, C64>,
    matrix: SparseMatrix<C64>,
    stats: FactorStats,
}

impl Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("stats", &self.stats)
            .finish()
    }
}

impl Factorization {
    pub fn new(matrix: &SparseMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let lu = matrix.to_faer()?.sp_lu().map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { index } => {
                Error::Singular(format!("no pivot found at elimination step {index}"))
            }
            other => Error::Singular(format!("{other:?}")),
        })?;
        Ok(Self {
            lu,
            matrix: matrix.clone(),
            stats: FactorStats {
                dim: matrix.nrows(),
                matrix_nnz: matrix.nnz(),
            },
        })
    }

    pub fn stats(&self) -> FactorStats {
        self.stats
    }

    pub fn matrix(&self) -> &SparseMatrix<C64> {
        &self.matrix
    }

    pub fn solve(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        refine(&self.matrix, rhs, |b| {
            let mut m = Mat::from_fn(b.len(), 1, |i, _| b[i]);
            self.lu.solve_in_place(m.as_mut());
            (0..b.len()).map(|i| m[(i, 0)]).collect()
        })
    }
}

/// Sparse Cholesky factorization of a real SPD matrix.
pub struct SpdFactorization {
    llt: Llt<usize, f64>,
    matrix: SparseMatrix<f64>,
}

impl Debug for SpdFactorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactorization")
            .field("dim", &self.matrix.nrows())
            .finish()
    }
}

impl SpdFactorization {
    pub fn new(matrix: &SparseMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let llt = matrix
            .to_faer()?
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Singular(format!("SPD factorization failed: {e:?}")))?;
        Ok(Self {
            llt,
            matrix: matrix.clone(),
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        refine(&self.matrix, rhs, |b| {
            let mut m = Mat::from_fn(b.len(), 1, |i, _| b[i]);
            self.llt.solve_in_place(m.as_mut());
            (0..b.len()).map(|i| m[(i, 0)]).collect()
        })
    }
}

/// Direct solve followed by iterative refinement on the residual.
fn refine<T>(a: &SparseMatrix<T>, b: &[T], inner: impl Fn(&[T]) -> Vec<T>) -> Result<Vec<T>>
where
    T: Scalar + Mul<T, Output = T>,
{
    if b.len() != a.nrows() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(vec![T::zero(); b.len()]);
    }
    let mut x = inner(b);
    let mut rel = f64::INFINITY;
    for _ in 0..REFINEMENT_STEPS {
        let ax = a.mul_vec(&x);
        let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        let new_rel = norm(&r) / bnorm;
        if !new_rel.is_finite() {
            return Err(Error::Singular("non-finite solution".into()));
        }
        if new_rel <= 0.01 * RESIDUAL_TOL || new_rel >= rel {
            rel = rel.min(new_rel);
            break;
        }
        rel = new_rel;
        let dx = inner(&r);
        for (xi, di) in x.iter_mut().zip(dx) {
            *xi += di;
        }
    }
    if rel > RESIDUAL_TOL {
        let ax = a.mul_vec(&x);
        let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        rel = norm(&r) / bnorm;
    }
    if rel > RESIDUAL_TOL {
        return Err(Error::Singular(format!(
            "relative residual {rel:e} above {RESIDUAL_TOL:e} after refinement"
        )));
    }
    Ok(x)
}

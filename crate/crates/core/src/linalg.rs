//! Dense real linear algebra at desk scale.
//!
//! Everything is `f64`. Matrices are stored row-major. Tensor products are
//! flattened role-major (column stacking): for a filler `f` of length `d_f`
//! and a role `r`, entry `j * d_f + i` of `f ⊗ r` is `f[i] * r[j]`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;

/// Pivots (diagonal of R in a thin QR) below this magnitude mean rank deficiency.
pub const SINGULAR_PIVOT: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    /// Checked constructor: non-empty and all entries finite.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(invalid("vector must have positive length"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(invalid("vector entries must be finite"));
        }
        Ok(Self(data))
    }

    pub fn from_slice(data: &[f64]) -> Result<Self> {
        Self::new(data.to_vec())
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn add(&self, other: &DenseVector) -> DenseVector {
        debug_assert_eq!(self.len(), other.len());
        DenseVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &DenseVector) -> DenseVector {
        debug_assert_eq!(self.len(), other.len());
        DenseVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, alpha: f64) -> DenseVector {
        DenseVector(self.0.iter().map(|a| alpha * a).collect())
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &DenseVector) {
        for (a, b) in self.0.iter_mut().zip(&x.0) {
            *a += alpha * b;
        }
    }

    /// Euclidean distance.
    pub fn distance(&self, other: &DenseVector) -> f64 {
        sq_distance(&self.0, &other.0).sqrt_libm()
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Checked constructor from row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("matrix dimensions must be positive"));
        }
        if rows * cols != data.len() {
            return Err(invalid("matrix data length does not match rows * cols"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(invalid("matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Unchecked constructor for internal use; shapes must already agree.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_columns(columns: &[DenseVector]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(invalid("columns have different lengths"));
        }
        let mut m = Self::new(rows, columns.len(), vec![0.0; rows * columns.len()])?;
        for (j, c) in columns.iter().enumerate() {
            m.set_column(j, c.as_slice());
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> DenseVector {
        DenseVector((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(invalid("matmul inner dimensions differ"));
        }
        Ok(matmul_raw(self, other))
    }

    pub fn matvec(&self, v: &DenseVector) -> Result<DenseVector> {
        if self.cols != v.len() {
            return Err(invalid("matvec dimension mismatch"));
        }
        Ok(DenseVector(
            (0..self.rows).map(|i| dot(self.row(i), v.as_slice())).collect(),
        ))
    }

    /// `max |self - other|` over all entries; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub(crate) fn matmul_raw(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt_libm()
}

pub(crate) fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `sqrt` and friends without `std`.
pub(crate) trait FloatExt {
    fn sqrt_libm(self) -> f64;
}

impl FloatExt for f64 {
    #[inline]
    fn sqrt_libm(self) -> f64 {
        libm::sqrt(self)
    }
}

/// The tensor product `f ⊗ r`, flattened role-major.
pub fn outer_flatten(filler: &DenseVector, role: &DenseVector) -> Result<DenseVector> {
    if filler.is_empty() || role.is_empty() {
        return Err(invalid("outer_flatten needs non-empty vectors"));
    }
    let d_f = filler.len();
    let mut out = vec![0.0; d_f * role.len()];
    for (j, rj) in role.as_slice().iter().enumerate() {
        for (i, fi) in filler.as_slice().iter().enumerate() {
            out[j * d_f + i] = fi * rj;
        }
    }
    Ok(DenseVector(out))
}

/// Reshape a role-major flattened tensor back to its `d_f x d_r` matrix.
pub fn matricize(z: &DenseVector, d_f: usize, d_r: usize) -> Result<DenseMatrix> {
    if d_f == 0 || d_r == 0 || z.len() != d_f * d_r {
        return Err(invalid("matricize: length is not d_f * d_r"));
    }
    let mut m = DenseMatrix::zeros(d_f, d_r);
    for j in 0..d_r {
        for i in 0..d_f {
            m[(i, j)] = z[j * d_f + i];
        }
    }
    Ok(m)
}

/// Thin QR by modified Gram-Schmidt with one re-orthogonalization pass.
///
/// Returns `(Q, R)` with `Q` of shape `d x n` having orthonormal columns and
/// `R` upper triangular `n x n`. Fails if any `|R[j][j]|` falls below
/// [`SINGULAR_PIVOT`].
pub fn thin_qr(m: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (d, n) = m.shape();
    if d < n {
        return Err(invalid("thin_qr needs rows >= cols"));
    }
    let mut q: Vec<Vec<f64>> = (0..n).map(|j| m.column(j).into_vec()).collect();
    let mut r = DenseMatrix::zeros(n, n);
    for j in 0..n {
        // Two passes of projection keep Q orthonormal to working precision.
        for _ in 0..2 {
            for k in 0..j {
                let (head, tail) = q.split_at_mut(j);
                let c = dot(&head[k], &tail[0]);
                r[(k, j)] += c;
                for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                    *x -= c * y;
                }
            }
        }
        let nrm = norm(&q[j]);
        if nrm < SINGULAR_PIVOT {
            return Err(Error::SingularMatrix { pivot: nrm });
        }
        r[(j, j)] = nrm;
        for x in q[j].iter_mut() {
            *x /= nrm;
        }
    }
    let mut qm = DenseMatrix::zeros(d, n);
    for (j, col) in q.iter().enumerate() {
        qm.set_column(j, col);
    }
    Ok((qm, r))
}

/// A `d x n` matrix with orthonormal columns, from `n` orthonormalized
/// Gaussian columns.
pub fn semi_orthogonal(d: usize, n: usize, rng: &mut SeededRng) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(invalid("semi_orthogonal needs n >= 1"));
    }
    if d < n {
        return Err(invalid("semi_orthogonal needs d >= n"));
    }
    let data = (0..d * n).map(|_| rng.normal()).collect();
    let gaussian = DenseMatrix::from_raw(d, n, data);
    Ok(thin_qr(&gaussian)?.0)
}

/// Left inverse `U` with `U M = I_n` for a `d x n` matrix of rank `n`.
///
/// Equal to `(MᵀM)⁻¹Mᵀ`, evaluated as `R⁻¹Qᵀ` from a thin QR of `M`.
pub fn left_inverse(m: &DenseMatrix) -> Result<DenseMatrix> {
    let (d, n) = m.shape();
    if d < n {
        return Err(Error::SingularMatrix { pivot: 0.0 });
    }
    let (q, r) = thin_qr(m)?;
    // Solve R X = Qᵀ by back substitution, column by column of Qᵀ.
    let qt = q.transpose();
    let mut u = DenseMatrix::zeros(n, d);
    for c in 0..d {
        for i in (0..n).rev() {
            let mut s = qt[(i, c)];
            for k in i + 1..n {
                s -= r[(i, k)] * u[(k, c)];
            }
            u[(i, c)] = s / r[(i, i)];
        }
    }
    Ok(u)
}

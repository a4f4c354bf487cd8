//! Small dense linear algebra kit for symmetric matrices.
//!
//! Score dimensions are small (a handful of regressors), so everything here is
//! plain `O(v^3)` dense code: compensated accumulation of outer products,
//! cyclic Jacobi eigenvalues, a PSD test and a Cholesky solver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Off-diagonal Frobenius mass (relative to the full norm) at which the
/// Jacobi sweep stops.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Relative eigenvalue floor below which `solve_spd` refuses to factor.
pub const SPD_RELATIVE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not positive definite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("Jacobi iteration did not converge (off-diagonal mass {off_diagonal:e})")]
    NoConvergence { off_diagonal: f64 },
}

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Elementwise compensated sum of vectors of equal length.
#[derive(Debug, Clone)]
pub struct VectorAccumulator {
    cells: Vec<CompensatedSum>,
}

impl VectorAccumulator {
    pub fn new(len: usize) -> Self {
        Self {
            cells: vec![CompensatedSum::new(); len],
        }
    }

    #[inline]
    pub fn add(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.cells.len());
        for (cell, &v) in self.cells.iter_mut().zip(values) {
            cell.add(v);
        }
    }

    pub fn finish(&self) -> Vec<f64> {
        self.cells.iter().map(CompensatedSum::value).collect()
    }
}

/// Accumulates weighted outer products `w * a b'` into a square matrix with
/// compensated summation in every entry.
#[derive(Debug, Clone)]
pub struct OuterAccumulator {
    dim: usize,
    cells: Vec<CompensatedSum>,
}

impl OuterAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            cells: vec![CompensatedSum::new(); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds `weight * a b'`.
    #[inline]
    pub fn add_outer(&mut self, a: &[f64], b: &[f64], weight: f64) {
        debug_assert_eq!(a.len(), self.dim);
        debug_assert_eq!(b.len(), self.dim);
        for (r, &ar) in a.iter().enumerate() {
            let row = &mut self.cells[r * self.dim..(r + 1) * self.dim];
            for (cell, &bc) in row.iter_mut().zip(b) {
                cell.add(weight * ar * bc);
            }
        }
    }

    /// Adds `weight * (a b' + b a')`.
    #[inline]
    pub fn add_cross(&mut self, a: &[f64], b: &[f64], weight: f64) {
        self.add_outer(a, b, weight);
        self.add_outer(b, a, weight);
    }

    /// Adds `weight * m` for an already symmetric matrix.
    pub fn add_matrix(&mut self, m: &SymMatrix, weight: f64) {
        debug_assert_eq!(m.dim(), self.dim);
        for (cell, &v) in self.cells.iter_mut().zip(m.as_slice()) {
            cell.add(weight * v);
        }
    }

    /// Symmetrizes explicitly as `(A + A') / 2`.
    pub fn finish(&self) -> SymMatrix {
        let raw: Vec<f64> = self.cells.iter().map(CompensatedSum::value).collect();
        SymMatrix::symmetrized(self.dim, &raw)
    }
}

/// Dense symmetric matrix, stored in full row-major form.
///
/// The constructors enforce `a[i][j] == a[j][i]` bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut m = Self::zeros(dim);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * dim + i] = d;
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            dim: 1,
            data: vec![value],
        }
    }

    /// `x x'`.
    pub fn outer(x: &[f64]) -> Self {
        let dim = x.len();
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                data[i * dim + j] = x[i] * x[j];
            }
        }
        Self { dim, data }
    }

    /// Builds from row-major square data, averaging with the transpose.
    pub fn symmetrized(dim: usize, raw: &[f64]) -> Self {
        assert_eq!(raw.len(), dim * dim, "square buffer expected");
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = raw[i * dim + i];
            for j in (i + 1)..dim {
                let v = 0.5 * (raw[i * dim + j] + raw[j * dim + i]);
                data[i * dim + j] = v;
                data[j * dim + i] = v;
            }
        }
        Self { dim, data }
    }

    /// Builds from nested rows; the input is symmetrized.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let dim = rows.len();
        let mut raw = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(NumericsError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            raw.extend_from_slice(row);
        }
        Ok(Self::symmetrized(dim, &raw))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|a| a * c).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> Result<f64, NumericsError> {
        let eig = sym_eigen(self)?;
        Ok(eig.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
    }

    pub fn min_eigenvalue(&self) -> Result<f64, NumericsError> {
        sym_eigen_min(self)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: self.data.clone(),
        }
    }
}

/// General dense row-major matrix, used for right-hand sides and products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(NumericsError::DimensionMismatch {
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let s = compensated_sum((0..self.cols).map(|k| self.get(i, k) * other.get(k, j)));
                out.set(i, j, s);
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Symmetric part `(A + A') / 2` of a square matrix.
    pub fn symmetric_part(&self) -> SymMatrix {
        assert_eq!(self.rows, self.cols, "square matrix expected");
        SymMatrix::symmetrized(self.rows, &self.data)
    }
}

/// All eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
pub fn sym_eigen(m: &SymMatrix) -> Result<Vec<f64>, NumericsError> {
    if !m.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let n = m.dim();
    let mut a = m.as_slice().to_vec();
    let norm = m.frobenius_norm();
    if n <= 1 || norm == 0.0 {
        let mut d: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
        d.sort_by(f64::total_cmp);
        return Ok(d);
    }

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[p * n + q] * a[p * n + q];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&a) > JACOBI_TOLERANCE * norm {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(NumericsError::NoConvergence {
                off_diagonal: off(&a),
            });
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    d.sort_by(f64::total_cmp);
    Ok(d)
}

pub fn sym_eigen_min(m: &SymMatrix) -> Result<f64, NumericsError> {
    let eig = sym_eigen(m)?;
    Ok(eig.first().copied().unwrap_or(0.0))
}

/// `true` iff the smallest eigenvalue is at least `-tol`. Non-finite input is
/// never PSD.
pub fn is_psd(m: &SymMatrix, tol: f64) -> bool {
    match sym_eigen_min(m) {
        Ok(min) => min >= -tol,
        Err(_) => false,
    }
}

fn cholesky(a: &SymMatrix) -> Result<Vec<f64>, NumericsError> {
    let n = a.dim();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = CompensatedSum::new();
        d.add(a.get(j, j));
        for k in 0..j {
            d.add(-l[j * n + k] * l[j * n + k]);
        }
        let d = d.value();
        if d <= 0.0 {
            return Err(NumericsError::NotPositiveDefinite {
                min_eigenvalue: sym_eigen_min(a)?,
            });
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = CompensatedSum::new();
            s.add(a.get(i, j));
            for k in 0..j {
                s.add(-l[i * n + k] * l[j * n + k]);
            }
            l[i * n + j] = s.value() / ljj;
        }
    }
    Ok(l)
}

fn cholesky_solve_in_place(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `a x = b` for strictly positive definite `a`.
///
/// Refuses matrices whose smallest eigenvalue is not above
/// `1e-12 * spectral_norm`, reporting that eigenvalue. One step of iterative
/// refinement is applied to each column.
pub fn solve_spd(a: &SymMatrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    let n = a.dim();
    if b.rows() != n {
        return Err(NumericsError::DimensionMismatch {
            expected: n,
            found: b.rows(),
        });
    }
    if !a.is_finite() || b.data.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let eig = sym_eigen(a)?;
    let min = eig.first().copied().unwrap_or(0.0);
    let spectral = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if n > 0 && min <= SPD_RELATIVE_FLOOR * spectral {
        return Err(NumericsError::NotPositiveDefinite { min_eigenvalue: min });
    }
    let l = cholesky(a)?;
    let mut x = Matrix::zeros(n, b.cols());
    for j in 0..b.cols() {
        let rhs = b.col(j);
        let mut col = rhs.clone();
        cholesky_solve_in_place(&l, n, &mut col);
        // refinement: x += A^{-1} (b - A x)
        let mut r: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = CompensatedSum::new();
                s.add(rhs[i]);
                for k in 0..n {
                    s.add(-a.get(i, k) * col[k]);
                }
                s.value()
            })
            .collect();
        cholesky_solve_in_place(&l, n, &mut r);
        for i in 0..n {
            x.set(i, j, col[i] + r[i]);
        }
    }
    Ok(x)
}

pub fn inverse_spd(a: &SymMatrix) -> Result<SymMatrix, NumericsError> {
    let x = solve_spd(a, &SymMatrix::identity(a.dim()).to_matrix())?;
    Ok(x.symmetric_part())
}

/// `a^{-1} m a^{-1}` for SPD `a` and symmetric `m`, symmetrized.
pub fn sandwich_product(a: &SymMatrix, m: &SymMatrix) -> Result<SymMatrix, NumericsError> {
    let left = solve_spd(a, &m.to_matrix())?; // a^{-1} m
    let both = solve_spd(a, &left.transpose())?; // a^{-1} m a^{-1}
    Ok(both.symmetric_part())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        // Gram-Schmidt on a random Gaussian-ish matrix
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= d * ui;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                q.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        q
    }

    fn q_diag_qt(q: &[Vec<f64>], d: &[f64]) -> SymMatrix {
        let n = d.len();
        let mut raw = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                raw[i * n + j] = (0..n).map(|k| q[k][i] * d[k] * q[k][j]).sum();
            }
        }
        SymMatrix::symmetrized(n, &raw)
    }

    #[test]
    fn eigen_min_identity_and_diagonal() {
        assert_eq!(sym_eigen_min(&SymMatrix::identity(3)).unwrap(), 1.0);
        assert_eq!(sym_eigen_min(&SymMatrix::from_diag(&[2.0, -1.0])).unwrap(), -1.0);
    }

    #[test]
    fn eigen_two_by_two_matches_characteristic_roots() {
        // roots of (2 - x)^2 - 1 are 1 and 3
        let m = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let eig = sym_eigen(&m).unwrap();
        assert_relative_eq!(eig[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(eig[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn eigen_rejects_non_finite() {
        let m = SymMatrix::from_diag(&[1.0, f64::NAN]);
        assert_eq!(sym_eigen_min(&m), Err(NumericsError::NonFinite));
    }

    #[test]
    fn psd_examples() {
        let x = [1.0, -2.0, 0.5];
        assert!(is_psd(&SymMatrix::outer(&x), 0.0));
        assert!(!is_psd(&SymMatrix::from_diag(&[1.0, -1e-6]), 1e-8));
        assert!(is_psd(&SymMatrix::from_diag(&[1.0, -1e-12]), 1e-10));
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let b = Matrix::column(&[3.0, -1.0, 2.5]);
        let x = solve_spd(&SymMatrix::identity(3), &b).unwrap();
        assert_eq!(x, b);

        let a = SymMatrix::from_diag(&[2.0, 4.0]);
        let x = solve_spd(&a, &Matrix::column(&[2.0, 8.0])).unwrap();
        assert_relative_eq!(x.get(0, 0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(x.get(1, 0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn solve_reports_min_eigenvalue_on_singular() {
        let a = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        match solve_spd(&a, &Matrix::column(&[1.0, 1.0])) {
            Err(NumericsError::NotPositiveDefinite { min_eigenvalue }) => {
                assert!(min_eigenvalue.abs() < 1e-12)
            }
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn solve_random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q = random_orthogonal(5, &mut rng);
            let d: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..10.0)).collect();
            let a = q_diag_qt(&q, &d);
            let b = Matrix::from_rows(
                &(0..5)
                    .map(|_| (0..2).map(|_| rng.random_range(-5.0..5.0)).collect())
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let x = solve_spd(&a, &b).unwrap();
            let resid = a.to_matrix().matmul(&x).unwrap().sub(&b);
            assert!(resid.frobenius_norm() <= 1e-10 * b.frobenius_norm());
        }
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut values = vec![1e16, 1.0, -1e16];
        values.extend(std::iter::repeat_n(1e-3, 1000));
        assert_relative_eq!(compensated_sum(values), 2.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn eigen_recovers_min_of_rotated_diagonal(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_orthogonal(n, &mut rng);
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let m = q_diag_qt(&q, &d);
            let expected = d.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!((sym_eigen_min(&m).unwrap() - expected).abs() < 1e-9);
        }

        #[test]
        fn psd_closed_under_addition(seed in any::<u64>(), n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut psd = || {
                let q = random_orthogonal(n, &mut rng);
                let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..5.0)).collect();
                q_diag_qt(&q, &d)
            };
            let a = psd();
            let b = psd();
            prop_assert!(is_psd(&a, 0.0) && is_psd(&b, 0.0));
            prop_assert!(is_psd(&a.add(&b), 0.0));
        }
    }
}

//! Small dense linear algebra: a column-major matrix, Householder QR with
//! optional column pivoting, Cholesky, and a cyclic Jacobi eigensolver.
//!
//! Sizes in this crate are modest (n in the hundreds, k up to a few dozen),
//! so everything is written for clarity over blocking.

use std::ops::{Index, IndexMut};

use serde::Serialize;

use crate::scalar::{dot, Real};

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix<T> {
    nrows: usize,
    ncols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![T::zero(); nrows * ncols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_col_major(nrows: usize, ncols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), nrows * ncols, "buffer length must be nrows*ncols");
        Self { nrows, ncols, data }
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::zeros(nrows, ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            assert_eq!(r.len(), ncols, "ragged rows");
            for (j, &v) in r.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(nrows, ncols);
        for j in 0..ncols {
            for i in 0..nrows {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[T] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [T] {
        let n = self.nrows;
        &mut self.data[j * n..(j + 1) * n]
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        (0..self.ncols).map(|j| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> T {
        self.diagonal().into_iter().sum()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.ncols, self.nrows, |i, j| self[(j, i)])
    }

    /// Columns `cols` (in the given order) as a new matrix.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.nrows * cols.len());
        for &c in cols {
            data.extend_from_slice(self.col(c));
        }
        Self { nrows: self.nrows, ncols: cols.len(), data }
    }

    /// Rows `rows` (repetition allowed) as a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut m = Self::zeros(rows.len(), self.ncols);
        for j in 0..self.ncols {
            let src = self.col(j);
            let dst = m.col_mut(j);
            for (d, &r) in dst.iter_mut().zip(rows) {
                *d = src[r];
            }
        }
        m
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.ncols);
        let mut out = vec![T::zero(); self.nrows];
        for (j, &vj) in v.iter().enumerate() {
            if vj == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.col(j)) {
                *o += a * vj;
            }
        }
        out
    }

    /// `self' v`.
    pub fn tr_matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.nrows);
        (0..self.ncols).map(|j| dot(self.col(j), v)).collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut out = Self::zeros(self.nrows, other.ncols);
        for j in 0..other.ncols {
            let col = self.matvec(other.col(j));
            out.col_mut(j).copy_from_slice(&col);
        }
        out
    }

    /// `self' self`.
    pub fn gram(&self) -> Self {
        let k = self.ncols;
        let mut g = Self::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = dot(self.col(a), self.col(b));
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        g
    }

    pub fn scale(&self, s: T) -> Self {
        Self { nrows: self.nrows, ncols: self.ncols, data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Self { nrows: self.nrows, ncols: self.ncols, data }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let scale = T::one().max(self.max_abs());
        (0..self.nrows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol * scale))
    }

    /// Replaces `self` with `(self + self') / 2`.
    pub fn symmetrize(&mut self) {
        let half = T::of(0.5);
        for i in 0..self.nrows {
            for j in 0..i {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    /// Quadratic form `v' self v`.
    pub fn quad_form(&self, v: &[T]) -> T {
        dot(v, &self.matvec(v))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.nrows && j < self.ncols);
        &self.data[j * self.nrows + i]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.nrows && j < self.ncols);
        &mut self.data[j * self.nrows + i]
    }
}

/// Householder QR factorisation `A P = Q R` of an `n x k` matrix, `n >= k`.
///
/// Storage follows LAPACK: `R` on and above the diagonal, Householder
/// vectors (with implicit unit leading entry) below it.
#[derive(Debug, Clone)]
pub struct Qr<T> {
    qr: Matrix<T>,
    tau: Vec<T>,
    perm: Vec<usize>,
    rank: usize,
    tol: T,
}

impl<T: Real> Qr<T> {
    /// Unpivoted factorisation; the leading `j` columns of `R` factor the
    /// leading `j` columns of `A`, which nested least squares relies on.
    pub fn new(a: &Matrix<T>) -> Self {
        Self::factor(a.clone(), false)
    }

    /// Column-pivoted factorisation; numerical rank uses
    /// `rtol = n * eps * max column norm`.
    pub fn pivoted(a: &Matrix<T>) -> Self {
        Self::factor(a.clone(), true)
    }

    pub fn new_owned(a: Matrix<T>) -> Self {
        Self::factor(a, false)
    }

    pub fn pivoted_owned(a: Matrix<T>) -> Self {
        Self::factor(a, true)
    }

    fn factor(mut a: Matrix<T>, pivot: bool) -> Self {
        let n = a.nrows();
        let k = a.ncols();
        let steps = n.min(k);
        let mut tau = vec![T::zero(); steps];
        let mut perm: Vec<usize> = (0..k).collect();

        let mut max_norm = T::zero();
        for j in 0..k {
            max_norm = max_norm.max(dot(a.col(j), a.col(j)).sqrt());
        }
        let tol = T::of_usize(n.max(1)) * T::epsilon() * max_norm;

        let mut norms: Vec<T> = if pivot { (0..k).map(|j| dot(a.col(j), a.col(j))).collect() } else { Vec::new() };

        for j in 0..steps {
            if pivot {
                let mut best = j;
                for c in j + 1..k {
                    if norms[c] > norms[best] {
                        best = c;
                    }
                }
                if best != j {
                    for i in 0..n {
                        let tmp = a[(i, j)];
                        a[(i, j)] = a[(i, best)];
                        a[(i, best)] = tmp;
                    }
                    perm.swap(j, best);
                    norms.swap(j, best);
                }
            }

            let alpha = a[(j, j)];
            let tail: T = (j + 1..n).map(|i| a[(i, j)] * a[(i, j)]).sum();
            if tail == T::zero() {
                tau[j] = T::zero();
            } else {
                let norm = (alpha * alpha + tail).sqrt();
                let beta = if alpha >= T::zero() { -norm } else { norm };
                tau[j] = (beta - alpha) / beta;
                let scale = T::one() / (alpha - beta);
                for i in j + 1..n {
                    a[(i, j)] *= scale;
                }
                a[(j, j)] = beta;

                for c in j + 1..k {
                    let mut s = a[(j, c)];
                    for i in j + 1..n {
                        s += a[(i, j)] * a[(i, c)];
                    }
                    s *= tau[j];
                    a[(j, c)] -= s;
                    for i in j + 1..n {
                        let v = a[(i, j)];
                        a[(i, c)] -= s * v;
                    }
                }
            }

            if pivot {
                // Trailing norms are recomputed rather than downdated.
                for c in j + 1..k {
                    norms[c] = (j + 1..n).map(|i| a[(i, c)] * a[(i, c)]).sum();
                }
            }
        }

        let rank = if pivot {
            (0..steps).take_while(|&i| a[(i, i)].abs() > tol).count()
        } else {
            (0..steps).filter(|&i| a[(i, i)].abs() > tol).count()
        };
        Self { qr: a, tau, perm, rank, tol }
    }

    pub fn nrows(&self) -> usize {
        self.qr.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.qr.ncols()
    }

    /// Numerical rank (meaningful for the pivoted factorisation).
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rank_tol(&self) -> T {
        self.tol
    }

    /// Column permutation: position `i` of `R` holds original column `perm()[i]`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn r_diag(&self) -> Vec<T> {
        self.qr.diagonal()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.ncols().min(self.nrows()) && self.ncols() <= self.nrows()
    }

    /// Applies `Q'` to `y` in place.
    pub fn apply_qt(&self, y: &mut [T]) {
        let n = self.nrows();
        assert_eq!(y.len(), n);
        for (j, &t) in self.tau.iter().enumerate() {
            if t == T::zero() {
                continue;
            }
            let mut s = y[j];
            for i in j + 1..n {
                s += self.qr[(i, j)] * y[i];
            }
            s *= t;
            y[j] -= s;
            for i in j + 1..n {
                y[i] -= s * self.qr[(i, j)];
            }
        }
    }

    /// Applies `Q` to `y` in place.
    pub fn apply_q(&self, y: &mut [T]) {
        let n = self.nrows();
        assert_eq!(y.len(), n);
        for (j, &t) in self.tau.iter().enumerate().rev() {
            if t == T::zero() {
                continue;
            }
            let mut s = y[j];
            for i in j + 1..n {
                s += self.qr[(i, j)] * y[i];
            }
            s *= t;
            y[j] -= s;
            for i in j + 1..n {
                y[i] -= s * self.qr[(i, j)];
            }
        }
    }

    /// First `cols` columns of `Q`.
    pub fn thin_q(&self, cols: usize) -> Matrix<T> {
        let n = self.nrows();
        let mut q = Matrix::zeros(n, cols);
        for j in 0..cols {
            let col = q.col_mut(j);
            col[j] = T::one();
            self.apply_q(col);
        }
        q
    }

    /// Solves `R[..p, ..p] x = rhs[..p]` for the leading `p x p` block.
    pub fn solve_upper_prefix(&self, p: usize, rhs: &[T]) -> Vec<T> {
        let mut x = rhs[..p].to_vec();
        for i in (0..p).rev() {
            let mut s = x[i];
            for c in i + 1..p {
                s -= self.qr[(i, c)] * x[c];
            }
            x[i] = s / self.qr[(i, i)];
        }
        x
    }

    /// Least-squares solution in original column order; requires full column rank.
    pub fn solve(&self, y: &[T]) -> Vec<T> {
        let k = self.ncols();
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        let z = self.solve_upper_prefix(k, &qty);
        let mut theta = vec![T::zero(); k];
        for (i, &p) in self.perm.iter().enumerate() {
            theta[p] = z[i];
        }
        theta
    }

    /// Diagonal of `(A'A)^{-1}` in original column order, via `R^{-1}` row norms.
    pub fn xtx_inv_diag(&self) -> Vec<T> {
        let k = self.ncols();
        let rinv = self.r_inverse();
        let mut out = vec![T::zero(); k];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = (i..k).map(|c| rinv[(i, c)] * rinv[(i, c)]).sum();
        }
        out
    }

    /// Inverse of the upper-triangular `k x k` factor.
    pub fn r_inverse(&self) -> Matrix<T> {
        let k = self.ncols();
        let mut inv = Matrix::zeros(k, k);
        for c in 0..k {
            let mut e = vec![T::zero(); k];
            e[c] = T::one();
            let x = self.solve_upper_prefix(c + 1, &e);
            for (i, v) in x.into_iter().enumerate() {
                inv[(i, c)] = v;
            }
        }
        inv
    }
}

/// Lower Cholesky factor `L` with `A = L L'`; `None` unless `A` is positive definite.
pub fn cholesky<T: Real>(a: &Matrix<T>) -> Option<Matrix<T>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for c in 0..j {
            d -= l[(j, c)] * l[(j, c)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for c in 0..j {
                s -= l[(i, c)] * l[(j, c)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L L' x = b` given the lower Cholesky factor, using only its
/// leading `p x p` block.
pub fn cholesky_solve_prefix<T: Real>(l: &Matrix<T>, p: usize, b: &[T]) -> Vec<T> {
    let mut x = b[..p].to_vec();
    for i in 0..p {
        let mut s = x[i];
        for c in 0..i {
            s -= l[(i, c)] * x[c];
        }
        x[i] = s / l[(i, i)];
    }
    for i in (0..p).rev() {
        let mut s = x[i];
        for c in i + 1..p {
            s -= l[(c, i)] * x[c];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues (ascending) and the matching eigenvectors as columns.
pub fn symmetric_eigen<T: Real>(a: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    m.symmetrize();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm();
    let eps = T::epsilon();

    for _sweep in 0..100 {
        let off: T = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)] * m[(i, j)]).sum();
        if off.sqrt() <= eps * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = v.select_columns(&order);
    (values, vectors)
}

/// Factor `F` with `F F' = A+`, the positive part of symmetric `A`
/// (negative eigenvalues floored at zero).
pub fn psd_factor<T: Real>(a: &Matrix<T>) -> Matrix<T> {
    let (vals, mut vecs) = symmetric_eigen(a);
    for (j, &lam) in vals.iter().enumerate() {
        let s = lam.max(T::zero()).sqrt();
        for x in vecs.col_mut(j) {
            *x *= s;
        }
    }
    vecs
}

pub fn min_eigenvalue<T: Real>(a: &Matrix<T>) -> T {
    symmetric_eigen(a).0.first().copied().unwrap_or_else(T::zero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample() -> Matrix<f64> {
        Matrix::from_rows(&[
            vec![1.0, 2.0, 0.5],
            vec![1.0, -1.0, 2.0],
            vec![1.0, 0.3, -0.7],
            vec![1.0, 4.0, 1.1],
            vec![1.0, -2.5, 0.2],
        ])
    }

    #[test]
    fn qr_reconstructs_least_squares() {
        let x = sample();
        let y = [1.0, 2.0, 0.0, 3.0, -1.0];
        for qr in [Qr::new(&x), Qr::pivoted(&x)] {
            let theta = qr.solve(&y);
            let resid: Vec<f64> = x.matvec(&theta).iter().zip(&y).map(|(a, b)| b - a).collect();
            for g in x.tr_matvec(&resid) {
                assert_abs_diff_eq!(g, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pivoted_qr_detects_duplicate_column() {
        let x = sample().select_columns(&[0, 1, 1]);
        assert_eq!(Qr::pivoted(&x).rank(), 2);
        assert_eq!(Qr::pivoted(&sample()).rank(), 3);
    }

    #[test]
    fn thin_q_is_orthonormal() {
        let q = Qr::new(&sample()).thin_q(3);
        let g = q.gram();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(g[(i, j)], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn xtx_inverse_diagonal_matches_cholesky() {
        let x = sample();
        let qr = Qr::pivoted(&x);
        let d = qr.xtx_inv_diag();
        let l = cholesky(&x.gram()).unwrap();
        for j in 0..3 {
            let mut e = vec![0.0; 3];
            e[j] = 1.0;
            let col = cholesky_solve_prefix(&l, 3, &e);
            assert_abs_diff_eq!(d[j], col[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobi_eigen_decomposes() {
        let a = Matrix::from_rows(&[vec![4.0, 1.0, 0.5], vec![1.0, 3.0, -0.2], vec![0.5, -0.2, 1.0]]);
        let (vals, vecs) = symmetric_eigen(&a);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let recon = vecs.matmul(&Matrix::diag(&vals)).matmul(&vecs.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(recon[(i, j)], a[(i, j)], epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(vals.iter().sum::<f64>(), a.trace(), epsilon = 1e-12);
    }

    #[test]
    fn psd_factor_floors_negative_part() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let f = psd_factor(&a);
        let ap = f.matmul(&f.transpose());
        // eigenvalues 3 and -1; positive part is 1.5 * ones
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(ap[(i, j)], 1.5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(cholesky(&a).is_none());
    }

    #[test]
    fn qr_works_in_f32() {
        let x: Matrix<f32> = Matrix::from_rows(&[vec![1.0f32, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]);
        let theta = Qr::pivoted(&x).solve(&[1.0, 3.0, 5.0]);
        assert!((theta[0] - 1.0).abs() < 1e-5 && (theta[1] - 2.0).abs() < 1e-5);
    }
}

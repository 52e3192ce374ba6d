//! Minimisation of `w'Aw + b'w` over the probability simplex.
//!
//! Primal active-set method: start at the best vertex, take null-space
//! Newton steps on the current face (or a descent ray when the face is
//! not strictly convex), drop blocking coordinates, and release the
//! coordinate with the most negative multiplier at a face minimum. Every
//! step is non-increasing in the objective.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, symmetric_eigen, Matrix};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QpStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution<T> {
    pub weights: Vec<T>,
    pub objective: T,
    /// Indices whose weight is exactly zero.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub status: QpStatus,
    /// Whether the convexity ridge was added to `A`.
    pub regularized: bool,
}

impl<T: Real> QpSolution<T> {
    pub fn converged(&self) -> bool {
        self.status == QpStatus::Converged
    }
}

/// `w'Aw + b'w`.
pub fn qp_objective<T: Real>(a: &Matrix<T>, b: &[T], w: &[T]) -> T {
    a.quad_form(w) + crate::scalar::dot(b, w)
}

pub fn default_max_iter(m: usize) -> usize {
    10 * m * m
}

/// Solves with tolerance `1e-8` (scaled for `f32`) and `10 M^2` iterations.
pub fn solve_simplex_qp_default<T: Real>(a: &Matrix<T>, b: &[T]) -> Result<QpSolution<T>> {
    solve_simplex_qp(a, b, T::default_tol(), default_max_iter(b.len()))
}

/// KKT residual of `w`: the largest violation of
/// `g_q = lambda` on the support and `g_q >= lambda` off it, where
/// `g = 2Aw + b` and `lambda` is the mean gradient on the support.
pub fn kkt_residual<T: Real>(a: &Matrix<T>, b: &[T], w: &[T]) -> T {
    let aw = a.matvec(w);
    let g: Vec<T> = aw.iter().zip(b).map(|(&x, &y)| x + x + y).collect();
    let support: Vec<usize> = (0..w.len()).filter(|&q| w[q] > T::zero()).collect();
    if support.is_empty() {
        return T::infinity();
    }
    let lambda = support.iter().map(|&q| g[q]).sum::<T>() / T::of_usize(support.len());
    let mut worst = T::zero();
    for q in 0..w.len() {
        let v = if w[q] > T::zero() { (g[q] - lambda).abs() } else { (lambda - g[q]).max(T::zero()) };
        worst = worst.max(v);
    }
    worst
}

pub fn solve_simplex_qp<T: Real>(a: &Matrix<T>, b: &[T], tol: T, max_iter: usize) -> Result<QpSolution<T>> {
    let m = b.len();
    if m == 0 {
        return Err(Error::DimensionMismatch("quadratic program needs at least one weight".into()));
    }
    if a.nrows() != m || a.ncols() != m {
        return Err(Error::DimensionMismatch(format!("A is {}x{}, b has length {m}", a.nrows(), a.ncols())));
    }
    if !a.is_finite() || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if m == 1 {
        let w = vec![T::one()];
        return Ok(QpSolution {
            objective: qp_objective(a, b, &w),
            weights: w,
            active_set: vec![],
            iterations: 0,
            status: QpStatus::Converged,
            regularized: false,
        });
    }

    let mut sym = a.clone();
    sym.symmetrize();
    let norm = sym.max_abs();
    let mut work = sym.clone();
    let mut regularized = false;
    if norm > T::zero() && min_eigenvalue(&sym) < -T::of(1e-10) * norm {
        let ridge = T::of(1e-10) * sym.trace().abs() / T::of_usize(m);
        for q in 0..m {
            work[(q, q)] += ridge;
        }
        regularized = true;
    }

    let scale = T::one().max(norm).max(b.iter().fold(T::zero(), |s, v| s.max(v.abs())));
    let kkt_tol = tol * scale;
    let curv_tol = T::epsilon().sqrt() * T::of(1e-3) * scale;

    let vertex: Vec<T> = (0..m).map(|q| work[(q, q)] + b[q]).collect();
    let start = (0..m).fold(0, |best, q| if vertex[q] < vertex[best] { q } else { best });
    let mut w = vec![T::zero(); m];
    w[start] = T::one();
    let mut free = vec![false; m];
    free[start] = true;

    let mut face_min = false;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let g = gradient(&work, b, &w);
        let fset: Vec<usize> = (0..m).filter(|&q| free[q]).collect();

        if face_min || fset.len() == 1 {
            let lambda = fset.iter().map(|&q| g[q]).sum::<T>() / T::of_usize(fset.len());
            let mut release: Option<(usize, T)> = None;
            for q in (0..m).filter(|&q| !free[q]) {
                let mu = g[q] - lambda;
                if mu < -kkt_tol && release.map_or(true, |(_, best)| mu < best) {
                    release = Some((q, mu));
                }
            }
            match release {
                None => {
                    converged = true;
                    break;
                }
                Some((q, _)) => {
                    free[q] = true;
                    face_min = false;
                    continue;
                }
            }
        }

        let (p, newton) = face_step(&work, &g, &fset, curv_tol);
        let pmax = p.iter().fold(T::zero(), |s, v| s.max(v.abs()));
        if pmax <= T::epsilon() * T::of(16.0) {
            face_min = true;
            continue;
        }
        let mut alpha = if newton { T::one() } else { T::infinity() };
        let mut block = None;
        for (i, &q) in fset.iter().enumerate() {
            if p[i] < T::zero() {
                let r = -w[q] / p[i];
                if r < alpha {
                    alpha = r;
                    block = Some(q);
                }
            }
        }
        for (i, &q) in fset.iter().enumerate() {
            w[q] += alpha * p[i];
            if w[q] < T::zero() {
                w[q] = T::zero();
            }
        }
        match block {
            Some(q) => {
                w[q] = T::zero();
                free[q] = false;
                face_min = false;
            }
            None => face_min = true,
        }
    }

    finalize(&mut w, tol);
    let residual = kkt_residual(&work, b, &w);
    let status = if converged && residual <= kkt_tol * T::of(10.0) { QpStatus::Converged } else { QpStatus::MaxIterations };
    Ok(QpSolution {
        objective: qp_objective(&sym, b, &w),
        active_set: (0..m).filter(|&q| w[q] == T::zero()).collect(),
        weights: w,
        iterations,
        status,
        regularized,
    })
}

fn gradient<T: Real>(a: &Matrix<T>, b: &[T], w: &[T]) -> Vec<T> {
    a.matvec(w).iter().zip(b).map(|(&x, &y)| x + x + y).collect()
}

/// Step on the face spanned by `fset`, in `fset` coordinates, summing to
/// zero. Returns the direction and whether it is a full Newton step.
fn face_step<T: Real>(a: &Matrix<T>, g: &[T], fset: &[usize], curv_tol: T) -> (Vec<T>, bool) {
    let k = fset.len();
    let l = fset[k - 1];
    let r = k - 1;
    let h = Matrix::from_fn(r, r, |i, j| {
        let (fi, fj) = (fset[i], fset[j]);
        a[(fi, fj)] - a[(fi, l)] - a[(l, fj)] + a[(l, l)]
    });
    let rhs: Vec<T> = (0..r).map(|i| g[fset[i]] - g[l]).collect();
    let (vals, vecs) = symmetric_eigen(&h);
    let grad_tol = T::epsilon().sqrt() * T::of(1e-3) * rhs.iter().fold(T::one(), |s, v| s.max(v.abs()));

    let mut d = vec![T::zero(); r];
    let mut ray = None;
    for i in 0..r {
        let u = vecs.col(i);
        let ur: T = u.iter().zip(&rhs).map(|(&x, &y)| x * y).sum();
        if vals[i] > curv_tol {
            let c = ur / (vals[i] + vals[i]);
            for (dj, &uj) in d.iter_mut().zip(u) {
                *dj -= c * uj;
            }
        } else if ray.is_none() && (vals[i] < -curv_tol || ur.abs() > grad_tol) {
            let s = if ur > T::zero() { -T::one() } else { T::one() };
            ray = Some(u.iter().map(|&x| s * x).collect::<Vec<T>>());
        }
    }
    let newton = ray.is_none();
    let d = ray.unwrap_or(d);
    let mut p = d.clone();
    p.push(-d.iter().copied().sum::<T>());
    (p, newton)
}

/// Clamps tiny negatives and renormalises so the weights sum to one.
fn finalize<T: Real>(w: &mut [T], tol: T) {
    for v in w.iter_mut() {
        if *v < T::zero() && -*v <= tol {
            *v = T::zero();
        }
    }
    let s: T = w.iter().copied().sum();
    for v in w.iter_mut() {
        *v /= s;
    }
    let big = (0..w.len()).fold(0, |best, q| if w[q] > w[best] { q } else { best });
    let rest: T = (0..w.len()).filter(|&q| q != big).map(|q| w[q]).sum();
    w[big] = T::one() - rest;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(m: usize, rank: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        let f = Matrix::from_fn(rank, m, |_, _| rng.random_range(-1.0..1.0));
        f.gram()
    }

    // Exact 1-D minimisation moving mass between pairs of coordinates.
    fn pairwise_polish(a: &Matrix<f64>, b: &[f64], w: &mut [f64], sweeps: usize) {
        let m = w.len();
        for _ in 0..sweeps {
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    // w + t (e_i - e_j), t in [-w_i, w_j]
                    let g = gradient(a, b, w);
                    let slope = g[i] - g[j];
                    let curv = a[(i, i)] + a[(j, j)] - 2.0 * a[(i, j)];
                    let t = if curv > 1e-15 { -slope / (2.0 * curv) } else if slope < 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
                    let t = t.clamp(-w[i], w[j]);
                    w[i] += t;
                    w[j] -= t;
                }
            }
        }
    }

    fn grid_oracle(a: &Matrix<f64>, b: &[f64]) -> f64 {
        let m = b.len();
        let steps = if m <= 3 { 1000 } else { 100 };
        let h = 1.0 / steps as f64;
        let mut best = (f64::INFINITY, vec![0.0; m]);
        let mut idx = vec![0usize; m - 1];
        loop {
            let used: usize = idx.iter().sum();
            if used <= steps {
                let mut w: Vec<f64> = idx.iter().map(|&c| c as f64 * h).collect();
                w.push((steps - used) as f64 * h);
                let f = qp_objective(a, b, &w);
                if f < best.0 {
                    best = (f, w);
                }
            }
            let mut k = 0;
            loop {
                if k == m - 1 {
                    let mut w = best.1;
                    pairwise_polish(a, b, &mut w, 500);
                    return qp_objective(a, b, &w).min(best.0);
                }
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn identity_two() {
        let s = solve_simplex_qp_default(&Matrix::<f64>::identity(2), &[0.0, 0.0]).unwrap();
        assert_eq!(s.status, QpStatus::Converged);
        assert_abs_diff_eq!(s.weights[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn diag_one_two() {
        let s = solve_simplex_qp_default(&Matrix::diag(&[1.0, 2.0]), &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.weights[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.weights[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn single_weight() {
        let s = solve_simplex_qp_default(&Matrix::from_rows(&[[7.0]]), &[-3.0]).unwrap();
        assert_eq!(s.weights, vec![1.0]);
        assert_eq!(s.objective, 4.0);
    }

    #[test]
    fn non_finite_rejected() {
        let err = solve_simplex_qp_default(&Matrix::identity(2), &[f64::NAN, 0.0]).unwrap_err();
        assert_eq!(err, Error::NonFinite);
    }

    #[test]
    fn linear_objective_picks_vertex() {
        let s = solve_simplex_qp_default(&Matrix::zeros(3, 3), &[0.3, -0.2, 0.1]).unwrap();
        assert_eq!(s.weights, vec![0.0, 1.0, 0.0]);
        assert_eq!(s.active_set, vec![0, 2]);
    }

    #[test]
    fn rank_one_collinear_models() {
        // Two identical models: any split is optimal; a vertex-or-split set attains the minimum.
        let a = Matrix::from_rows(&[[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let s = solve_simplex_qp_default(&a, &[0.0; 3]).unwrap();
        assert!(s.converged());
        assert_abs_diff_eq!(s.objective, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn indefinite_input_is_regularized_and_vertex_dominant() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        let s = solve_simplex_qp_default(&a, &[0.0, 0.0]).unwrap();
        assert!(s.regularized);
        assert!(s.objective <= 1.0 + 1e-12);
    }

    #[test]
    fn grid_oracle_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..50 {
            let m = 2 + case % 3;
            let rank = 1 + case % m;
            let a = random_psd(m, rank, &mut rng);
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = solve_simplex_qp_default(&a, &b).unwrap();
            assert!(s.converged(), "case {case}");
            let oracle = grid_oracle(&a, &b);
            assert!((s.objective - oracle).abs() <= 1e-6, "case {case}: {} vs {}", s.objective, oracle);
        }
    }

    #[test]
    fn f32_solver() {
        let s = solve_simplex_qp_default(&Matrix::diag(&[1.0f32, 2.0]), &[0.0, 0.0]).unwrap();
        assert!(s.converged());
        assert!((s.weights[0] - 2.0 / 3.0).abs() < 1e-5);
    }
}

//! Confidence intervals for coefficients under nested candidate sets:
//! simulation from the limiting distribution of averaging estimators, and
//! normal-theory and bootstrap baselines.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::criteria::{criterion_from_replicates, bms_select, run_replicates, Method};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, psd_factor, Matrix};
use crate::parallel::par_map;
use crate::qp::solve_simplex_qp_default;
use crate::regression::{fit_all, select_by_ic, CandidateModelSet, Dataset, FitBundle, IcKind};
use crate::resampling::{ResampleKind, SeedSpec};
use crate::scalar::Real;

/// Plug-in quantities for the limiting distribution.
///
/// Matrices live in the coordinates of the full model's columns in nesting
/// order (`columns`); model `q` uses the first `dims[q]` of them.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticInputs<T> {
    pub sigma2_hat: T,
    pub q_hat: Matrix<T>,
    pub xi_hat: Matrix<T>,
    pub q_inv: Matrix<T>,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub m0: usize,
    pub dims: Vec<usize>,
    pub columns: Vec<usize>,
    /// `V_r = S' Q_r^{-1} S` for `r = 1..R`, zero-padded to `k x k`.
    pub v: Vec<Matrix<T>>,
    /// `tr(Q_r^{-1} Xi_r)` for `r = 1..R`.
    pub hc_trace: Vec<T>,
}

impl<T: Real> AsymptoticInputs<T> {
    /// Number of correct models `R = M - M0`.
    pub fn r(&self) -> usize {
        self.dims.len() - self.m0
    }

    /// Position of dataset column `j` in the full model.
    pub fn position(&self, j: usize) -> Result<usize> {
        self.columns
            .iter()
            .position(|&c| c == j)
            .ok_or(Error::CoefficientNotInModel { coef: j + 1, model: self.dims.len() })
    }
}

fn spd_inverse<T: Real>(a: &Matrix<T>) -> Option<Matrix<T>> {
    let l = cholesky(a)?;
    let k = a.nrows();
    let mut inv = Matrix::zeros(k, k);
    for j in 0..k {
        let mut e = vec![T::zero(); k];
        e[j] = T::one();
        inv.col_mut(j).copy_from_slice(&crate::linalg::cholesky_solve_prefix(&l, k, &e));
    }
    inv.symmetrize();
    Some(inv)
}

/// `M0` from BIC selection: the number of models smaller than the selected one.
pub fn bic_m0<T: Real>(bundle: &FitBundle<T>) -> usize {
    select_by_ic(bundle, IcKind::Bic)
}

/// Plug-in inputs with `M0` chosen by BIC.
pub fn estimate_asymptotics<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    m: usize,
) -> Result<AsymptoticInputs<T>> {
    let bundle = fit_all(dataset, models)?;
    estimate_asymptotics_with_m0(dataset, models, m, bic_m0(&bundle))
}

/// Scaling of the residual-weighted moment `Xi_hat`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum XiEstimator {
    /// `(1/n) sum x x' e^2`.
    Hc0,
    /// `(1/(n-k)) sum x x' e^2`.
    #[default]
    Hc1,
}

impl std::str::FromStr for XiEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hc0" => Ok(Self::Hc0),
            "hc1" => Ok(Self::Hc1),
            _ => Err(Error::InvalidConfig(format!("unknown Xi estimator '{s}'"))),
        }
    }
}

/// Plug-in inputs with `Xi_hat = (1/n) sum x x' e^2`.
pub fn estimate_asymptotics_with_m0<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    m: usize,
    m0: usize,
) -> Result<AsymptoticInputs<T>> {
    estimate_asymptotics_xi(dataset, models, m, m0, XiEstimator::Hc0)
}

pub fn estimate_asymptotics_xi<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    m: usize,
    m0: usize,
    xi: XiEstimator,
) -> Result<AsymptoticInputs<T>> {
    let columns = models
        .chain_order()
        .ok_or_else(|| Error::InvalidModels("inference needs a nested candidate set".into()))?;
    let mm = models.len();
    if m0 >= mm {
        return Err(Error::InvalidConfig(format!("M0={m0} must be below the number of models {mm}")));
    }
    if m == 0 {
        return Err(Error::InvalidSize { n: dataset.n(), m, reason: "m must be positive" });
    }
    let dims = models.dims();
    let mut order: Vec<usize> = (0..mm).collect();
    order.sort_by_key(|&q| dims[q]);
    if order.iter().enumerate().any(|(i, &q)| q != i) {
        return Err(Error::InvalidModels("nested models must be listed in increasing size".into()));
    }
    let n = dataset.n();
    let k = columns.len();
    if n <= k {
        return Err(Error::InvalidModels(format!("full model has k={k} >= n={n}")));
    }
    let x = dataset.design(&columns);
    let full = crate::regression::fit_ols(dataset, &columns)?;
    let nf = T::of_usize(n);
    let sigma2_hat = full.rss / T::of_usize(n - k);
    let q_hat = x.gram().scale(T::one() / nf);
    let mut xi_hat = Matrix::zeros(k, k);
    for i in 0..n {
        let e2 = full.resid[i] * full.resid[i];
        for a in 0..k {
            let xa = x[(i, a)] * e2;
            for b in 0..k {
                xi_hat[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    let denom = match xi {
        XiEstimator::Hc0 => nf,
        XiEstimator::Hc1 => T::of_usize(n - k),
    };
    let mut xi_hat = xi_hat.scale(T::one() / denom);
    xi_hat.symmetrize();
    let q_inv = spd_inverse(&q_hat).ok_or(Error::SingularQ)?;

    let mut v = Vec::with_capacity(mm - m0);
    let mut hc_trace = Vec::with_capacity(mm - m0);
    for &kr in &dims[m0..] {
        let idx: Vec<usize> = (0..kr).collect();
        let qr = q_hat.select_rows(&idx).select_columns(&idx);
        let qr_inv = spd_inverse(&qr).ok_or(Error::SingularQ)?;
        let mut vr = Matrix::zeros(k, k);
        let mut tr = T::zero();
        for a in 0..kr {
            for b in 0..kr {
                vr[(a, b)] = qr_inv[(a, b)];
                tr += qr_inv[(a, b)] * xi_hat[(b, a)];
            }
        }
        v.push(vr);
        hc_trace.push(tr);
    }
    Ok(AsymptoticInputs { sigma2_hat, q_hat, xi_hat, q_inv, n, m, k, m0, dims, columns, v, hc_trace })
}

fn check_kind(method: Method) -> Result<()> {
    match method {
        Method::Btma | Method::Mma | Method::Jma => Ok(()),
        other => Err(Error::InvalidConfig(format!("no limiting distribution for method {other}"))),
    }
}

/// The `R x R` matrix whose simplex minimiser gives the limiting weights
/// for one normal draw `z`.
pub fn delta_matrix<T: Real>(inputs: &AsymptoticInputs<T>, z: &[T], method: Method) -> Result<Matrix<T>> {
    check_kind(method)?;
    if z.len() != inputs.k {
        return Err(Error::DimensionMismatch(format!("Z has length {}, expected {}", z.len(), inputs.k)));
    }
    let r = inputs.r();
    let zv: Vec<T> = inputs.v.iter().map(|v| v.quad_form(z)).collect();
    let kd: Vec<T> = inputs.dims[inputs.m0..].iter().map(|&d| T::of_usize(d)).collect();
    let s2 = inputs.sigma2_hat;
    let zq = inputs.q_inv.quad_form(z);
    let boot = T::of_usize(inputs.n) * s2 / T::of_usize(inputs.m);
    Ok(Matrix::from_fn(r, r, |a, b| {
        let (lo, hi) = (a.min(b), a.max(b));
        match method {
            Method::Btma => boot * kd[lo] + zq - zv[hi],
            Method::Mma => s2 * (kd[a] + kd[b]) - zv[hi],
            _ => inputs.hc_trace[a] + inputs.hc_trace[b] - zv[hi],
        }
    }))
}

/// Draws from the limiting distribution `sum_r nu_r V_r Z`.
#[derive(Debug, Clone, Serialize)]
pub struct LimitDrawSet<T> {
    /// `U` vectors in full-model coordinates.
    pub draws: Vec<Vec<T>>,
    pub nu: Vec<Vec<T>>,
    pub method: Method,
}

pub fn simulate_limit_draws<T: Real>(
    inputs: &AsymptoticInputs<T>,
    draws: usize,
    method: Method,
    seeds: SeedSpec,
) -> Result<LimitDrawSet<T>>
where
    StandardNormal: Distribution<T>,
{
    check_kind(method)?;
    if draws == 0 {
        return Err(Error::InvalidConfig("U must be at least 1".into()));
    }
    let f = psd_factor(&inputs.xi_hat);
    let k = inputs.k;
    let out = par_map(draws, |u| -> Result<(Vec<T>, Vec<T>)> {
        let mut rng = seeds.stream(u as u64);
        let g: Vec<T> = (0..f.ncols()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = f.matvec(&g);
        let delta = delta_matrix(inputs, &z, method)?;
        let wrap = |e: Error| Error::DrawFailed { draw: u + 1, source: Box::new(e) };
        let sol = solve_simplex_qp_default(&delta, &vec![T::zero(); delta.nrows()]).map_err(wrap)?;
        if !sol.converged() {
            return Err(wrap(Error::SolverNotConverged { iterations: sol.iterations }));
        }
        let mut d = vec![T::zero(); k];
        for (vr, &nu) in inputs.v.iter().zip(&sol.weights) {
            if nu > T::zero() {
                for (o, val) in d.iter_mut().zip(vr.matvec(&z)) {
                    *o += nu * val;
                }
            }
        }
        Ok((d, sol.weights))
    });
    let mut set = LimitDrawSet { draws: Vec::with_capacity(draws), nu: Vec::with_capacity(draws), method };
    for r in out {
        let (d, nu) = r?;
        set.draws.push(d);
        set.nu.push(nu);
    }
    Ok(set)
}

/// Sample quantile by linear interpolation between order statistics
/// (position `1 + (U - 1) p`).
pub fn quantile_type7<T: Real>(values: &[T], p: T) -> T {
    assert!(!values.is_empty(), "quantile of empty sample");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    quantile_sorted(&v, p)
}

fn quantile_sorted<T: Real>(v: &[T], p: T) -> T {
    let p = p.max(T::zero()).min(T::one());
    let h = T::of_usize(v.len() - 1) * p;
    let lo = h.floor();
    let i = lo.to_usize().unwrap();
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[i] + (h - lo) * (v[i + 1] - v[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval<T> {
    pub lower: T,
    pub upper: T,
    pub level: T,
    pub method: Method,
    /// Dataset column of the target coefficient.
    pub coefficient: usize,
}

impl<T: Real> ConfidenceInterval<T> {
    pub fn length(&self) -> T {
        self.upper - self.lower
    }

    pub fn contains(&self, value: T) -> bool {
        self.lower <= value && value <= self.upper
    }

    /// Interval for a coefficient the estimator sets to zero.
    pub fn excluded(level: T, method: Method, coefficient: usize) -> Self {
        Self { lower: T::zero(), upper: T::zero(), level, method, coefficient }
    }

    fn unbounded(level: T, method: Method, coefficient: usize) -> Self {
        Self { lower: T::neg_infinity(), upper: T::infinity(), level, method, coefficient }
    }
}

fn check_level<T: Real>(level: T) -> Result<()> {
    if level >= T::zero() && level <= T::one() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("level {level} outside [0, 1]")))
    }
}

/// Simulation-based interval for an averaging estimator with weights
/// `weights` over all `M` models.
pub fn ci_averaging<T: Real>(
    bundle: &FitBundle<T>,
    inputs: &AsymptoticInputs<T>,
    weights: &[T],
    draws: &LimitDrawSet<T>,
    j: usize,
    level: T,
) -> Result<ConfidenceInterval<T>> {
    check_level(level)?;
    if draws.draws.is_empty() {
        return Err(Error::InvalidConfig("empty draw set".into()));
    }
    let pos = inputs.position(j)?;
    if level == T::one() {
        return Ok(ConfidenceInterval::unbounded(level, draws.method, j));
    }
    let p = j.max(inputs.columns.iter().copied().max().unwrap_or(0)) + 1;
    let beta = bundle.averaged_coefficients(weights, p)[j];
    let mut ups: Vec<T> = draws.draws.iter().map(|d| d[pos]).collect();
    ups.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let alpha = T::one() - level;
    let half = alpha / T::of(2.0);
    let rn = T::of_usize(bundle.n).sqrt();
    let hi = quantile_sorted(&ups, T::one() - half);
    let lo = quantile_sorted(&ups, half);
    Ok(ConfidenceInterval { lower: beta - hi / rn, upper: beta - lo / rn, level, method: draws.method, coefficient: j })
}

/// `z_{1-alpha/2}` for a coverage level.
pub fn normal_critical<T: Real>(level: T) -> T {
    let alpha = T::one() - level;
    let normal = Normal::new(0.0, 1.0).unwrap();
    T::of(normal.inverse_cdf(1.0 - alpha.as_f64() / 2.0))
}

/// Normal-theory interval from model `q`'s OLS fit.
pub fn ci_ols_z<T: Real>(
    bundle: &FitBundle<T>,
    q: usize,
    j: usize,
    level: T,
    method: Method,
) -> Result<ConfidenceInterval<T>> {
    check_level(level)?;
    let fit = &bundle.fits[q];
    let pos = fit.position_of(j).ok_or(Error::CoefficientNotInModel { coef: j + 1, model: q + 1 })?;
    if bundle.n <= fit.k {
        return Err(Error::InvalidModels(format!("model {} has no residual degrees of freedom", q + 1)));
    }
    let s2 = fit.rss / T::of_usize(bundle.n - fit.k);
    let se = (s2 * fit.xtx_inv_diag[pos]).sqrt();
    let z = normal_critical(level);
    let beta = fit.theta_hat[pos];
    if z.is_infinite() {
        return Ok(ConfidenceInterval::unbounded(level, method, j));
    }
    Ok(ConfidenceInterval { lower: beta - z * se, upper: beta + z * se, level, method, coefficient: j })
}

/// Bootstrap-selection interval with its statistics.
#[derive(Debug, Clone, Serialize)]
pub struct BmsInterval<T> {
    pub interval: ConfidenceInterval<T>,
    pub selected: usize,
    /// `|sqrt(n) (beta*_j - beta_hat_j)|` per replicate.
    pub statistics: Vec<T>,
}

/// Interval centred at the last replicate's estimate under the selected
/// model, with half-width `z*(level)/sqrt(n)`.
pub fn ci_bms_bootstrap<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    m: usize,
    replicates: usize,
    j: usize,
    level: T,
    seeds: SeedSpec,
) -> Result<BmsInterval<T>> {
    check_level(level)?;
    let bundle = fit_all(dataset, models)?;
    let reps = run_replicates(dataset, models, m, replicates, seeds, ResampleKind::WithReplacement)?;
    let crit = criterion_from_replicates(&reps, dataset.n(), m, models.dims(), Method::Bms);
    let selected = bms_select(&crit);
    bms_interval(&bundle, &reps, selected, j, level)
}

pub(crate) fn bms_interval<T: Real>(
    bundle: &FitBundle<T>,
    reps: &[crate::criteria::Replicate<T>],
    selected: usize,
    j: usize,
    level: T,
) -> Result<BmsInterval<T>> {
    let fit = &bundle.fits[selected];
    let pos = fit.position_of(j).ok_or(Error::CoefficientNotInModel { coef: j + 1, model: selected + 1 })?;
    let rn = T::of_usize(bundle.n).sqrt();
    let beta_hat = fit.theta_hat[pos];
    let statistics: Vec<T> = reps.iter().map(|r| (rn * (r.coefs[selected][pos] - beta_hat)).abs()).collect();
    let z = quantile_type7(&statistics, level);
    let center = reps.last().unwrap().coefs[selected][pos];
    Ok(BmsInterval {
        interval: ConfidenceInterval {
            lower: center - z / rn,
            upper: center + z / rn,
            level,
            method: Method::Bms,
            coefficient: j,
        },
        selected,
        statistics,
    })
}

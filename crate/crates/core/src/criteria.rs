//! Weight-selection objectives as quadratic forms over the simplex, and
//! model-selection scores.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::parallel::par_map;
use crate::qp::{solve_simplex_qp_default, QpStatus};
use crate::regression::{argmin_tiebreak, fit_all, ic_or_neg_inf, CandidateModelSet, Dataset, FitBundle, IcKind};
use crate::resampling::{draw_guarded, ReplicateFitter, ResampleKind, SeedSpec, DEFAULT_MAX_RETRIES};
use crate::scalar::Real;

/// Registry of weighting, selection and interval methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "AIC")]
    Aic,
    #[serde(rename = "BIC")]
    Bic,
    Mallows,
    #[serde(rename = "S-AIC")]
    Saic,
    #[serde(rename = "S-BIC")]
    Sbic,
    #[serde(rename = "MMA")]
    Mma,
    #[serde(rename = "JMA")]
    Jma,
    #[serde(rename = "BMS")]
    Bms,
    Sub1,
    Sub2,
    Bag,
    #[serde(rename = "BTMA")]
    Btma,
    #[serde(rename = "JUST")]
    Just,
    #[serde(rename = "FULL")]
    Full,
}

impl Method {
    pub const ALL: [Method; 14] = [
        Method::Aic,
        Method::Bic,
        Method::Mallows,
        Method::Saic,
        Method::Sbic,
        Method::Mma,
        Method::Jma,
        Method::Bms,
        Method::Sub1,
        Method::Sub2,
        Method::Bag,
        Method::Btma,
        Method::Just,
        Method::Full,
    ];

    /// Methods usable for point estimation (risk and MSPE studies).
    pub const POINT: [Method; 12] = [
        Method::Aic,
        Method::Bic,
        Method::Mallows,
        Method::Saic,
        Method::Sbic,
        Method::Mma,
        Method::Jma,
        Method::Bms,
        Method::Sub1,
        Method::Sub2,
        Method::Bag,
        Method::Btma,
    ];

    /// Methods with a confidence-interval construction.
    pub const INTERVAL: [Method; 8] =
        [Method::Just, Method::Full, Method::Aic, Method::Bic, Method::Bms, Method::Mma, Method::Jma, Method::Btma];

    pub fn name(self) -> &'static str {
        match self {
            Method::Aic => "AIC",
            Method::Bic => "BIC",
            Method::Mallows => "Mallows",
            Method::Saic => "S-AIC",
            Method::Sbic => "S-BIC",
            Method::Mma => "MMA",
            Method::Jma => "JMA",
            Method::Bms => "BMS",
            Method::Sub1 => "Sub1",
            Method::Sub2 => "Sub2",
            Method::Bag => "Bag",
            Method::Btma => "BTMA",
            Method::Just => "JUST",
            Method::Full => "FULL",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let alias = match t.to_ascii_lowercase().as_str() {
            "cp" | "mallows" => Some(Method::Mallows),
            "saic" => Some(Method::Saic),
            "sbic" => Some(Method::Sbic),
            "bagging" => Some(Method::Bag),
            _ => None,
        };
        alias
            .or_else(|| Method::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(t)))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {t:?}")))
    }
}

/// `w'Aw + b'w + c` over the simplex, with provenance.
#[derive(Debug, Clone, Serialize)]
pub struct QuadraticCriterion<T> {
    pub a: Matrix<T>,
    pub b: Vec<T>,
    pub c: T,
    pub method: Method,
    /// Bootstrap replicates behind `a` (absent for closed-form criteria).
    pub replicates: Option<usize>,
    /// Resample size behind `a`.
    pub m: Option<usize>,
    pub dims: Vec<usize>,
}

impl<T: Real> QuadraticCriterion<T> {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn objective(&self, w: &[T]) -> T {
        crate::qp::qp_objective(&self.a, &self.b, w) + self.c
    }

    pub fn solve(&self) -> Result<MethodWeights<T>> {
        let s = solve_simplex_qp_default(&self.a, &self.b)?;
        Ok(MethodWeights {
            objective: Some(s.objective + self.c),
            weights: s.weights,
            method: self.method,
            iterations: s.iterations,
            status: Some(s.status),
        })
    }
}

/// Simplex weights produced by one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodWeights<T> {
    pub weights: Vec<T>,
    pub method: Method,
    pub objective: Option<T>,
    pub iterations: usize,
    pub status: Option<QpStatus>,
}

impl<T: Real> MethodWeights<T> {
    pub fn unit(m: usize, q: usize, method: Method) -> Self {
        Self { weights: crate::regression::unit_weights(m, q), method, objective: None, iterations: 0, status: None }
    }

    fn plain(weights: Vec<T>, method: Method) -> Self {
        Self { weights, method, objective: None, iterations: 0, status: None }
    }
}

/// Per-replicate results of a resampling loop.
#[derive(Debug, Clone)]
pub(crate) struct Replicate<T> {
    pub counts: Vec<u32>,
    pub coefs: Vec<Vec<T>>,
    /// `n x M` residuals of the resampled fits against the original rows.
    pub residuals: Matrix<T>,
}

pub(crate) fn run_replicates<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    m: usize,
    replicates: usize,
    seeds: SeedSpec,
    kind: ResampleKind,
) -> Result<Vec<Replicate<T>>> {
    if replicates == 0 {
        return Err(Error::InvalidConfig("B must be at least 1".into()));
    }
    let fitter = ReplicateFitter::new(dataset, models);
    let n = dataset.n();
    par_map(replicates, |b| {
        let mut rng = seeds.stream(b as u64);
        let plan = draw_guarded(&fitter.guard, n, m, kind, &mut rng, DEFAULT_MAX_RETRIES).map_err(|e| match e {
            Error::RankRetryExhausted { retries, .. } => Error::RankRetryExhausted { retries, replicate: b + 1 },
            other => other,
        })?;
        let coefs = fitter.fit(&plan)?;
        let residuals = fitter.residuals(&coefs);
        Ok(Replicate { counts: plan.counts, coefs, residuals })
    })
    .into_iter()
    .collect()
}

fn resampling_criterion<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    m: usize,
    replicates: usize,
    seeds: SeedSpec,
    kind: ResampleKind,
    method: Method,
) -> Result<QuadraticCriterion<T>> {
    let reps = run_replicates(dataset, models, m, replicates, seeds, kind)?;
    Ok(criterion_from_replicates(&reps, dataset.n(), m, models.dims(), method))
}

pub(crate) fn criterion_from_replicates<T: Real>(
    reps: &[Replicate<T>],
    n: usize,
    m: usize,
    dims: Vec<usize>,
    method: Method,
) -> QuadraticCriterion<T> {
    let mm = dims.len();
    let grams = par_map(reps.len(), |b| reps[b].residuals.gram());
    let mut a = Matrix::zeros(mm, mm);
    for g in &grams {
        a.add_assign(g);
    }
    let mut a = a.scale(T::one() / (T::of_usize(n) * T::of_usize(reps.len())));
    a.symmetrize();
    QuadraticCriterion { a, b: vec![T::zero(); mm], c: T::zero(), method, replicates: Some(reps.len()), m: Some(m), dims }
}

/// Bootstrap-pairs criterion `A = (1/(nB)) sum_b E_b'E_b`.
pub fn btma_criterion<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    m: usize,
    replicates: usize,
    seeds: SeedSpec,
) -> Result<QuadraticCriterion<T>> {
    resampling_criterion(dataset, models, m, replicates, seeds, ResampleKind::WithReplacement, Method::Btma)
}

/// As [`btma_criterion`] with sampling without replacement.
pub fn subsampling_criterion<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    m: usize,
    replicates: usize,
    seeds: SeedSpec,
) -> Result<QuadraticCriterion<T>> {
    resampling_criterion(dataset, models, m, replicates, seeds, ResampleKind::WithoutReplacement, Method::Sub1)
}

/// `floor(n / 2)`.
pub fn half_n(n: usize) -> usize {
    (n / 2).max(1)
}

/// Subsample sizes `floor(0.632 n)` and `floor(n^(2/3))`.
pub fn subsample_sizes(n: usize) -> (usize, usize) {
    let a = 632 * n / 1000;
    let n2 = (n as u128) * (n as u128);
    let mut r = (n2 as f64).cbrt().floor() as u128;
    while r * r * r > n2 {
        r -= 1;
    }
    while (r + 1) * (r + 1) * (r + 1) <= n2 {
        r += 1;
    }
    (a.max(1), (r as usize).max(1))
}

/// Mallows criterion: `A = E'E/n`, `b_q = 2 sigma^2 k_q / n`.
pub fn mma_criterion<T: Real>(bundle: &FitBundle<T>) -> QuadraticCriterion<T> {
    let n = T::of_usize(bundle.n);
    let mut a = bundle.residual_matrix.gram().scale(T::one() / n);
    a.symmetrize();
    let two_s2 = T::of(2.0) * bundle.sigma2_full / n;
    let b = bundle.fits.iter().map(|f| two_s2 * T::of_usize(f.k)).collect();
    QuadraticCriterion { a, b, c: T::zero(), method: Method::Mma, replicates: None, m: None, dims: bundle.dims() }
}

/// Leave-one-out residual matrix `e_i(q) / (1 - h_ii(q))`.
pub fn loo_residuals<T: Real>(bundle: &FitBundle<T>) -> Result<Matrix<T>> {
    let n = bundle.n;
    let mut e = Matrix::zeros(n, bundle.len());
    for (q, f) in bundle.fits.iter().enumerate() {
        for i in 0..n {
            let gap = T::one() - f.hat_diag[i];
            if gap <= T::epsilon() * T::of(64.0) {
                return Err(Error::LeverageOne { row: i + 1, model: q + 1 });
            }
            e[(i, q)] = f.resid[i] / gap;
        }
    }
    Ok(e)
}

/// Jackknife criterion: Gram of the leave-one-out residuals over `n`.
pub fn jma_criterion<T: Real>(bundle: &FitBundle<T>) -> Result<QuadraticCriterion<T>> {
    let e = loo_residuals(bundle)?;
    let mut a = e.gram().scale(T::one() / T::of_usize(bundle.n));
    a.symmetrize();
    Ok(QuadraticCriterion {
        a,
        b: vec![T::zero(); bundle.len()],
        c: T::zero(),
        method: Method::Jma,
        replicates: None,
        m: None,
        dims: bundle.dims(),
    })
}

/// `w_q` proportional to `exp(-(IC_q - min IC)/2)`.
///
/// Perfect fits (`IC = -inf`) share the mass equally.
pub fn smoothed_ic_weights<T: Real>(bundle: &FitBundle<T>, kind: IcKind) -> MethodWeights<T> {
    let ic: Vec<T> = bundle.fits.iter().map(|f| ic_or_neg_inf(f, bundle.n, kind)).collect();
    let method = match kind {
        IcKind::Aic => Method::Saic,
        IcKind::Bic => Method::Sbic,
    };
    MethodWeights::plain(smoothed_weights(&ic), method)
}

pub fn smoothed_weights<T: Real>(ic: &[T]) -> Vec<T> {
    let min = ic.iter().copied().fold(T::infinity(), T::min);
    let raw: Vec<T> = if min == T::neg_infinity() {
        ic.iter().map(|&v| if v == min { T::one() } else { T::zero() }).collect()
    } else {
        ic.iter().map(|&v| (-(v - min) / T::of(2.0)).exp()).collect()
    };
    let s: T = raw.iter().copied().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Vertex of the criterion with the smallest objective.
pub fn bms_select<T: Real>(criterion: &QuadraticCriterion<T>) -> usize {
    let scores: Vec<T> = (0..criterion.len()).map(|q| criterion.a[(q, q)] + criterion.b[q]).collect();
    argmin_tiebreak(&scores, &criterion.dims)
}

/// Bagged Mallows selection: per replicate, select by Cp on the resample
/// (variance from the resample's largest model) and predict at `x_new`;
/// average over replicates.
pub fn bagging_cp_predict<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    x_new: &Matrix<T>,
    replicates: usize,
    m: usize,
    seeds: SeedSpec,
) -> Result<Vec<T>> {
    if x_new.ncols() != dataset.p() {
        return Err(Error::DimensionMismatch(format!("x_new has {} columns, dataset has {}", x_new.ncols(), dataset.p())));
    }
    let largest = models.largest();
    let k_big = models.model(largest).len();
    if m <= k_big {
        return Err(Error::InvalidSize { n: dataset.n(), m, reason: "bagging needs m above the largest model dimension" });
    }
    let reps = run_replicates(dataset, models, m, replicates, seeds, ResampleKind::WithReplacement)?;
    let dims = models.dims();
    let preds = par_map(reps.len(), |b| {
        let rep = &reps[b];
        let q = replicate_cp_choice(rep, &dims, largest, m);
        predict_rows(x_new, models.model(q), &rep.coefs[q])
    });
    let mut out = vec![T::zero(); x_new.nrows()];
    for p in &preds {
        for (o, &v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    let scale = T::one() / T::of_usize(preds.len());
    Ok(out.into_iter().map(|v| v * scale).collect())
}

/// Cp choice on one resample; the resampled rss is `sum_i pi_i e_i^2`.
pub(crate) fn replicate_cp_choice<T: Real>(rep: &Replicate<T>, dims: &[usize], largest: usize, m: usize) -> usize {
    let rss: Vec<T> = (0..dims.len())
        .map(|q| rep.residuals.col(q).iter().zip(&rep.counts).map(|(&e, &c)| T::from_u32(c).unwrap() * e * e).sum())
        .collect();
    let sigma2 = rss[largest] / T::of_usize(m - dims[largest]);
    let mf = T::of_usize(m);
    let scores: Vec<T> = rss.iter().zip(dims).map(|(&r, &k)| r / mf + T::of(2.0) * sigma2 * T::of_usize(k) / mf).collect();
    argmin_tiebreak(&scores, dims)
}

pub(crate) fn predict_rows<T: Real>(x: &Matrix<T>, cols: &[usize], theta: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); x.nrows()];
    for (&c, &t) in cols.iter().zip(theta) {
        for (o, &v) in out.iter_mut().zip(x.col(c)) {
            *o += v * t;
        }
    }
    out
}

/// Score table and outcome of the resample-size search.
#[derive(Debug, Clone, Serialize)]
pub struct GcvSelection<T> {
    pub m: usize,
    /// `(m, GCV(m))` in candidate order.
    pub scores: Vec<(usize, T)>,
    pub weights: MethodWeights<T>,
}

/// Selects `m` by `GCV(m) = (||y - mu(w_m)||^2/n) / (1 - sum_q w_mq k_q / n)^2`.
///
/// The BTMA criterion for candidate `m` uses seed family `seeds.child(m)`.
/// Ties go to the smaller `m`.
pub fn gcv_select_m<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    candidate_ms: &[usize],
    replicates: usize,
    seeds: SeedSpec,
) -> Result<GcvSelection<T>> {
    let bundle = fit_all(dataset, models)?;
    gcv_select_m_with(dataset, models, &bundle, candidate_ms, replicates, seeds)
}

pub fn gcv_select_m_with<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    bundle: &FitBundle<T>,
    candidate_ms: &[usize],
    replicates: usize,
    seeds: SeedSpec,
) -> Result<GcvSelection<T>> {
    gcv_search(dataset, models, bundle, candidate_ms, replicates, seeds).map(|(g, _, _)| g)
}

/// GCV search that also returns the chosen `m`'s criterion and replicates.
pub(crate) fn gcv_search<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    bundle: &FitBundle<T>,
    candidate_ms: &[usize],
    replicates: usize,
    seeds: SeedSpec,
) -> Result<(GcvSelection<T>, QuadraticCriterion<T>, Vec<Replicate<T>>)> {
    if candidate_ms.is_empty() {
        return Err(Error::InvalidConfig("GCV needs at least one candidate m".into()));
    }
    let n = T::of_usize(dataset.n());
    let mut scores = Vec::with_capacity(candidate_ms.len());
    let mut best: Option<(T, usize, MethodWeights<T>, QuadraticCriterion<T>, Vec<Replicate<T>>)> = None;
    for &m in candidate_ms {
        let reps = run_replicates(dataset, models, m, replicates, seeds.child(m as u64), ResampleKind::WithReplacement)?;
        let crit = criterion_from_replicates(&reps, dataset.n(), m, models.dims(), Method::Btma);
        let w = crit.solve()?;
        let score = if candidate_ms.len() == 1 {
            T::zero()
        } else {
            let mu = bundle.averaged_fit(&w.weights);
            let rss = crate::regression::squared_distance(dataset.y(), &mu) / n;
            let denom = T::one() - bundle.effective_dimension(&w.weights) / n;
            if denom > T::zero() {
                rss / (denom * denom)
            } else {
                T::infinity()
            }
        };
        scores.push((m, score));
        let better = match &best {
            None => true,
            Some((s, bm, ..)) => score < *s || (score == *s && m < *bm),
        };
        if better {
            best = Some((score, m, w, crit, reps));
        }
    }
    let (_, m, weights, crit, reps) = best.unwrap();
    Ok((GcvSelection { m, scores, weights }, crit, reps))
}

/// Default GCV grid `{n/4, n/2, 3n/4, n}`, keeping sizes of at least
/// `1.5 k_max` so that full-rank resamples are readily found.
pub fn default_gcv_grid(n: usize, k_max: usize) -> Vec<usize> {
    let floor = (3 * k_max).div_ceil(2);
    let mut grid: Vec<usize> = [n / 4, n / 2, 3 * n / 4, n].into_iter().filter(|&m| m >= floor && m > 0).collect();
    grid.dedup();
    if grid.is_empty() {
        grid.push(n);
    }
    grid
}

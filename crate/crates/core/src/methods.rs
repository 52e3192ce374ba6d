//! Point estimation for every registry method on one dataset.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Serialize, Serializer};

use crate::criteria::{
    bagging_cp_predict, bms_select, criterion_from_replicates, default_gcv_grid, gcv_search, half_n, jma_criterion,
    mma_criterion, run_replicates, smoothed_ic_weights, subsample_sizes, subsampling_criterion, Method,
    MethodWeights, QuadraticCriterion, Replicate,
};
use crate::error::{Error, Result};
use crate::inference::{
    bic_m0, bms_interval, ci_averaging, ci_ols_z, estimate_asymptotics_xi, simulate_limit_draws, XiEstimator, ConfidenceInterval,
};
use crate::linalg::Matrix;
use crate::regression::{fit_all, select_by_cp, select_by_ic, CandidateModelSet, Dataset, FitBundle, IcKind};
use crate::resampling::{ResampleKind, SeedSpec};
use crate::scalar::Real;

/// How the BTMA resample size is chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MPolicy {
    Fixed(usize),
    HalfN,
    /// GCV over an explicit list, or over [`default_gcv_grid`] when empty.
    Gcv(Vec<usize>),
}

impl MPolicy {
    /// Candidate sizes for a sample of `n` rows and largest model `k_max`.
    pub fn candidates(&self, n: usize, k_max: usize) -> Vec<usize> {
        match self {
            MPolicy::Fixed(m) => vec![*m],
            MPolicy::HalfN => vec![half_n(n)],
            MPolicy::Gcv(list) if list.is_empty() => default_gcv_grid(n, k_max),
            MPolicy::Gcv(list) => list.clone(),
        }
    }
}

impl fmt::Display for MPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MPolicy::Fixed(m) => write!(f, "{m}"),
            MPolicy::HalfN => f.write_str("half_n"),
            MPolicy::Gcv(list) if list.is_empty() => f.write_str("gcv"),
            MPolicy::Gcv(list) => {
                let parts: Vec<String> = list.iter().map(|m| m.to_string()).collect();
                write!(f, "gcv:{}", parts.join(","))
            }
        }
    }
}

impl Serialize for MPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl FromStr for MPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == "half_n" {
            return Ok(MPolicy::HalfN);
        }
        if t == "gcv" {
            return Ok(MPolicy::Gcv(vec![]));
        }
        if let Some(rest) = t.strip_prefix("gcv:") {
            let list = rest
                .split(',')
                .map(|p| match p.trim().parse::<usize>() {
                    Ok(v) if v > 0 => Ok(v),
                    _ => Err(Error::InvalidConfig(format!("invalid m candidate {p:?} in {t:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(MPolicy::Gcv(list));
        }
        match t.parse::<usize>() {
            Ok(v) if v > 0 => Ok(MPolicy::Fixed(v)),
            _ => Err(Error::InvalidConfig(format!("invalid m policy {t:?} (expected N, half_n or gcv:a,b,c)"))),
        }
    }
}

/// Settings shared by the resampling methods.
#[derive(Debug, Clone, Serialize)]
pub struct PointSettings {
    pub m: MPolicy,
    pub replicates: usize,
    /// Bagging resample size; `None` means `n`.
    pub bag_m: Option<usize>,
}

impl Default for PointSettings {
    fn default() -> Self {
        Self { m: MPolicy::HalfN, replicates: 500, bag_m: None }
    }
}

/// BTMA weights with the resampling artefacts behind them.
#[derive(Debug, Clone)]
pub struct BootstrapFit<T> {
    pub m: usize,
    pub weights: MethodWeights<T>,
    pub criterion: QuadraticCriterion<T>,
    pub gcv_scores: Option<Vec<(usize, T)>>,
    pub(crate) replicates: Vec<Replicate<T>>,
}

/// BTMA under an `m` policy. Replicates for candidate `m` use
/// `seeds.child(m)`, so a fixed `m` and a one-element GCV list agree.
pub fn fit_btma<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    bundle: &FitBundle<T>,
    policy: &MPolicy,
    replicates: usize,
    seeds: SeedSpec,
) -> Result<BootstrapFit<T>> {
    let k_max = models.model(models.largest()).len();
    let candidates = policy.candidates(dataset.n(), k_max);
    if let MPolicy::Gcv(_) = policy {
        let (sel, criterion, reps) = gcv_search(dataset, models, bundle, &candidates, replicates, seeds)?;
        return Ok(BootstrapFit { m: sel.m, weights: sel.weights, criterion, gcv_scores: Some(sel.scores), replicates: reps });
    }
    let m = candidates[0];
    let reps = run_replicates(dataset, models, m, replicates, seeds.child(m as u64), ResampleKind::WithReplacement)?;
    let criterion = criterion_from_replicates(&reps, dataset.n(), m, models.dims(), Method::Btma);
    let weights = criterion.solve()?;
    Ok(BootstrapFit { m, weights, criterion, gcv_scores: None, replicates: reps })
}

/// One method's estimate on a dataset.
#[derive(Debug, Clone, Serialize)]
pub struct MethodOutcome<T> {
    pub method: Method,
    /// Simplex weights over the candidates (absent for bagging).
    pub weights: Option<Vec<T>>,
    /// Selected model for selection methods.
    pub selected: Option<usize>,
    /// Resample size for resampling methods.
    pub m: Option<usize>,
    /// Combined coefficients over the dataset's columns (absent for bagging).
    pub coefficients: Option<Vec<T>>,
    /// Predictions at the evaluation rows.
    pub prediction: Vec<T>,
}

fn weighted_outcome<T: Real>(
    method: Method,
    bundle: &FitBundle<T>,
    p: usize,
    x_eval: &Matrix<T>,
    weights: Vec<T>,
    selected: Option<usize>,
    m: Option<usize>,
) -> MethodOutcome<T> {
    let coefficients = bundle.averaged_coefficients(&weights, p);
    let prediction = x_eval.matvec(&coefficients);
    MethodOutcome { method, weights: Some(weights), selected, m, coefficients: Some(coefficients), prediction }
}

/// Estimates for each requested method, predicting at `x_eval`.
///
/// Each method draws from `seeds.tagged(name)`; BMS reuses the BTMA
/// replicates when both are requested.
pub fn estimate_methods<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    bundle: &FitBundle<T>,
    methods: &[Method],
    settings: &PointSettings,
    seeds: SeedSpec,
    x_eval: &Matrix<T>,
) -> Vec<(Method, Result<MethodOutcome<T>>)> {
    let p = dataset.p();
    let mm = models.len();
    let needs_boot = methods.iter().any(|m| matches!(m, Method::Btma | Method::Bms));
    let boot = needs_boot
        .then(|| fit_btma(dataset, models, bundle, &settings.m, settings.replicates, seeds.tagged(Method::Btma.name())));
    let (sub1, sub2) = subsample_sizes(dataset.n());

    methods
        .iter()
        .map(|&method| {
            let unit = |q: usize, m: Option<usize>| {
                Ok(weighted_outcome(method, bundle, p, x_eval, crate::regression::unit_weights(mm, q), Some(q), m))
            };
            let out = match method {
                Method::Aic => unit(select_by_ic(bundle, IcKind::Aic), None),
                Method::Bic => unit(select_by_ic(bundle, IcKind::Bic), None),
                Method::Mallows => {
                    if bundle.sigma2_full > T::zero() {
                        unit(select_by_cp(bundle), None)
                    } else {
                        let rss: Vec<T> = bundle.fits.iter().map(|f| f.rss).collect();
                        unit(crate::regression::argmin_tiebreak(&rss, &bundle.dims()), None)
                    }
                }
                Method::Saic | Method::Sbic => {
                    let kind = if method == Method::Saic { IcKind::Aic } else { IcKind::Bic };
                    let w = smoothed_ic_weights(bundle, kind);
                    Ok(weighted_outcome(method, bundle, p, x_eval, w.weights, None, None))
                }
                Method::Mma => mma_criterion(bundle)
                    .solve()
                    .map(|w| weighted_outcome(method, bundle, p, x_eval, w.weights, None, None)),
                Method::Jma => jma_criterion(bundle)
                    .and_then(|c| c.solve())
                    .map(|w| weighted_outcome(method, bundle, p, x_eval, w.weights, None, None)),
                Method::Btma => match boot.as_ref().unwrap() {
                    Ok(b) => Ok(weighted_outcome(method, bundle, p, x_eval, b.weights.weights.clone(), None, Some(b.m))),
                    Err(e) => Err(e.clone()),
                },
                Method::Bms => match boot.as_ref().unwrap() {
                    Ok(b) => unit(bms_select(&b.criterion), Some(b.m)),
                    Err(e) => Err(e.clone()),
                },
                Method::Sub1 | Method::Sub2 => {
                    let m = if method == Method::Sub1 { sub1 } else { sub2 };
                    subsampling_criterion(dataset, models, m, settings.replicates, seeds.tagged(method.name()))
                        .and_then(|c| c.solve())
                        .map(|w| weighted_outcome(method, bundle, p, x_eval, w.weights, None, Some(m)))
                }
                Method::Bag => {
                    let m = settings.bag_m.unwrap_or(dataset.n());
                    bagging_cp_predict(dataset, models, x_eval, settings.replicates, m, seeds.tagged(method.name())).map(
                        |prediction| MethodOutcome {
                            method,
                            weights: None,
                            selected: None,
                            m: Some(m),
                            coefficients: None,
                            prediction,
                        },
                    )
                }
                Method::Just | Method::Full => {
                    Err(Error::InvalidConfig(format!("{method} is an interval method only")))
                }
            };
            (method, out)
        })
        .collect()
}

/// Settings for the interval methods.
#[derive(Debug, Clone, Serialize)]
pub struct IntervalSettings {
    pub m: MPolicy,
    pub replicates: usize,
    /// Limiting-distribution draws `U`.
    pub draws: usize,
    pub level: f64,
    /// Number of under-fitted models; `None` selects it by BIC.
    pub m0: Option<usize>,
    pub xi: XiEstimator,
}

impl Default for IntervalSettings {
    fn default() -> Self {
        Self { m: MPolicy::Gcv(vec![]), replicates: 500, draws: 500, level: 0.95, m0: None, xi: XiEstimator::Hc1 }
    }
}

/// Intervals for each (method, coefficient) pair on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct IntervalRun<T> {
    pub m0: usize,
    /// BTMA resample size (when BTMA or BMS ran).
    pub m: Option<usize>,
    pub intervals: Vec<IntervalResult<T>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalResult<T> {
    pub method: Method,
    pub coefficient: usize,
    /// The estimator sets this coefficient to zero (the selected model omits it).
    pub excluded: bool,
    #[serde(flatten)]
    pub outcome: IntervalOutcome<T>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalOutcome<T> {
    Interval(ConfidenceInterval<T>),
    Error { kind: &'static str, message: String },
}

impl<T: Real> IntervalResult<T> {
    pub fn interval(&self) -> Option<&ConfidenceInterval<T>> {
        match &self.outcome {
            IntervalOutcome::Interval(ci) => Some(ci),
            IntervalOutcome::Error { .. } => None,
        }
    }
}

/// Confidence intervals for dataset columns `targets` by each of `methods`
/// (drawn from [`Method::INTERVAL`]).
///
/// Each method draws from `seeds.tagged(name)`; BMS reuses the BTMA replicates.
pub fn compute_intervals<T: Real>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    methods: &[Method],
    targets: &[usize],
    settings: &IntervalSettings,
    seeds: SeedSpec,
) -> Result<IntervalRun<T>>
where
    StandardNormal: Distribution<T>,
{
    if let Some(bad) = methods.iter().find(|m| !Method::INTERVAL.contains(m)) {
        return Err(Error::InvalidConfig(format!("method {bad} has no interval construction")));
    }
    if !models.is_nested() {
        return Err(Error::InvalidModels("intervals need a nested candidate set".into()));
    }
    let bundle = fit_all(dataset, models)?;
    let m0 = match settings.m0 {
        Some(m0) => m0,
        None => bic_m0(&bundle),
    };
    let level = T::of(settings.level);
    let mm = models.len();
    let needs_boot = methods.iter().any(|m| matches!(m, Method::Btma | Method::Bms));
    let boot = if needs_boot {
        Some(fit_btma(dataset, models, &bundle, &settings.m, settings.replicates, seeds.tagged(Method::Btma.name())))
    } else {
        None
    };
    let m_limit = match &boot {
        Some(Ok(b)) => b.m,
        _ => settings.m.candidates(dataset.n(), models.model(models.largest()).len())[0],
    };
    let needs_limit = methods.iter().any(|m| matches!(m, Method::Btma | Method::Mma | Method::Jma));
    let inputs = needs_limit.then(|| estimate_asymptotics_xi(dataset, models, m_limit, m0, settings.xi));

    let mut intervals = Vec::new();
    for &method in methods {
        let per_target: Result<Vec<Result<ConfidenceInterval<T>>>> = (|| {
            Ok(match method {
                Method::Just | Method::Full | Method::Aic | Method::Bic => {
                    let q = match method {
                        Method::Just => m0,
                        Method::Full => mm - 1,
                        Method::Aic => select_by_ic(&bundle, IcKind::Aic),
                        _ => select_by_ic(&bundle, IcKind::Bic),
                    };
                    targets.iter().map(|&j| ci_ols_z(&bundle, q, j, level, method)).collect()
                }
                Method::Bms => {
                    let b = boot.as_ref().unwrap().as_ref().map_err(Clone::clone)?;
                    let q = bms_select(&b.criterion);
                    targets.iter().map(|&j| bms_interval(&bundle, &b.replicates, q, j, level).map(|r| r.interval)).collect()
                }
                _ => {
                    let inputs = inputs.as_ref().unwrap().as_ref().map_err(Clone::clone)?;
                    let weights = match method {
                        Method::Btma => boot.as_ref().unwrap().as_ref().map_err(Clone::clone)?.weights.weights.clone(),
                        Method::Mma => mma_criterion(&bundle).solve()?.weights,
                        _ => jma_criterion(&bundle)?.solve()?.weights,
                    };
                    let limit_seeds = seeds.tagged(method.name()).tagged("limit");
                    let draws = simulate_limit_draws(inputs, settings.draws, method, limit_seeds)?;
                    targets.iter().map(|&j| ci_averaging(&bundle, inputs, &weights, &draws, j, level)).collect()
                }
            })
        })();
        match per_target {
            Ok(list) => {
                for (&j, r) in targets.iter().zip(list) {
                    intervals.push(interval_result(method, j, level, r));
                }
            }
            Err(e) => {
                for &j in targets {
                    intervals.push(interval_result(method, j, level, Err(e.clone())));
                }
            }
        }
    }
    let m = boot.and_then(|b| b.ok()).map(|b| b.m);
    Ok(IntervalRun { m0, m, intervals })
}

fn interval_result<T: Real>(method: Method, j: usize, level: T, r: Result<ConfidenceInterval<T>>) -> IntervalResult<T> {
    match r {
        Ok(ci) => IntervalResult { method, coefficient: j, excluded: false, outcome: IntervalOutcome::Interval(ci) },
        Err(Error::CoefficientNotInModel { .. }) if !matches!(method, Method::Btma | Method::Mma | Method::Jma) => {
            IntervalResult {
                method,
                coefficient: j,
                excluded: true,
                outcome: IntervalOutcome::Interval(ConfidenceInterval::excluded(level, method, j)),
            }
        }
        Err(e) => IntervalResult {
            method,
            coefficient: j,
            excluded: false,
            outcome: IntervalOutcome::Error { kind: e.kind(), message: e.to_string() },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn m_policy_parsing() {
        assert_eq!("half_n".parse::<MPolicy>().unwrap(), MPolicy::HalfN);
        assert_eq!("25".parse::<MPolicy>().unwrap(), MPolicy::Fixed(25));
        assert_eq!("gcv:10,20".parse::<MPolicy>().unwrap(), MPolicy::Gcv(vec![10, 20]));
        assert_eq!("gcv".parse::<MPolicy>().unwrap(), MPolicy::Gcv(vec![]));
        assert!("0".parse::<MPolicy>().is_err());
        assert!("gcv:1,x".parse::<MPolicy>().is_err());
        for s in ["half_n", "25", "gcv:10,20", "gcv"] {
            assert_eq!(s.parse::<MPolicy>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn fixed_m_equals_single_gcv_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(30, 3, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y = (0..30).map(|i| x[(i, 1)] + rng.random_range(-1.0..1.0)).collect();
        let ds = Dataset::new(y, x, None).unwrap();
        let models = CandidateModelSet::nested_prefix(&[1, 2, 3], 30, 3).unwrap();
        let bundle = fit_all(&ds, &models).unwrap();
        let a = fit_btma(&ds, &models, &bundle, &MPolicy::Fixed(15), 40, SeedSpec::new(1)).unwrap();
        let b = fit_btma(&ds, &models, &bundle, &MPolicy::Gcv(vec![15]), 40, SeedSpec::new(1)).unwrap();
        assert_eq!(a.weights.weights, b.weights.weights);
    }

    #[test]
    fn all_point_methods_produce_simplex_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::from_fn(40, 4, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y = (0..40).map(|i| 1.0 + x[(i, 1)] - x[(i, 2)] + rng.random_range(-1.0..1.0)).collect();
        let ds = Dataset::new(y, x, None).unwrap();
        let models = CandidateModelSet::nested_prefix(&[1, 2, 3, 4], 40, 4).unwrap();
        let bundle = fit_all(&ds, &models).unwrap();
        let settings = PointSettings { replicates: 30, ..PointSettings::default() };
        let out = estimate_methods(&ds, &models, &bundle, &Method::POINT, &settings, SeedSpec::new(2), ds.x());
        for (m, r) in out {
            let r = r.unwrap_or_else(|e| panic!("{m}: {e}"));
            assert_eq!(r.prediction.len(), 40);
            if let Some(w) = r.weights {
                let s: f64 = w.iter().sum();
                assert!((s - 1.0).abs() < 1e-10, "{m}");
                assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}

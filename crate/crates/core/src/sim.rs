//! Simulation designs and seeded Monte Carlo experiments.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::criteria::Method;
use crate::error::{Error, Result};
use crate::inference::XiEstimator;
use crate::linalg::{cholesky, Matrix};
use crate::methods::{compute_intervals, estimate_methods, fit_btma, IntervalSettings, MPolicy, PointSettings};
use crate::parallel::par_map;
use crate::regression::{fit_all, squared_distance, CandidateModelSet, Dataset};
use crate::resampling::SeedSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Largest `r` with `r^3 <= 27 n`, i.e. `floor(3 n^(1/3))`.
pub fn hansen_num_models(n: usize) -> usize {
    let target = 27 * n as u128;
    let mut r = (target as f64).cbrt().floor() as u128;
    while r * r * r > target {
        r -= 1;
    }
    while (r + 1).pow(3) <= target {
        r += 1;
    }
    r as usize
}

#[derive(Debug, Clone, Serialize)]
pub struct HansenConfig {
    pub n: usize,
    pub alpha: f64,
    pub r2: f64,
    /// Size of the regressor pool generating the mean.
    pub p: usize,
    pub reps: usize,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub m: MPolicy,
}

impl Default for HansenConfig {
    fn default() -> Self {
        Self { n: 150, alpha: 1.0, r2: 0.5, p: 100, reps: 200, replicates: 500, m: MPolicy::HalfN }
    }
}

impl HansenConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.r2 > 0.0 && self.r2 < 1.0) {
            errs.push(format!("r2={} must lie in (0, 1)", self.r2));
        }
        if !(self.alpha > 0.0) {
            errs.push(format!("alpha={} must be positive", self.alpha));
        }
        if self.reps == 0 {
            errs.push("reps must be positive".into());
        }
        if self.replicates == 0 {
            errs.push("B must be positive".into());
        }
        let mm = hansen_num_models(self.n);
        if mm == 0 || mm >= self.n {
            errs.push(format!("n={} gives {mm} candidate models; need 1 <= M < n", self.n));
        }
        if self.p < mm {
            errs.push(format!("p={} must be at least M={mm}", self.p));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs.join("; ")))
        }
    }

    pub fn c(&self) -> f64 {
        (self.r2 / (1.0 - self.r2)).sqrt()
    }

    /// `theta_j = c sqrt(2 alpha) j^(-alpha - 1/2)`, `j = 1..p`.
    pub fn theta(&self) -> Vec<f64> {
        let scale = self.c() * (2.0 * self.alpha).sqrt();
        (1..=self.p).map(|j| scale * (j as f64).powf(-self.alpha - 0.5)).collect()
    }
}

/// One draw of the infinite-order regression design. The dataset carries
/// the `M` candidate regressors; `mu` uses all `p`.
pub fn gen_hansen<R: Rng + ?Sized>(cfg: &HansenConfig, rng: &mut R) -> (Dataset<f64>, Vec<f64>, CandidateModelSet) {
    let n = cfg.n;
    let mm = hansen_num_models(n);
    let theta = cfg.theta();
    let mut x = Matrix::zeros(n, mm);
    let mut mu = vec![0.0; n];
    let mut y = vec![0.0; n];
    for i in 0..n {
        for j in 0..cfg.p {
            let v = if j == 0 { 1.0 } else { StandardNormal.sample(rng) };
            if j < mm {
                x[(i, j)] = v;
            }
            mu[i] += theta[j] * v;
        }
        let e: f64 = StandardNormal.sample(rng);
        y[i] = mu[i] + e;
    }
    let dims: Vec<usize> = (1..=mm).collect();
    let models = CandidateModelSet::nested_prefix(&dims, n, mm).expect("valid nested design");
    (Dataset::new(y, x, None).expect("finite design"), mu, models)
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodRisk {
    pub method: Method,
    pub mean_risk: f64,
    pub mc_se: f64,
    /// Mean of `L(w_hat) / min_q L(unit_q)`.
    pub mean_ratio: f64,
    pub ratio_se: f64,
    pub completed: usize,
    pub failed: usize,
    pub failures: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub schema_version: u32,
    pub experiment: &'static str,
    pub config: HansenConfig,
    pub seed: u64,
    pub methods: Vec<MethodRisk>,
    /// Per-replication losses, `None` where the method failed.
    #[serde(skip)]
    pub losses: Vec<Vec<Option<f64>>>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl RiskReport {
    pub fn method(&self, m: Method) -> Option<&MethodRisk> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// Mean and standard error of the paired loss difference `a - b` over
    /// replications where both succeeded.
    pub fn paired_difference(&self, a: Method, b: Method) -> Option<(f64, f64, usize)> {
        let ia = self.methods.iter().position(|r| r.method == a)?;
        let ib = self.methods.iter().position(|r| r.method == b)?;
        let d: Vec<f64> = self.losses.iter().filter_map(|row| Some(row[ia]? - row[ib]?)).collect();
        let (mean, se) = mean_se(&d);
        Some((mean, se, d.len()))
    }
}

fn summarize_failures(errs: &[Option<String>]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for k in errs.iter().flatten() {
        *out.entry(k.clone()).or_insert(0) += 1;
    }
    out
}

pub fn run_risk_experiment(cfg: &HansenConfig, methods: &[Method], seeds: SeedSpec) -> Result<RiskReport> {
    cfg.validate()?;
    if let Some(bad) = methods.iter().find(|m| !Method::POINT.contains(m)) {
        return Err(Error::InvalidConfig(format!("method {bad} is not a point-estimation method")));
    }
    let settings = PointSettings { m: cfg.m.clone(), replicates: cfg.replicates, bag_m: None };
    let rows = par_map(cfg.reps, |rep| {
        let rep_seeds = seeds.child(rep as u64);
        let mut rng = rep_seeds.tagged("data").stream(0);
        let (ds, mu, models) = gen_hansen(cfg, &mut rng);
        let bundle = match fit_all(&ds, &models) {
            Ok(b) => b,
            Err(e) => return vec![Err(e.kind().to_string()); methods.len()],
        };
        let best_vertex =
            bundle.fits.iter().map(|f| squared_distance(&f.mu_hat, &mu)).fold(f64::INFINITY, f64::min);
        estimate_methods(&ds, &models, &bundle, methods, &settings, rep_seeds, ds.x())
            .into_iter()
            .map(|(_, r)| {
                r.map(|o| {
                    let loss = squared_distance(&o.prediction, &mu);
                    (loss, loss / best_vertex)
                })
                .map_err(|e| e.kind().to_string())
            })
            .collect::<Vec<_>>()
    });
    let losses: Vec<Vec<Option<f64>>> =
        rows.iter().map(|row| row.iter().map(|r| r.as_ref().ok().map(|v| v.0)).collect()).collect();
    let methods = methods
        .iter()
        .enumerate()
        .map(|(i, &method)| {
            let ok: Vec<(f64, f64)> = rows.iter().filter_map(|row| row[i].as_ref().ok().copied()).collect();
            let errs: Vec<Option<String>> = rows.iter().map(|row| row[i].as_ref().err().cloned()).collect();
            let (mean_risk, mc_se) = mean_se(&ok.iter().map(|v| v.0).collect::<Vec<_>>());
            let (mean_ratio, ratio_se) = mean_se(&ok.iter().map(|v| v.1).collect::<Vec<_>>());
            MethodRisk {
                method,
                mean_risk,
                mc_se,
                mean_ratio,
                ratio_se,
                completed: ok.len(),
                failed: cfg.reps - ok.len(),
                failures: summarize_failures(&errs),
            }
        })
        .collect();
    Ok(RiskReport { schema_version: SCHEMA_VERSION, experiment: "risk", config: cfg.clone(), seed: seeds.master_seed, methods, losses })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CiCase {
    #[serde(rename = "1")]
    Case1,
    #[serde(rename = "2")]
    Case2,
}

#[derive(Debug, Clone, Serialize)]
pub struct CiCaseConfig {
    pub case: CiCase,
    pub n: usize,
    pub eta: f64,
    pub rho: f64,
    pub c: f64,
    pub reps: usize,
    #[serde(rename = "U")]
    pub draws: usize,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub level: f64,
    pub m: MPolicy,
    /// Under-fitted model count; `None` selects it by BIC.
    pub m0: Option<usize>,
    /// Target coefficients as 0-based dataset columns.
    pub targets: Vec<usize>,
    pub xi: XiEstimator,
}

impl Default for CiCaseConfig {
    fn default() -> Self {
        Self {
            case: CiCase::Case1,
            n: 100,
            eta: 0.5,
            rho: 0.7,
            c: 0.5,
            reps: 500,
            draws: 500,
            replicates: 500,
            level: 0.95,
            m: MPolicy::Gcv(vec![]),
            m0: Some(CI_DESIGN_M0),
            targets: vec![2, 3],
            xi: XiEstimator::Hc1,
        }
    }
}

pub const CI_K: usize = 10;
pub const CI_DESIGN_M0: usize = 4;

impl CiCaseConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n <= CI_K {
            errs.push(format!("n={} must exceed k={CI_K}", self.n));
        }
        if !(self.eta > 0.0) {
            errs.push(format!("eta={} must be positive", self.eta));
        }
        if !(self.level >= 0.0 && self.level <= 1.0) {
            errs.push(format!("level={} must lie in [0, 1]", self.level));
        }
        for (name, v) in [("reps", self.reps), ("U", self.draws), ("B", self.replicates)] {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        if let Some(m0) = self.m0 {
            if m0 >= CI_K - 1 {
                errs.push(format!("m0={m0} must be below the {} candidate models", CI_K - 1));
            }
        }
        if let Some(&t) = self.targets.iter().find(|&&t| t >= CI_K) {
            errs.push(format!("target column {t} outside 0..{CI_K}"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs.join("; ")))
        }
    }

    pub fn beta(&self) -> Vec<f64> {
        let c = self.c;
        let tail = match self.case {
            CiCase::Case1 => [c, c * c, c.powi(3), c.powi(4)],
            CiCase::Case2 => [c.powi(4), c.powi(3), c * c, c],
        };
        let mut b = vec![1.0, 1.0];
        b.extend(tail);
        b.extend([0.0; 4]);
        b
    }

    /// Regressor covariance: `rho` on the diagonal, `rho^2` elsewhere.
    pub fn sigma_x(&self) -> Matrix<f64> {
        Matrix::from_fn(CI_K - 1, CI_K - 1, |a, b| if a == b { self.rho } else { self.rho * self.rho })
    }
}

/// One draw of the confidence-interval design with nested candidates of
/// sizes `2..=10` (the first two regressors are always included).
pub fn gen_ci_case<R: Rng + ?Sized>(
    cfg: &CiCaseConfig,
    rng: &mut R,
) -> Result<(Dataset<f64>, Vec<f64>, CandidateModelSet)> {
    let l = cholesky(&cfg.sigma_x()).ok_or(Error::SigmaNotPD)?;
    let beta = cfg.beta();
    let n = cfg.n;
    let mut x = Matrix::zeros(n, CI_K);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let g: Vec<f64> = (0..CI_K - 1).map(|_| StandardNormal.sample(rng)).collect();
        let z = l.matvec(&g);
        x[(i, 0)] = 1.0;
        for j in 1..CI_K {
            x[(i, j)] = z[j - 1];
        }
        let s: f64 = StandardNormal.sample(rng);
        y[i] = (0..CI_K).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + cfg.eta * s;
    }
    let dims: Vec<usize> = (2..=CI_K).collect();
    let models = CandidateModelSet::nested_prefix(&dims, n, CI_K)?;
    Ok((Dataset::new(y, x, None)?, beta, models))
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageCell {
    pub method: Method,
    /// 0-based dataset column.
    pub target: usize,
    pub cp: f64,
    pub cp_se: f64,
    /// Over replications where the coefficient was estimated (not excluded).
    pub mean_length: f64,
    pub length_se: f64,
    pub completed: usize,
    pub failed: usize,
    pub excluded: usize,
    pub failures: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub schema_version: u32,
    pub experiment: &'static str,
    pub config: CiCaseConfig,
    pub seed: u64,
    pub cells: Vec<CoverageCell>,
}

impl CoverageReport {
    pub fn cell(&self, method: Method, target: usize) -> Option<&CoverageCell> {
        self.cells.iter().find(|c| c.method == method && c.target == target)
    }
}

pub fn run_coverage_experiment(cfg: &CiCaseConfig, methods: &[Method], seeds: SeedSpec) -> Result<CoverageReport> {
    cfg.validate()?;
    if let Some(bad) = methods.iter().find(|m| !Method::INTERVAL.contains(m)) {
        return Err(Error::InvalidConfig(format!("method {bad} has no interval construction")));
    }
    let settings = IntervalSettings {
        m: cfg.m.clone(),
        replicates: cfg.replicates,
        draws: cfg.draws,
        level: cfg.level,
        m0: cfg.m0,
        xi: cfg.xi,
    };
    let nt = cfg.targets.len();
    // Per rep: for each (method, target) either (covered, length, excluded) or an error kind.
    let rows = par_map(cfg.reps, |rep| -> Vec<std::result::Result<(bool, f64, bool), String>> {
        let rep_seeds = seeds.child(rep as u64);
        let mut rng = rep_seeds.tagged("data").stream(0);
        let (ds, beta, models) = match gen_ci_case(cfg, &mut rng) {
            Ok(v) => v,
            Err(e) => return vec![Err(e.kind().to_string()); methods.len() * nt],
        };
        match compute_intervals(&ds, &models, methods, &cfg.targets, &settings, rep_seeds) {
            Ok(run) => run
                .intervals
                .iter()
                .map(|r| match r.interval() {
                    Some(ci) => Ok((ci.contains(beta[r.coefficient]), ci.length(), r.excluded)),
                    None => Err(match &r.outcome {
                        crate::methods::IntervalOutcome::Error { kind, .. } => kind.to_string(),
                        _ => unreachable!(),
                    }),
                })
                .collect(),
            Err(e) => vec![Err(e.kind().to_string()); methods.len() * nt],
        }
    });
    let mut cells = Vec::with_capacity(methods.len() * nt);
    for (mi, &method) in methods.iter().enumerate() {
        for (ti, &target) in cfg.targets.iter().enumerate() {
            let idx = mi * nt + ti;
            let ok: Vec<(bool, f64, bool)> = rows.iter().filter_map(|r| r[idx].as_ref().ok().copied()).collect();
            let errs: Vec<Option<String>> = rows.iter().map(|r| r[idx].as_ref().err().cloned()).collect();
            let cover: Vec<f64> = ok.iter().map(|v| if v.0 { 1.0 } else { 0.0 }).collect();
            let (cp, _) = mean_se(&cover);
            let cp_se = (cp * (1.0 - cp) / ok.len() as f64).sqrt();
            let (mean_length, length_se) = mean_se(&ok.iter().filter(|v| !v.2).map(|v| v.1).collect::<Vec<_>>());
            cells.push(CoverageCell {
                method,
                target,
                cp,
                cp_se,
                mean_length,
                length_se,
                completed: ok.len(),
                failed: cfg.reps - ok.len(),
                excluded: ok.iter().filter(|v| v.2).count(),
                failures: summarize_failures(&errs),
            });
        }
    }
    Ok(CoverageReport { schema_version: SCHEMA_VERSION, experiment: "coverage", config: cfg.clone(), seed: seeds.master_seed, cells })
}

/// Mean BTMA weight mass on the first `m0` (under-fitted) models.
#[derive(Debug, Clone, Serialize)]
pub struct UnderfitWeight {
    pub m: usize,
    pub mean_mass: f64,
    pub mc_se: f64,
    pub completed: usize,
    pub failed: usize,
}

/// BTMA under-fitted weight mass in the interval design for each resample size in `ms`.
pub fn run_underfit_weight_experiment(cfg: &CiCaseConfig, ms: &[usize], seeds: SeedSpec) -> Result<Vec<UnderfitWeight>> {
    cfg.validate()?;
    let m0 = cfg.m0.unwrap_or(CI_DESIGN_M0);
    let rows = par_map(cfg.reps, |rep| -> Vec<Option<f64>> {
        let rep_seeds = seeds.child(rep as u64);
        let mut rng = rep_seeds.tagged("data").stream(0);
        let Ok((ds, _, models)) = gen_ci_case(cfg, &mut rng) else { return vec![None; ms.len()] };
        let Ok(bundle) = fit_all(&ds, &models) else { return vec![None; ms.len()] };
        ms.iter()
            .map(|&m| {
                fit_btma(&ds, &models, &bundle, &MPolicy::Fixed(m), cfg.replicates, rep_seeds.tagged(Method::Btma.name()))
                    .ok()
                    .map(|b| b.weights.weights[..m0].iter().sum())
            })
            .collect()
    });
    Ok(ms
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let ok: Vec<f64> = rows.iter().filter_map(|r| r[i]).collect();
            let (mean_mass, mc_se) = mean_se(&ok);
            UnderfitWeight { m, mean_mass, mc_se, completed: ok.len(), failed: cfg.reps - ok.len() }
        })
        .collect())
}

/// One line of a tidy CSV report.
#[derive(Debug, Clone, PartialEq)]
pub struct TidyRow {
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub mc_se: Option<f64>,
}

/// Reports exportable as tidy CSV (`method, metric, value, mc_se` plus config fields).
pub trait TidyReport: Serialize {
    fn tidy_rows(&self) -> Vec<TidyRow>;
    fn config_fields(&self) -> Vec<(String, String)>;
}

fn config_pairs<C: Serialize>(config: &C, seed: u64) -> Vec<(String, String)> {
    let mut out = Vec::new();
    if let serde_json::Value::Object(map) = serde_json::to_value(config).expect("serializable config") {
        for (k, v) in map {
            let s = match v {
                serde_json::Value::String(s) => s,
                serde_json::Value::Null => String::new(),
                other => other.to_string(),
            };
            out.push((k, s));
        }
    }
    out.push(("seed".into(), seed.to_string()));
    out.push(("schema_version".into(), SCHEMA_VERSION.to_string()));
    out
}

impl TidyReport for RiskReport {
    fn tidy_rows(&self) -> Vec<TidyRow> {
        let mut rows = Vec::new();
        for r in &self.methods {
            let name = r.method.name().to_string();
            rows.push(TidyRow { method: name.clone(), metric: "risk".into(), value: r.mean_risk, mc_se: Some(r.mc_se) });
            rows.push(TidyRow { method: name.clone(), metric: "risk_ratio".into(), value: r.mean_ratio, mc_se: Some(r.ratio_se) });
            rows.push(TidyRow { method: name.clone(), metric: "completed".into(), value: r.completed as f64, mc_se: None });
            rows.push(TidyRow { method: name, metric: "failed".into(), value: r.failed as f64, mc_se: None });
        }
        rows
    }

    fn config_fields(&self) -> Vec<(String, String)> {
        config_pairs(&self.config, self.seed)
    }
}

impl TidyReport for CoverageReport {
    fn tidy_rows(&self) -> Vec<TidyRow> {
        let mut rows = Vec::new();
        for c in &self.cells {
            let name = c.method.name().to_string();
            let t = format!("beta{}", c.target + 1);
            rows.push(TidyRow { method: name.clone(), metric: format!("cp_{t}"), value: c.cp, mc_se: Some(c.cp_se) });
            rows.push(TidyRow { method: name.clone(), metric: format!("len_{t}"), value: c.mean_length, mc_se: Some(c.length_se) });
            rows.push(TidyRow { method: name.clone(), metric: format!("completed_{t}"), value: c.completed as f64, mc_se: None });
            rows.push(TidyRow { method: name, metric: format!("failed_{t}"), value: c.failed as f64, mc_se: None });
        }
        rows
    }

    fn config_fields(&self) -> Vec<(String, String)> {
        config_pairs(&self.config, self.seed)
    }
}

pub fn write_json<R: Serialize, W: Write>(report: &R, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report).map_err(|e| Error::Io(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_tidy_csv<R: TidyReport, W: Write>(report: &R, out: W) -> Result<()> {
    write_rows_csv(&report.tidy_rows(), &report.config_fields(), out)
}

pub fn write_rows_csv<W: Write>(rows: &[TidyRow], config: &[(String, String)], out: W) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["method", "metric", "value", "mc_se"].iter().map(|s| s.to_string()).collect();
    header.extend(config.iter().map(|(k, _)| k.clone()));
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.method.clone(), r.metric.clone(), fmt_num(r.value), r.mc_se.map(fmt_num).unwrap_or_default()];
        rec.extend(config.iter().map(|(_, v)| v.clone()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hansen_model_counts() {
        assert_eq!(hansen_num_models(150), 15);
        assert_eq!(hansen_num_models(50), 11);
        assert_eq!(hansen_num_models(400), 22);
        assert_eq!(hansen_num_models(1000), 30);
    }

    #[test]
    fn hansen_coefficients() {
        let cfg = HansenConfig { alpha: 0.5, r2: 0.5, ..HansenConfig::default() };
        assert_abs_diff_eq!(cfg.c(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.theta()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.theta()[3], 4f64.powf(-1.0), epsilon = 1e-15);
    }

    #[test]
    fn hansen_shapes() {
        let cfg = HansenConfig { n: 50, ..HansenConfig::default() };
        let (ds, mu, models) = gen_hansen(&cfg, &mut SeedSpec::new(1).stream(0));
        assert_eq!(ds.n(), 50);
        assert_eq!(ds.p(), 11);
        assert_eq!(mu.len(), 50);
        assert_eq!(models.len(), 11);
        assert!(ds.x().col(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ci_design_values() {
        let cfg = CiCaseConfig::default();
        let b = cfg.beta();
        assert_eq!(b.len(), 10);
        assert_abs_diff_eq!(b[2], 0.5);
        assert_abs_diff_eq!(b[3], 0.25);
        let s = cfg.sigma_x();
        assert_abs_diff_eq!(s[(0, 0)], 0.7);
        assert_abs_diff_eq!(s[(0, 1)], 0.49, epsilon = 1e-15);
        let c2 = CiCaseConfig { case: CiCase::Case2, ..cfg };
        assert_abs_diff_eq!(c2.beta()[2], 0.0625);
        assert_abs_diff_eq!(c2.beta()[3], 0.125);
    }

    #[test]
    fn ci_design_not_pd_guard() {
        let cfg = CiCaseConfig { rho: -0.9, ..CiCaseConfig::default() };
        assert_eq!(gen_ci_case(&cfg, &mut SeedSpec::new(1).stream(0)).unwrap_err(), Error::SigmaNotPD);
    }

    #[test]
    fn config_validation_lists_all_problems() {
        let cfg = HansenConfig { r2: 1.5, reps: 0, replicates: 0, ..HansenConfig::default() };
        let Error::InvalidConfig(msg) = cfg.validate().unwrap_err() else { panic!() };
        assert!(msg.contains("r2") && msg.contains("reps") && msg.contains('B'));
    }

    #[test]
    fn single_rep_equals_direct_loss() {
        let cfg = HansenConfig { n: 50, reps: 1, replicates: 20, ..HansenConfig::default() };
        let seeds = SeedSpec::new(9);
        let report = run_risk_experiment(&cfg, &[Method::Aic, Method::Btma], seeds).unwrap();
        let rep_seeds = seeds.child(0);
        let (ds, mu, models) = gen_hansen(&cfg, &mut rep_seeds.tagged("data").stream(0));
        let bundle = fit_all(&ds, &models).unwrap();
        let q = crate::regression::select_by_ic(&bundle, crate::regression::IcKind::Aic);
        let direct = squared_distance(&bundle.fits[q].mu_hat, &mu);
        assert_abs_diff_eq!(report.method(Method::Aic).unwrap().mean_risk, direct, epsilon = 1e-12);
        assert_eq!(report.method(Method::Btma).unwrap().completed, 1);
    }

    #[test]
    fn tidy_csv_layout() {
        let cfg = HansenConfig { n: 50, reps: 2, replicates: 10, ..HansenConfig::default() };
        let report = run_risk_experiment(&cfg, &[Method::Bic], SeedSpec::new(1)).unwrap();
        let mut buf = Vec::new();
        write_tidy_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("method,metric,value,mc_se,"));
        assert!(header.contains("seed") && header.contains("schema_version"));
        assert_eq!(text.lines().count(), 1 + 4);
    }
}

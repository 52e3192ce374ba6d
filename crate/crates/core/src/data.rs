//! CSV ingestion, standardization, variable ordering and train/test studies.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::seq::index::sample;
use serde::Serialize;

use crate::criteria::Method;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Qr};
use crate::methods::{estimate_methods, PointSettings};
use crate::parallel::par_map;
use crate::regression::{fit_all, CandidateModelSet, Dataset};
use crate::resampling::SeedSpec;
use crate::sim::SCHEMA_VERSION;

pub const INTERCEPT: &str = "(Intercept)";

/// Reads a headed, comma-separated numeric file. Regressors keep file order
/// behind a prepended intercept column.
pub fn load_csv(path: impl AsRef<Path>, response: &str) -> Result<Dataset<f64>> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_csv_reader(file, response)
}

pub fn load_csv_reader<R: Read>(input: R, response: &str) -> Result<Dataset<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::ParseError { row: 0, col: 0, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let ycol = header
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::MissingColumn { name: response.to_string() })?;
    let xcols: Vec<usize> = (0..header.len()).filter(|&c| c != ycol).collect();
    let mut y = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::ParseError { row, col: 0, message: e.to_string() })?;
        if rec.len() != header.len() {
            return Err(Error::ParseError {
                row,
                col: rec.len().min(header.len()),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let parse = |c: usize| -> Result<f64> {
            rec[c].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(Error::NonNumeric { row, col: c + 1 })
        };
        y.push(parse(ycol)?);
        let mut xr = Vec::with_capacity(xcols.len() + 1);
        xr.push(1.0);
        for &c in &xcols {
            xr.push(parse(c)?);
        }
        rows.push(xr);
    }
    if rows.is_empty() {
        return Err(Error::InvalidDataset("no data rows".into()));
    }
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(xcols.iter().map(|&c| header[c].clone()));
    Dataset::new(y, Matrix::from_rows(&rows), Some(names))
}

/// Affine map applied to the response and the non-intercept columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transform {
    pub y_mean: f64,
    pub y_sd: f64,
    /// Per-column `(mean, sd)`; `None` for intercept columns.
    pub columns: Vec<Option<(f64, f64)>>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn is_intercept(col: &[f64]) -> bool {
    col.iter().all(|&v| v == 1.0)
}

fn column_label(ds: &Dataset<f64>, j: usize) -> String {
    ds.column_names().map(|n| n[j].clone()).unwrap_or_else(|| format!("x{}", j + 1))
}

impl Transform {
    /// Fits sample means and standard deviations (denominator `n - 1`).
    pub fn fit(ds: &Dataset<f64>) -> Result<Self> {
        if ds.n() < 2 {
            return Err(Error::InvalidDataset("standardization needs at least two rows".into()));
        }
        let (y_mean, y_sd) = mean_sd(ds.y());
        if !(y_sd > 0.0) {
            return Err(Error::ZeroVariance { col: "response".into() });
        }
        let mut columns = Vec::with_capacity(ds.p());
        for j in 0..ds.p() {
            let col = ds.x().col(j);
            if is_intercept(col) {
                columns.push(None);
                continue;
            }
            let (m, s) = mean_sd(col);
            if !(s > 0.0) {
                return Err(Error::ZeroVariance { col: column_label(ds, j) });
            }
            columns.push(Some((m, s)));
        }
        Ok(Self { y_mean, y_sd, columns })
    }

    pub fn apply(&self, ds: &Dataset<f64>) -> Result<Dataset<f64>> {
        if ds.p() != self.columns.len() {
            return Err(Error::DimensionMismatch(format!("transform for {} columns, data has {}", self.columns.len(), ds.p())));
        }
        let y: Vec<f64> = ds.y().iter().map(|v| (v - self.y_mean) / self.y_sd).collect();
        let x = Matrix::from_fn(ds.n(), ds.p(), |i, j| match self.columns[j] {
            Some((m, s)) => (ds.x()[(i, j)] - m) / s,
            None => ds.x()[(i, j)],
        });
        Dataset::new(y, x, ds.column_names().map(<[String]>::to_vec))
    }

    /// Maps a standardized response back to the original scale.
    pub fn invert_response(&self, v: f64) -> f64 {
        v * self.y_sd + self.y_mean
    }
}

/// Centres and scales the response and every non-intercept column.
pub fn standardize(ds: &Dataset<f64>) -> Result<(Dataset<f64>, Transform)> {
    let t = Transform::fit(ds)?;
    Ok((t.apply(ds)?, t))
}

/// Residual sum of squares and numerical rank of `y` on `x`.
fn rss_rank(x: &Matrix<f64>, y: &[f64]) -> (f64, usize) {
    let qr = Qr::pivoted(x);
    let r = qr.rank();
    let mut z = y.to_vec();
    qr.apply_qt(&mut z);
    (z[r..].iter().map(|v| v * v).sum(), r)
}

/// Greedy forward ordering of the non-intercept regressors by Mallows Cp,
/// with `sigma^2` from the full model. Returns dataset column indices.
pub fn order_variables_cp(ds: &Dataset<f64>) -> Result<Vec<usize>> {
    let n = ds.n();
    let p = ds.p();
    let (rss_full, rank_full) = rss_rank(ds.x(), ds.y());
    if rank_full >= n {
        return Err(Error::RankDeficient { model: 0, rank: rank_full, k: p });
    }
    let sigma2 = rss_full / (n - rank_full) as f64;
    let mut selected: Vec<usize> = (0..p).filter(|&j| is_intercept(ds.x().col(j))).collect();
    let mut remaining: Vec<usize> = (0..p).filter(|j| !selected.contains(j)).collect();
    let mut order = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let k = (selected.len() + 1) as f64;
        let mut best: Option<(usize, f64)> = None;
        for (pos, &j) in remaining.iter().enumerate() {
            let mut cols = selected.clone();
            cols.push(j);
            let (rss, _) = rss_rank(&ds.design(&cols), ds.y());
            let cp = rss / n as f64 + 2.0 * sigma2 * k / n as f64;
            if best.is_none_or(|(_, b)| cp < b) {
                best = Some((pos, cp));
            }
        }
        let (pos, _) = best.expect("nonempty");
        let j = remaining.remove(pos);
        selected.push(j);
        order.push(j);
    }
    Ok(order)
}

/// Nested candidates: intercept columns, then prefixes of `order`.
pub fn nested_from_order(ds: &Dataset<f64>, order: &[usize]) -> Result<CandidateModelSet> {
    let base: Vec<usize> = (0..ds.p()).filter(|&j| is_intercept(ds.x().col(j))).collect();
    let mut models = Vec::new();
    let mut cur = base.clone();
    if !cur.is_empty() {
        models.push(cur.clone());
    }
    for &j in order {
        cur.push(j);
        if cur.len() < ds.n() {
            models.push(cur.clone());
        }
    }
    CandidateModelSet::new(models, true, ds.n(), ds.p())
}

/// Where standardization statistics and the variable order come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitProtocol {
    /// Fitted on each training split.
    #[default]
    TrainOnly,
    /// Fitted once on the full sample before splitting.
    FullSample,
}

impl std::str::FromStr for SplitProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "train_only" | "train" => Ok(Self::TrainOnly),
            "full_sample" | "full" => Ok(Self::FullSample),
            _ => Err(Error::InvalidConfig(format!("unknown split protocol '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitSettings {
    pub train_n: usize,
    pub splits: usize,
    pub point: PointSettings,
    pub protocol: SplitProtocol,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodMspe {
    pub method: Method,
    pub mean: f64,
    /// Variance across splits (denominator = number of completed splits).
    pub variance: f64,
    pub completed: usize,
    pub failed: usize,
    pub failures: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionReport {
    pub schema_version: u32,
    pub experiment: &'static str,
    pub n_total: usize,
    pub train_n: usize,
    pub splits: usize,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub m: String,
    pub protocol: SplitProtocol,
    pub seed: u64,
    pub methods: Vec<MethodMspe>,
    #[serde(skip)]
    pub per_split: Vec<Vec<Option<f64>>>,
}

impl PredictionReport {
    pub fn method(&self, m: Method) -> Option<&MethodMspe> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Test MSPE per method after mapping both parts through `transform` and
/// ordering variables on the transformed training part.
pub fn mspe_with_transform(
    train: &Dataset<f64>,
    test: &Dataset<f64>,
    transform: &Transform,
    methods: &[Method],
    settings: &PointSettings,
    seeds: SeedSpec,
) -> Result<Vec<Result<f64>>> {
    let tr = transform.apply(train)?;
    let te = transform.apply(test)?;
    let order = order_variables_cp(&tr)?;
    mspe_ordered(&tr, &te, &order, methods, settings, seeds)
}

/// Test MSPE per method for already transformed parts and a fixed variable order.
pub fn mspe_ordered(
    tr: &Dataset<f64>,
    te: &Dataset<f64>,
    order: &[usize],
    methods: &[Method],
    settings: &PointSettings,
    seeds: SeedSpec,
) -> Result<Vec<Result<f64>>> {
    let models = nested_from_order(tr, order)?;
    let bundle = fit_all(tr, &models)?;
    Ok(estimate_methods(tr, &models, &bundle, methods, settings, seeds, te.x())
        .into_iter()
        .map(|(_, r)| {
            r.map(|o| {
                o.prediction.iter().zip(te.y()).map(|(p, y)| (y - p) * (y - p)).sum::<f64>() / te.n() as f64
            })
        })
        .collect())
}

/// Standardizes on `train` only, then scores each method on `test`.
pub fn split_mspe(
    train: &Dataset<f64>,
    test: &Dataset<f64>,
    methods: &[Method],
    settings: &PointSettings,
    seeds: SeedSpec,
) -> Result<Vec<Result<f64>>> {
    let t = Transform::fit(train)?;
    mspe_with_transform(train, test, &t, methods, settings, seeds)
}

/// Training and test row indices for split `s`.
pub fn split_indices(n_total: usize, train_n: usize, seeds: SeedSpec, s: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seeds.child(s as u64).tagged("split").stream(0);
    let mut train = sample(&mut rng, n_total, train_n).into_vec();
    train.sort_unstable();
    let test = (0..n_total).filter(|i| train.binary_search(i).is_err()).collect();
    (train, test)
}

pub fn evaluate_splits(
    ds: &Dataset<f64>,
    methods: &[Method],
    settings: &SplitSettings,
    seeds: SeedSpec,
) -> Result<PredictionReport> {
    let n_total = ds.n();
    let mut errs = Vec::new();
    if settings.train_n < 2 || settings.train_n >= n_total {
        errs.push(format!("train-n={} must lie in [2, {})", settings.train_n, n_total));
    }
    if settings.splits == 0 {
        errs.push("splits must be positive".into());
    }
    if methods.is_empty() {
        errs.push("at least one method is required".into());
    }
    if let Some(bad) = methods.iter().find(|m| !Method::POINT.contains(m)) {
        errs.push(format!("method {bad} is not a point-estimation method"));
    }
    if !errs.is_empty() {
        return Err(Error::InvalidConfig(errs.join("; ")));
    }
    let full = match settings.protocol {
        SplitProtocol::TrainOnly => None,
        SplitProtocol::FullSample => {
            let (sd, _) = standardize(ds)?;
            let order = order_variables_cp(&sd)?;
            Some((sd, order))
        }
    };
    let rows = par_map(settings.splits, |s| -> Vec<std::result::Result<f64, String>> {
        let (tr, te) = split_indices(n_total, settings.train_n, seeds, s);
        let out = match &full {
            None => split_mspe(&ds.select_rows(&tr), &ds.select_rows(&te), methods, &settings.point, seeds.child(s as u64)),
            Some((sd, order)) => {
                mspe_ordered(&sd.select_rows(&tr), &sd.select_rows(&te), order, methods, &settings.point, seeds.child(s as u64))
            }
        };
        match out {
            Ok(v) => v.into_iter().map(|r| r.map_err(|e| e.kind().to_string())).collect(),
            Err(e) => vec![Err(e.kind().to_string()); methods.len()],
        }
    });
    let per_split: Vec<Vec<Option<f64>>> =
        rows.iter().map(|r| r.iter().map(|v| v.as_ref().ok().copied()).collect()).collect();
    let methods = methods
        .iter()
        .enumerate()
        .map(|(i, &method)| {
            let ok: Vec<f64> = per_split.iter().filter_map(|r| r[i]).collect();
            let c = ok.len() as f64;
            let mean = ok.iter().sum::<f64>() / c;
            let variance = ok.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let mut failures = BTreeMap::new();
            for r in &rows {
                if let Err(k) = &r[i] {
                    *failures.entry(k.clone()).or_insert(0) += 1;
                }
            }
            MethodMspe { method, mean, variance, completed: ok.len(), failed: settings.splits - ok.len(), failures }
        })
        .collect();
    Ok(PredictionReport {
        schema_version: SCHEMA_VERSION,
        experiment: "predict",
        n_total,
        train_n: settings.train_n,
        splits: settings.splits,
        replicates: settings.point.replicates,
        m: settings.point.m.to_string(),
        protocol: settings.protocol,
        seed: seeds.master_seed,
        methods,
        per_split,
    })
}

impl crate::sim::TidyReport for PredictionReport {
    fn tidy_rows(&self) -> Vec<crate::sim::TidyRow> {
        use crate::sim::TidyRow;
        let mut rows = Vec::new();
        for r in &self.methods {
            let name = r.method.name().to_string();
            let se = (r.variance / r.completed as f64).sqrt();
            rows.push(TidyRow { method: name.clone(), metric: "mspe_mean".into(), value: r.mean, mc_se: Some(se) });
            rows.push(TidyRow { method: name.clone(), metric: "mspe_var".into(), value: r.variance, mc_se: None });
            rows.push(TidyRow { method: name.clone(), metric: "completed".into(), value: r.completed as f64, mc_se: None });
            rows.push(TidyRow { method: name, metric: "failed".into(), value: r.failed as f64, mc_se: None });
        }
        rows
    }

    fn config_fields(&self) -> Vec<(String, String)> {
        vec![
            ("n_total".into(), self.n_total.to_string()),
            ("train_n".into(), self.train_n.to_string()),
            ("splits".into(), self.splits.to_string()),
            ("B".into(), self.replicates.to_string()),
            ("m".into(), self.m.clone()),
            ("protocol".into(), serde_json::to_value(self.protocol).unwrap().as_str().unwrap().to_string()),
            ("seed".into(), self.seed.to_string()),
            ("schema_version".into(), SCHEMA_VERSION.to_string()),
        ]
    }
}

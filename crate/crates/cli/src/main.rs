use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mabt::data::{load_csv, nested_from_order, order_variables_cp, standardize, evaluate_splits, SplitProtocol, SplitSettings};
use mabt::inference::XiEstimator;
use mabt::methods::{compute_intervals, IntervalResult, IntervalSettings};
use mabt::sim::{
    run_coverage_experiment, run_risk_experiment, write_json, write_rows_csv, write_tidy_csv, CiCase, CiCaseConfig,
    HansenConfig, TidyRow, SCHEMA_VERSION,
};
use mabt::{estimate_methods, fit_all, CandidateModelSet, Dataset, Error, MPolicy, Method, MethodOutcome, PointSettings, SeedSpec};

#[derive(Parser)]
#[command(name = "mabt", version, about = "Bootstrap model averaging for linear regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Weights, combined coefficients and fitted values for a CSV dataset.
    Fit(FitArgs),
    /// Confidence intervals for named coefficients.
    Ci(CiArgs),
    /// Risk study on the infinite-order regression design.
    RiskSim(RiskArgs),
    /// Coverage study on the nested confidence-interval design.
    CoverageSim(CoverageArgs),
    /// Mean squared prediction error over random train/test splits.
    Predict(PredictArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Output {
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct Common {
    /// Comma-separated method names.
    #[arg(long)]
    methods: Option<String>,
    /// Resample size policy: N, half_n, gcv or gcv:a,b,c.
    #[arg(long)]
    m: Option<String>,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 500)]
    b: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    /// Regressors in file order.
    File,
    /// Greedy forward selection by Mallows Cp.
    Cp,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    response: String,
    /// Order in which regressors enter the nested candidates.
    #[arg(long, value_enum, default_value = "file")]
    order: Order,
    /// Standardize the response and regressors first.
    #[arg(long)]
    standardize: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
    /// Comma-separated coefficient (column) names.
    #[arg(long)]
    coef: String,
    /// Limiting-distribution draws.
    #[arg(long = "U", default_value_t = 500)]
    u: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Number of under-fitted models, or "bic".
    #[arg(long, default_value = "bic")]
    m0: String,
    /// Xi estimator: hc0 or hc1.
    #[arg(long, default_value = "hc1")]
    xi: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct RiskArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 150)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    r2: f64,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CoverageArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1)]
    case: u8,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long = "U", default_value_t = 500)]
    u: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Number of under-fitted models, or "bic".
    #[arg(long, default_value = "4")]
    m0: String,
    /// Comma-separated 1-based coefficient indices.
    #[arg(long, default_value = "3,4")]
    targets: String,
    #[arg(long, default_value = "hc1")]
    xi: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
    #[arg(long = "train-n")]
    train_n: usize,
    #[arg(long, default_value_t = 1000)]
    splits: usize,
    /// Standardization/ordering source: train_only or full_sample.
    #[arg(long, default_value = "train_only")]
    protocol: String,
    #[command(flatten)]
    output: Output,
}

/// Collects every validation failure before reporting.
#[derive(Default)]
struct Problems(Vec<String>);

impl Problems {
    fn positive(&mut self, name: &str, v: usize) {
        if v == 0 {
            self.0.push(format!("--{name} must be positive"));
        }
    }

    fn level(&mut self, v: f64) {
        if !(0.0..=1.0).contains(&v) {
            self.0.push(format!("--level {v} must lie in [0, 1]"));
        }
    }

    fn parse<T: std::str::FromStr<Err = Error>>(&mut self, flag: &str, s: &str) -> Option<T> {
        match s.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.0.push(format!("--{flag}: {}", message(&e)));
                None
            }
        }
    }

    fn methods(&mut self, s: Option<&str>, allowed: &[Method], default: &[Method]) -> Vec<Method> {
        let Some(s) = s else { return default.to_vec() };
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.parse::<Method>() {
                Ok(m) if allowed.contains(&m) => {
                    if !out.contains(&m) {
                        out.push(m);
                    }
                }
                Ok(m) => self.0.push(format!("--methods: method '{m}' is not available for this command")),
                Err(_) => self.0.push(format!("--methods: unknown method '{tok}'")),
            }
        }
        if out.is_empty() && !s.split(',').any(|t| !t.trim().is_empty()) {
            self.0.push("--methods: empty list".into());
        }
        out
    }

    fn m0(&mut self, s: &str) -> Option<Option<usize>> {
        if s.eq_ignore_ascii_case("bic") {
            return Some(None);
        }
        match s.parse::<usize>() {
            Ok(v) => Some(Some(v)),
            Err(_) => {
                self.0.push(format!("--m0: expected a count or 'bic', got '{s}'"));
                None
            }
        }
    }

    fn absorb(&mut self, joined: &str) {
        for m in joined.split("; ") {
            let key = m.split(['=', ' ']).next().unwrap_or(m);
            let flag = format!("--{key}");
            if !self.0.iter().any(|x| x.ends_with(m) || x.starts_with(&flag)) {
                self.0.push(m.to_string());
            }
        }
    }

    fn finish(self) -> Result<(), Error> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(self.0.join("; ")))
        }
    }
}

fn message(e: &Error) -> String {
    match e {
        Error::InvalidConfig(s) => s.clone(),
        other => other.to_string(),
    }
}

fn common_settings(p: &mut Problems, c: &Common, default_m: MPolicy) -> Option<PointSettings> {
    p.positive("B", c.b);
    let m = match &c.m {
        Some(s) => p.parse::<MPolicy>("m", s),
        None => Some(default_m),
    };
    Some(PointSettings { m: m?, replicates: c.b, bag_m: None })
}

fn load(data: &DataArgs) -> Result<(Dataset<f64>, CandidateModelSet), Error> {
    let mut ds = load_csv(&data.input, &data.response)?;
    if data.standardize {
        ds = standardize(&ds)?.0;
    }
    let order: Vec<usize> = match data.order {
        Order::File => (1..ds.p()).collect(),
        Order::Cp => order_variables_cp(&ds)?,
    };
    let models = nested_from_order(&ds, &order)?;
    Ok((ds, models))
}

fn names(ds: &Dataset<f64>) -> Vec<String> {
    ds.column_names().map(<[String]>::to_vec).unwrap_or_else(|| (1..=ds.p()).map(|j| format!("x{j}")).collect())
}

#[derive(Serialize)]
#[serde(untagged)]
enum Entry<T: Serialize> {
    Ok(T),
    Failed { method: Method, error: ErrorObject },
}

#[derive(Serialize)]
struct ErrorObject {
    kind: &'static str,
    message: String,
}

impl From<&Error> for ErrorObject {
    fn from(e: &Error) -> Self {
        Self { kind: e.kind(), message: e.to_string() }
    }
}

#[derive(Serialize)]
struct FitReport {
    schema_version: u32,
    command: &'static str,
    n: usize,
    columns: Vec<String>,
    models: Vec<Vec<String>>,
    m_policy: String,
    #[serde(rename = "B")]
    replicates: usize,
    seed: u64,
    results: Vec<Entry<MethodOutcome<f64>>>,
}

#[derive(Serialize)]
struct CiReport {
    schema_version: u32,
    command: &'static str,
    n: usize,
    columns: Vec<String>,
    m_policy: String,
    #[serde(rename = "B")]
    replicates: usize,
    #[serde(rename = "U")]
    draws: usize,
    level: f64,
    xi: XiEstimator,
    seed: u64,
    m0: usize,
    m: Option<usize>,
    intervals: Vec<NamedInterval>,
}

#[derive(Serialize)]
struct NamedInterval {
    name: String,
    #[serde(flatten)]
    result: IntervalResult<f64>,
}

fn emit<W: Write>(out: W, json: &impl Serialize, rows: Option<(Vec<TidyRow>, Vec<(String, String)>)>, format: Format) -> Result<(), Error> {
    match format {
        Format::Json => write_json(json, out),
        Format::Csv => {
            let (rows, config) = rows.expect("csv rows");
            write_rows_csv(&rows, &config, out)
        }
    }
}

fn with_output(o: &Output, f: impl FnOnce(&mut dyn Write, Format) -> Result<(), Error>) -> Result<(), Error> {
    match &o.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w, o.format)?;
            w.flush()?;
            Ok(())
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w, o.format)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn run_fit(a: &FitArgs) -> Result<(), Error> {
    let mut p = Problems::default();
    let methods = p.methods(a.common.methods.as_deref(), &Method::POINT, &Method::POINT);
    let settings = common_settings(&mut p, &a.common, MPolicy::HalfN);
    p.finish()?;
    let settings = settings.expect("validated");
    let (ds, models) = load(&a.data)?;
    let bundle = fit_all(&ds, &models)?;
    let seeds = SeedSpec::new(a.common.seed);
    let cols = names(&ds);
    let results: Vec<_> = estimate_methods(&ds, &models, &bundle, &methods, &settings, seeds, ds.x())
        .into_iter()
        .map(|(method, r)| match r {
            Ok(o) => Entry::Ok(o),
            Err(e) => Entry::Failed { method, error: (&e).into() },
        })
        .collect();
    let mut rows = Vec::new();
    for r in &results {
        match r {
            Entry::Ok(o) => {
                let name = o.method.name();
                for (q, w) in o.weights.iter().flatten().enumerate() {
                    rows.push(TidyRow { method: name.into(), metric: format!("weight_{}", q + 1), value: *w, mc_se: None });
                }
                for (j, c) in o.coefficients.iter().flatten().enumerate() {
                    rows.push(TidyRow { method: name.into(), metric: format!("coef_{}", cols[j]), value: *c, mc_se: None });
                }
                for (i, v) in o.prediction.iter().enumerate() {
                    rows.push(TidyRow { method: name.into(), metric: format!("fitted_{}", i + 1), value: *v, mc_se: None });
                }
            }
            Entry::Failed { method, .. } => {
                rows.push(TidyRow { method: method.name().into(), metric: "failed".into(), value: 1.0, mc_se: None })
            }
        }
    }
    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        command: "fit",
        n: ds.n(),
        models: models.models().iter().map(|m| m.iter().map(|&c| cols[c].clone()).collect()).collect(),
        columns: cols,
        m_policy: settings.m.to_string(),
        replicates: settings.replicates,
        seed: a.common.seed,
        results,
    };
    let config = vec![
        ("m".into(), report.m_policy.clone()),
        ("B".into(), report.replicates.to_string()),
        ("seed".into(), report.seed.to_string()),
        ("schema_version".into(), SCHEMA_VERSION.to_string()),
    ];
    with_output(&a.output, |w, f| emit(w, &report, Some((rows, config)), f))
}

fn run_ci(a: &CiArgs) -> Result<(), Error> {
    let mut p = Problems::default();
    let methods = p.methods(a.common.methods.as_deref(), &Method::INTERVAL, &Method::INTERVAL);
    let point = common_settings(&mut p, &a.common, MPolicy::Gcv(vec![]));
    p.positive("U", a.u);
    p.level(a.level);
    let m0 = p.m0(&a.m0);
    let xi = p.parse::<XiEstimator>("xi", &a.xi);
    let coef_names: Vec<&str> = a.coef.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if coef_names.is_empty() {
        p.0.push("--coef: empty list".into());
    }
    p.finish()?;
    let point = point.expect("validated");
    let (ds, models) = load(&a.data)?;
    let cols = names(&ds);
    let mut missing = Vec::new();
    let targets: Vec<usize> = coef_names
        .iter()
        .filter_map(|n| {
            let j = cols.iter().position(|c| c == n);
            if j.is_none() {
                missing.push(n.to_string());
            }
            j
        })
        .collect();
    if let Some(name) = missing.into_iter().next() {
        return Err(Error::MissingColumn { name });
    }
    let settings = IntervalSettings {
        m: point.m.clone(),
        replicates: point.replicates,
        draws: a.u,
        level: a.level,
        m0: m0.expect("validated"),
        xi: xi.expect("validated"),
    };
    let run = compute_intervals(&ds, &models, &methods, &targets, &settings, SeedSpec::new(a.common.seed))?;
    let mut rows = Vec::new();
    for r in &run.intervals {
        let name = r.method.name().to_string();
        let col = &cols[r.coefficient];
        match r.interval() {
            Some(ci) => {
                rows.push(TidyRow { method: name.clone(), metric: format!("lower_{col}"), value: ci.lower, mc_se: None });
                rows.push(TidyRow { method: name.clone(), metric: format!("upper_{col}"), value: ci.upper, mc_se: None });
                rows.push(TidyRow { method: name, metric: format!("excluded_{col}"), value: f64::from(u8::from(r.excluded)), mc_se: None });
            }
            None => rows.push(TidyRow { method: name, metric: format!("failed_{col}"), value: 1.0, mc_se: None }),
        }
    }
    let report = CiReport {
        schema_version: SCHEMA_VERSION,
        command: "ci",
        n: ds.n(),
        m_policy: settings.m.to_string(),
        replicates: settings.replicates,
        draws: settings.draws,
        level: settings.level,
        xi: settings.xi,
        seed: a.common.seed,
        m0: run.m0,
        m: run.m,
        intervals: run
            .intervals
            .into_iter()
            .map(|r| NamedInterval { name: cols[r.coefficient].clone(), result: r })
            .collect(),
        columns: cols,
    };
    let config = vec![
        ("m".into(), report.m_policy.clone()),
        ("B".into(), report.replicates.to_string()),
        ("U".into(), report.draws.to_string()),
        ("level".into(), report.level.to_string()),
        ("m0".into(), report.m0.to_string()),
        ("seed".into(), report.seed.to_string()),
        ("schema_version".into(), SCHEMA_VERSION.to_string()),
    ];
    with_output(&a.output, |w, f| emit(w, &report, Some((rows, config)), f))
}

fn run_risk(a: &RiskArgs) -> Result<(), Error> {
    let mut p = Problems::default();
    let methods = p.methods(a.common.methods.as_deref(), &Method::POINT, &Method::POINT);
    let point = common_settings(&mut p, &a.common, MPolicy::HalfN);
    p.positive("reps", a.reps);
    let cfg = point.map(|point| HansenConfig {
        n: a.n,
        alpha: a.alpha,
        r2: a.r2,
        reps: a.reps,
        replicates: point.replicates,
        m: point.m,
        ..HansenConfig::default()
    });
    if let Some(Err(Error::InvalidConfig(msg))) = cfg.as_ref().map(HansenConfig::validate) {
        p.absorb(&msg);
    }
    p.finish()?;
    let report = run_risk_experiment(&cfg.expect("validated"), &methods, SeedSpec::new(a.common.seed))?;
    with_output(&a.output, |w, f| match f {
        Format::Json => write_json(&report, w),
        Format::Csv => write_tidy_csv(&report, w),
    })
}

fn run_coverage(a: &CoverageArgs) -> Result<(), Error> {
    let mut p = Problems::default();
    let methods = p.methods(a.common.methods.as_deref(), &Method::INTERVAL, &Method::INTERVAL);
    let point = common_settings(&mut p, &a.common, MPolicy::Gcv(vec![]));
    p.positive("reps", a.reps);
    p.positive("U", a.u);
    p.level(a.level);
    let case = match a.case {
        1 => Some(CiCase::Case1),
        2 => Some(CiCase::Case2),
        c => {
            p.0.push(format!("--case {c}: expected 1 or 2"));
            None
        }
    };
    let m0 = p.m0(&a.m0);
    let xi = p.parse::<XiEstimator>("xi", &a.xi);
    let mut targets = Vec::new();
    for tok in a.targets.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok.parse::<usize>() {
            Ok(j) if j >= 1 => targets.push(j - 1),
            _ => p.0.push(format!("--targets: expected 1-based indices, got '{tok}'")),
        }
    }
    let cfg = match (point, case, m0, xi) {
        (Some(point), Some(case), Some(m0), Some(xi)) => {
            let cfg = CiCaseConfig {
                case,
                n: a.n,
                eta: a.eta,
                reps: a.reps,
                draws: a.u,
                replicates: point.replicates,
                level: a.level,
                m: point.m,
                m0,
                targets,
                xi,
                ..CiCaseConfig::default()
            };
            if let Err(Error::InvalidConfig(msg)) = cfg.validate() {
                p.absorb(&msg);
            }
            Some(cfg)
        }
        _ => None,
    };
    p.finish()?;
    let report = run_coverage_experiment(&cfg.expect("validated"), &methods, SeedSpec::new(a.common.seed))?;
    with_output(&a.output, |w, f| match f {
        Format::Json => write_json(&report, w),
        Format::Csv => write_tidy_csv(&report, w),
    })
}

const PREDICT_DEFAULT: [Method; 8] =
    [Method::Mma, Method::Jma, Method::Btma, Method::Saic, Method::Sbic, Method::Bms, Method::Sub1, Method::Bag];

fn run_predict(a: &PredictArgs) -> Result<(), Error> {
    let mut p = Problems::default();
    let methods = p.methods(a.common.methods.as_deref(), &Method::POINT, &PREDICT_DEFAULT);
    let point = common_settings(&mut p, &a.common, MPolicy::HalfN);
    p.positive("splits", a.splits);
    let protocol = p.parse::<SplitProtocol>("protocol", &a.protocol);
    p.finish()?;
    let mut ds = load_csv(&a.data.input, &a.data.response)?;
    if a.data.standardize {
        ds = standardize(&ds)?.0;
    }
    let settings = SplitSettings {
        train_n: a.train_n,
        splits: a.splits,
        point: point.expect("validated"),
        protocol: protocol.expect("validated"),
    };
    let report = evaluate_splits(&ds, &methods, &settings, SeedSpec::new(a.common.seed))?;
    with_output(&a.output, |w, f| match f {
        Format::Json => write_json(&report, w),
        Format::Csv => write_tidy_csv(&report, w),
    })
}

fn fail(kind: &str, message: &str) {
    let obj = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{obj}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        ExitCode::from(2)
                    } else {
                        ExitCode::SUCCESS
                    };
                }
                ErrorKind::InvalidSubcommand => fail("UnknownSubcommand", e.to_string().lines().next().unwrap_or("")),
                _ => fail("UsageError", e.to_string().trim()),
            }
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Ci(a) => run_ci(a),
        Command::RiskSim(a) => run_risk(a),
        Command::CoverageSim(a) => run_coverage(a),
        Command::Predict(a) => run_predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            fail(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

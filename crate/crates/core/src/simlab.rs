//! Data-generating processes for the simulation designs, the replication
//! engine, and table emission.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{run_fzz, BootstrapConfig, Calibration, FzzConfig, WeightScheme};
use crate::dataset::Dataset;
use crate::dimred::{DimensionSelector, ProjectionConfig, ProjectionMethod};
use crate::error::{Error, Result};
use crate::glrtest::{run_test, Statistic, TestConfig, TestReport};
use crate::nullfit::{FitOptions, NullModelSpec};
use crate::seeds::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    H11,
    H12,
    H13,
    H14,
    H21,
    H22,
    H31,
    H32,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::H11,
        Family::H12,
        Family::H13,
        Family::H14,
        Family::H21,
        Family::H22,
        Family::H31,
        Family::H32,
    ];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown model family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ErrorLaw {
    Normal(f64),
    StudentT5,
    Laplace,
}

impl fmt::Display for ErrorLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorLaw::Normal(s) if *s == 1.0 => write!(f, "normal"),
            ErrorLaw::Normal(s) => write!(f, "normal:{s}"),
            ErrorLaw::StudentT5 => write!(f, "t5"),
            ErrorLaw::Laplace => write!(f, "laplace"),
        }
    }
}

impl FromStr for ErrorLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "normal" | "n" => Ok(ErrorLaw::Normal(1.0)),
            "t5" | "t" | "t(5)" => Ok(ErrorLaw::StudentT5),
            "laplace" => Ok(ErrorLaw::Laplace),
            _ => {
                let sigma = t
                    .strip_prefix("normal:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown error law '{s}'")))?;
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::Config(format!("normal error scale must be positive, got {sigma}")));
                }
                Ok(ErrorLaw::Normal(sigma))
            }
        }
    }
}

impl TryFrom<String> for ErrorLaw {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ErrorLaw> for String {
    fn from(e: ErrorLaw) -> String {
        e.to_string()
    }
}

impl ErrorLaw {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            ErrorLaw::Normal(s) => {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            }
            ErrorLaw::StudentT5 => StudentT::new(5.0).expect("valid degrees of freedom").sample(rng),
            ErrorLaw::Laplace => {
                let a: f64 = Exp1.sample(rng);
                let b: f64 = Exp1.sample(rng);
                a - b
            }
        }
    }

    pub fn variance(self) -> f64 {
        match self {
            ErrorLaw::Normal(s) => s * s,
            ErrorLaw::StudentT5 => 5.0 / 3.0,
            ErrorLaw::Laplace => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovariateCov {
    #[default]
    Identity,
    /// `0.2^|i-j|`.
    Ar02,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub family: Family,
    pub p: usize,
    pub a: f64,
    pub error: ErrorLaw,
    pub x_cov: CovariateCov,
}

fn ones_over_sqrt(p: usize, from: usize) -> DVector<f64> {
    let k = (p - from) as f64;
    DVector::from_fn(p, |i, _| if i >= from { 1.0 / k.sqrt() } else { 0.0 })
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let p = self.p;
        let ok = match self.family {
            Family::H11 => p >= 3,
            Family::H12 | Family::H21 | Family::H22 | Family::H31 | Family::H32 => p >= 2 && p % 2 == 0,
            Family::H13 | Family::H14 => p >= 1,
        };
        if !ok {
            return Err(Error::Config(format!("family {} is not defined for p = {p}", self.family)));
        }
        if !self.a.is_finite() {
            return Err(Error::Config("amplitude must be finite".into()));
        }
        Ok(())
    }

    /// Index vectors `(beta_1, beta_2)`; `beta_2` only for two-index families.
    pub fn betas(&self) -> (DVector<f64>, Option<DVector<f64>>) {
        let p = self.p;
        let half = ones_over_sqrt(p, p / 2);
        let all = ones_over_sqrt(p, 0);
        match self.family {
            Family::H11 => {
                let k = ((p - 2) as f64).sqrt();
                (DVector::from_fn(p, |i, _| if i < p - 2 { 1.0 / k } else { 0.0 }), None)
            }
            Family::H12 => (half, None),
            Family::H13 | Family::H14 => (all, None),
            Family::H21 | Family::H22 => (all, Some(half)),
            Family::H31 => (half, None),
            Family::H32 => (half, Some(all)),
        }
    }

    /// The null model the family collapses to at `a = 0`.
    pub fn null_spec(&self) -> NullModelSpec {
        match self.family {
            Family::H14 => NullModelSpec::scaled_exp(self.p),
            _ => NullModelSpec::linear(self.p, false),
        }
    }

    /// `E[y | x]`.
    pub fn regression_mean(&self, x: &[f64]) -> f64 {
        let (b1, b2) = self.betas();
        let z1: f64 = b1.iter().zip(x).map(|(b, v)| b * v).sum();
        let z2: f64 = b2.map_or(0.0, |b| b.iter().zip(x).map(|(b, v)| b * v).sum());
        let a = self.a;
        match self.family {
            Family::H11 => z1 + a * (-0.1 * z1).exp(),
            Family::H12 => z1 + 1.25 * a * 2f64.powf(-z1),
            Family::H13 => z1 + a * (0.6 * std::f64::consts::PI * z1).cos(),
            Family::H14 => 1.5 * (0.5 * z1).exp() + a * (0.6 * std::f64::consts::PI * z1).cos(),
            Family::H21 => z1 + a * z2 * z2,
            Family::H22 => z1 + a * z2.abs().sqrt(),
            Family::H31 => z1 + a * z1 * z1,
            Family::H32 => z1 + a * z2.powi(3),
        }
    }
}

/// Draw `n` observations from the design.
pub fn dgp_generate(spec: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be positive".into()));
    }
    let p = spec.p;
    let mut rng = stream_rng(seed, &[]);
    let z = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let x = match spec.x_cov {
        CovariateCov::Identity => z,
        CovariateCov::Ar02 => {
            let sigma = DMatrix::from_fn(p, p, |i, j| 0.2f64.powi((i as i32 - j as i32).abs()));
            let l = sigma.cholesky().expect("AR(1) covariance is positive definite").unpack();
            z * l.transpose()
        }
    };
    let mut row = vec![0.0; p];
    let y = DVector::from_fn(n, |i, _| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = x[(i, c)];
        }
        spec.regression_mean(&row) + spec.error.sample(&mut rng)
    });
    Dataset::new(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    Glr(TestConfig),
    Fzz(FzzConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMethod {
    pub name: String,
    pub method: Method,
}

/// Shared knobs applied when building methods from short names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodDefaults {
    pub selector: DimensionSelector,
    pub alpha: f64,
    pub bandwidth_scale: f64,
    pub bootstrap_b: usize,
    pub weight_scheme: WeightScheme,
    pub one_sided: bool,
}

impl Default for MethodDefaults {
    fn default() -> Self {
        Self {
            selector: DimensionSelector::Rre,
            alpha: 0.05,
            bandwidth_scale: 1.5,
            bootstrap_b: 250,
            weight_scheme: WeightScheme::Rademacher,
            one_sided: false,
        }
    }
}

/// Build a method from names like `rn_opg`, `sn_mave`, `rn_opg_raw`
/// (unadjusted), `fzz_a`, `fzz_b`.
pub fn method_from_name(name: &str, defaults: &MethodDefaults) -> Result<NamedMethod> {
    let lower = name.trim().to_ascii_lowercase();
    let method = match lower.as_str() {
        "fzz_a" | "fzz_b" => {
            let calibration = if lower == "fzz_a" {
                Calibration::Asymptotic
            } else {
                Calibration::Bootstrap(BootstrapConfig {
                    b_resamples: defaults.bootstrap_b,
                    weight_scheme: defaults.weight_scheme,
                    seed: 0,
                })
            };
            Method::Fzz(FzzConfig {
                calibration,
                bandwidth_scale: defaults.bandwidth_scale,
                alpha: defaults.alpha,
                one_sided: defaults.one_sided,
                fit: FitOptions::default(),
            })
        }
        _ => {
            let parts: Vec<&str> = lower.split('_').collect();
            let (stat, proj, adjust) = match parts.as_slice() {
                [s, m] => (*s, *m, true),
                [s, m, "raw"] => (*s, *m, false),
                _ => return Err(Error::Config(format!("unknown method '{name}'"))),
            };
            let statistic = match stat {
                "sn" => Statistic::Sn,
                "rn" => Statistic::Rn,
                _ => return Err(Error::Config(format!("unknown statistic in method '{name}'"))),
            };
            let method = match proj {
                "opg" => ProjectionMethod::Opg,
                "mave" => ProjectionMethod::Mave,
                _ => return Err(Error::Config(format!("unknown projection in method '{name}'"))),
            };
            Method::Glr(TestConfig {
                statistic,
                adjust,
                alpha: defaults.alpha,
                one_sided: defaults.one_sided,
                projection: ProjectionConfig {
                    method,
                    selector: defaults.selector,
                    bandwidth_scale: defaults.bandwidth_scale,
                    ..ProjectionConfig::default()
                },
                fit: FitOptions::default(),
            })
        }
    };
    Ok(NamedMethod {
        name: lower,
        method,
    })
}

/// Parse `rre`, `bic` or `fixed:K`.
pub fn parse_selector(s: &str) -> Result<DimensionSelector> {
    let t = s.trim().to_ascii_lowercase();
    match t.as_str() {
        "rre" => Ok(DimensionSelector::Rre),
        "bic" => Ok(DimensionSelector::Bic),
        _ => t
            .strip_prefix("fixed:")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|k| *k >= 1)
            .map(DimensionSelector::Fixed)
            .ok_or_else(|| Error::Config(format!("unknown selector '{s}'"))),
    }
}

/// Run one method on one dataset. Per-replication seeds are threaded into the
/// optimizer restarts and the bootstrap.
pub fn run_method(method: &Method, data: &Dataset, spec: &NullModelSpec, seed: u64) -> Result<TestReport> {
    match method {
        Method::Glr(cfg) => {
            let mut cfg = *cfg;
            cfg.fit.seed = derive_seed(seed, &[1]);
            run_test(data, spec, &cfg)
        }
        Method::Fzz(cfg) => {
            let mut cfg = *cfg;
            cfg.fit.seed = derive_seed(seed, &[1]);
            if let Calibration::Bootstrap(ref mut b) = cfg.calibration {
                b.seed = derive_seed(seed, &[2]);
            }
            run_fzz(data, spec, &cfg)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTally {
    pub method: String,
    pub rejections: usize,
    pub failures: usize,
    pub rate: f64,
    pub stderr: f64,
    /// Decision statistic per replication (`None` where the run failed).
    #[serde(skip)]
    pub statistics: Vec<Option<f64>>,
    #[serde(skip)]
    pub q_hats: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: DgpSpec,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<MethodTally>,
    /// More than 5% of replications failed for some method.
    pub unreliable: bool,
    pub wall_time_ms: u128,
}

/// `count / reps` and its binomial standard error.
pub fn rate_and_stderr(count: usize, reps: usize) -> (f64, f64) {
    let r = count as f64 / reps as f64;
    (r, (r * (1.0 - r) / reps as f64).sqrt())
}

/// Replicate the design `reps` times. Replication `r` draws its data from the
/// stream `(seed, r)`, so results do not depend on the thread count.
pub fn run_experiment(spec: &DgpSpec, n: usize, reps: usize, methods: &[NamedMethod], seed: u64) -> Result<ExperimentResult> {
    spec.validate()?;
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods configured".into()));
    }
    let start = Instant::now();
    let null = spec.null_spec();
    let per_rep: Vec<Vec<Option<(bool, Option<f64>, usize)>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(seed, &[r as u64]);
            let data = match dgp_generate(spec, n, rep_seed) {
                Ok(d) => d,
                Err(_) => return vec![None; methods.len()],
            };
            methods
                .iter()
                .map(|m| {
                    let report = run_method(&m.method, &data, &null, rep_seed).ok()?;
                    let stat = Some(report.decision_statistic());
                    Some((report.reject, stat, report.q_hat))
                })
                .collect()
        })
        .collect();

    let mut tallies = Vec::with_capacity(methods.len());
    let mut unreliable = false;
    for (k, m) in methods.iter().enumerate() {
        let mut rejections = 0;
        let mut failures = 0;
        let mut statistics = Vec::with_capacity(reps);
        let mut q_hats = Vec::with_capacity(reps);
        for rep in &per_rep {
            match rep[k] {
                Some((reject, stat, q)) => {
                    rejections += usize::from(reject);
                    statistics.push(stat);
                    q_hats.push(Some(q));
                }
                None => {
                    failures += 1;
                    statistics.push(None);
                    q_hats.push(None);
                }
            }
        }
        if failures * 20 > reps {
            unreliable = true;
        }
        let (rate, stderr) = rate_and_stderr(rejections, reps);
        tallies.push(MethodTally {
            method: m.name.clone(),
            rejections,
            failures,
            rate,
            stderr,
            statistics,
            q_hats,
        });
    }
    Ok(ExperimentResult {
        spec: *spec,
        n,
        reps,
        seed,
        methods: tallies,
        unreliable,
        wall_time_ms: start.elapsed().as_millis(),
    })
}

pub const TABLE_HEADER: [&str; 8] = ["family", "error", "p", "n", "a", "method", "rate", "stderr"];

/// Write the rejection-rate table as CSV.
pub fn write_table<W: Write>(results: &[ExperimentResult], out: W) -> Result<()> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no results to write".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER).map_err(csv_err)?;
    for r in results {
        for m in &r.methods {
            w.write_record([
                r.spec.family.to_string(),
                r.spec.error.to_string(),
                r.spec.p.to_string(),
                r.n.to_string(),
                r.spec.a.to_string(),
                m.method.clone(),
                format!("{:.6}", m.rate),
                format!("{:.6}", m.stderr),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long-format power-curve data: one row per (design, method, a), sorted so
/// each curve is contiguous and ordered by `a`.
pub fn write_plot_data<W: Write>(results: &[ExperimentResult], out: W) -> Result<()> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no results to write".into()));
    }
    let mut rows: Vec<(String, String, usize, usize, String, f64, f64, f64)> = Vec::new();
    for r in results {
        for m in &r.methods {
            rows.push((
                r.spec.family.to_string(),
                r.spec.error.to_string(),
                r.spec.p,
                r.n,
                m.method.clone(),
                r.spec.a,
                m.rate,
                m.stderr,
            ));
        }
    }
    rows.sort_by(|x, y| {
        (&x.0, &x.1, x.2, x.3, &x.4)
            .cmp(&(&y.0, &y.1, y.2, y.3, &y.4))
            .then(x.5.total_cmp(&y.5))
    });
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "error", "p", "n", "method", "a", "rate", "stderr"])
        .map_err(csv_err)?;
    for row in rows {
        w.write_record([
            row.0,
            row.1,
            row.2.to_string(),
            row.3.to_string(),
            row.4,
            row.5.to_string(),
            format!("{:.6}", row.6),
            format!("{:.6}", row.7),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numerical(format!("csv writer: {other:?}")),
    }
}

/// Write the table to `path` and the plot data next to it (`*.plot.csv`).
pub fn emit_table(results: &[ExperimentResult], path: &Path) -> Result<PathBuf> {
    let file = std::fs::File::create(path)?;
    write_table(results, std::io::BufWriter::new(file))?;
    let plot = plot_path(path);
    let file = std::fs::File::create(&plot)?;
    write_plot_data(results, std::io::BufWriter::new(file))?;
    Ok(plot)
}

pub fn plot_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
    path.with_file_name(format!("{stem}.plot.csv"))
}

/// Declarative experiment grid.
///
/// ```toml
/// seed = 7
/// reps = 500
/// methods = ["rn_opg", "fzz_b"]
/// output = "table.csv"
///
/// [[design]]
/// family = "H21"
/// p = [4]
/// n = [100]
/// a = [0.0, 0.5, 1.0]
/// error = ["normal:2.56", "t5"]
/// x_cov = "ar02"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub seed: u64,
    pub reps: usize,
    pub methods: Vec<String>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_selector")]
    pub selector: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_scale")]
    pub bandwidth_scale: f64,
    #[serde(default = "default_bootstrap_b")]
    pub bootstrap_b: usize,
    #[serde(default)]
    pub weight_scheme: WeightScheme,
    pub design: Vec<DesignBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignBlock {
    pub family: String,
    pub p: Vec<usize>,
    pub n: Vec<usize>,
    pub a: Vec<f64>,
    pub error: Vec<String>,
    #[serde(default)]
    pub x_cov: CovariateCov,
}

fn default_selector() -> String {
    "rre".into()
}
fn default_alpha() -> f64 {
    0.05
}
fn default_scale() -> f64 {
    1.5
}
fn default_bootstrap_b() -> usize {
    250
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub spec: DgpSpec,
    pub n: usize,
}

impl ExperimentGrid {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let grid: ExperimentGrid = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.design.is_empty() {
            return Err(Error::Config("at least one [[design]] block is required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.bandwidth_scale > 0.0) || !self.bandwidth_scale.is_finite() {
            return Err(Error::Config("bandwidth_scale must be positive".into()));
        }
        self.defaults()?;
        self.named_methods()?;
        self.cells()?;
        Ok(())
    }

    pub fn defaults(&self) -> Result<MethodDefaults> {
        Ok(MethodDefaults {
            selector: parse_selector(&self.selector)?,
            alpha: self.alpha,
            bandwidth_scale: self.bandwidth_scale,
            bootstrap_b: self.bootstrap_b,
            weight_scheme: self.weight_scheme,
            one_sided: false,
        })
    }

    pub fn named_methods(&self) -> Result<Vec<NamedMethod>> {
        let defaults = self.defaults()?;
        let methods = self
            .methods
            .iter()
            .map(|m| method_from_name(m, &defaults))
            .collect::<Result<Vec<_>>>()?;
        if methods.iter().any(|m| matches!(m.method, Method::Fzz(_))) && self.bootstrap_b < 100 {
            return Err(Error::Config("bootstrap_b must be at least 100".into()));
        }
        Ok(methods)
    }

    /// Cartesian expansion in block order, then p, n, error, a.
    pub fn cells(&self) -> Result<Vec<GridCell>> {
        let mut cells = Vec::new();
        for block in &self.design {
            let family: Family = block.family.parse()?;
            if block.p.is_empty() || block.n.is_empty() || block.a.is_empty() || block.error.is_empty() {
                return Err(Error::Config(format!("design block for {family} has an empty list")));
            }
            for &p in &block.p {
                for &n in &block.n {
                    if n < 3 {
                        return Err(Error::Config(format!("sample size {n} is too small")));
                    }
                    for e in &block.error {
                        let error: ErrorLaw = e.parse()?;
                        for &a in &block.a {
                            let spec = DgpSpec {
                                family,
                                p,
                                a,
                                error,
                                x_cov: block.x_cov,
                            };
                            spec.validate()?;
                            cells.push(GridCell { spec, n });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    pub fn run(&self) -> Result<Vec<ExperimentResult>> {
        let methods = self.named_methods()?;
        self.cells()?
            .iter()
            .map(|c| run_experiment(&c.spec, c.n, self.reps, &methods, self.seed))
            .collect()
    }
}

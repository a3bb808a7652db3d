use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use glrt::analysis::{analyze, AnalysisReport};
use glrt::baseline::WeightScheme;
use glrt::ingest::ColumnSchema;
use glrt::kernelmath::kernel_constants;
use glrt::simlab::{
    method_from_name, parse_selector, run_experiment, write_plot_data, write_table, CovariateCov, DgpSpec,
    ErrorLaw, ExperimentGrid, ExperimentResult, Family, MethodDefaults, NamedMethod,
};
use glrt::{Error, Result};

#[derive(Parser)]
#[command(name = "glrt", version, about = "Dimension-reduction likelihood-ratio tests for parametric single-index regression")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the kernel constants as JSON.
    Constants {
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
    },
    /// Monte Carlo size/power study, one design cell or a TOML grid.
    Simulate(SimulateArgs),
    /// Run a single test on a CSV file and print the report.
    Test(DataArgs),
    /// Fit the linear null on a CSV file and run several tests.
    Analyze(DataArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weights {
    Rademacher,
    Mammen,
}

impl From<Weights> for WeightScheme {
    fn from(w: Weights) -> Self {
        match w {
            Weights::Rademacher => WeightScheme::Rademacher,
            Weights::Mammen => WeightScheme::Mammen,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum XCov {
    Identity,
    Ar02,
}

#[derive(Args)]
struct MethodArgs {
    /// Methods: rn_opg, rn_mave, sn_opg, sn_mave (suffix _raw for the
    /// unadjusted statistic), fzz_a, fzz_b. Comma separated.
    #[arg(long = "stat", value_delimiter = ',')]
    stat: Vec<String>,
    /// rre, bic or fixed:K.
    #[arg(long, default_value = "rre")]
    selector: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1.5)]
    bandwidth_scale: f64,
    #[arg(long, default_value_t = 250)]
    bootstrap_b: usize,
    #[arg(long, value_enum, default_value = "rademacher")]
    weights: Weights,
    /// Reject on the upper tail only.
    #[arg(long)]
    one_sided: bool,
}

impl MethodArgs {
    fn defaults(&self) -> Result<MethodDefaults> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.bandwidth_scale > 0.0) || !self.bandwidth_scale.is_finite() {
            return Err(Error::Config("bandwidth scale must be positive".into()));
        }
        Ok(MethodDefaults {
            selector: parse_selector(&self.selector)?,
            alpha: self.alpha,
            bandwidth_scale: self.bandwidth_scale,
            bootstrap_b: self.bootstrap_b,
            weight_scheme: self.weights.into(),
            one_sided: self.one_sided,
        })
    }

    fn methods(&self, fallback: &[&str]) -> Result<Vec<NamedMethod>> {
        let defaults = self.defaults()?;
        let names: Vec<String> = if self.stat.is_empty() {
            fallback.iter().map(|s| s.to_string()).collect()
        } else {
            self.stat.clone()
        };
        names.iter().map(|n| method_from_name(n, &defaults)).collect()
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML experiment grid; replaces the single-cell flags.
    #[arg(long, conflicts_with_all = ["model", "n", "p", "a", "error", "reps"])]
    config: Option<PathBuf>,
    /// Design family, H11 ... H32.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Amplitude, or a comma-separated list for a power curve.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    a: Vec<f64>,
    /// normal, normal:VAR, t5 or laplace.
    #[arg(long, default_value = "normal")]
    error: String,
    #[arg(long, value_enum, default_value = "identity")]
    x_cov: XCov,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[command(flatten)]
    methods: MethodArgs,
    /// Output file (stdout when omitted). CSV output also writes `*.plot.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    /// Covariate columns, comma separated, in order.
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    /// Center and scale every column (after any transform).
    #[arg(long)]
    standardize: bool,
    /// Apply the Yeo-Johnson transform with this lambda to every column.
    #[arg(long)]
    yeo_johnson: Option<f64>,
    /// Include an intercept in the linear null.
    #[arg(long)]
    intercept: bool,
    #[command(flatten)]
    methods: MethodArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl DataArgs {
    fn schema(&self) -> ColumnSchema {
        ColumnSchema {
            response: self.response.clone(),
            covariates: self.covariates.clone(),
            standardize: self.standardize,
            yeo_johnson_lambda: self.yeo_johnson,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    }
    match cli.command {
        Command::Constants { tolerance } => {
            let k = kernel_constants(tolerance)?;
            println!("{}", to_json(&k)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(args) => simulate(&args),
        Command::Test(args) => {
            let methods = args.methods.methods(&["rn_opg"])?;
            if methods.len() != 1 {
                return Err(Error::Config("`test` runs exactly one method; use `analyze` for several".into()));
            }
            let report = analyze(&args.data, &args.schema(), args.intercept, &methods, args.methods.seed)?;
            emit_report(&report, args.format.unwrap_or(Format::Json), args.out.as_deref())
        }
        Command::Analyze(args) => {
            let methods = args.methods.methods(&["rn_opg", "rn_mave"])?;
            let report = analyze(&args.data, &args.schema(), args.intercept, &methods, args.methods.seed)?;
            emit_report(&report, args.format.unwrap_or(Format::Text), args.out.as_deref())
        }
    }
}

fn simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let results = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let grid = ExperimentGrid::from_toml_str(&text)?;
            let results = grid.run()?;
            if args.out.is_none() {
                if let Some(out) = &grid.output {
                    write_results(&results, args.format, Some(out))?;
                    return Ok(exit_for(&results));
                }
            }
            results
        }
        None => {
            let missing = |flag: &str| Error::Config(format!("--{flag} is required without --config"));
            let family: Family = args.model.as_deref().ok_or_else(|| missing("model"))?.parse()?;
            let n = args.n.ok_or_else(|| missing("n"))?;
            let p = args.p.ok_or_else(|| missing("p"))?;
            if n < 3 {
                return Err(Error::Config(format!("sample size {n} is too small")));
            }
            let error: ErrorLaw = args.error.parse()?;
            let x_cov = match args.x_cov {
                XCov::Identity => CovariateCov::Identity,
                XCov::Ar02 => CovariateCov::Ar02,
            };
            let methods = args.methods.methods(&["rn_opg"])?;
            args.a
                .iter()
                .map(|&a| {
                    let spec = DgpSpec {
                        family,
                        p,
                        a,
                        error,
                        x_cov,
                    };
                    run_experiment(&spec, n, args.reps, &methods, args.methods.seed)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    write_results(&results, args.format, args.out.as_deref())?;
    Ok(exit_for(&results))
}

fn exit_for(results: &[ExperimentResult]) -> ExitCode {
    let bad: Vec<String> = results
        .iter()
        .filter(|r| r.unreliable)
        .map(|r| format!("{} p={} n={} a={}", r.spec.family, r.spec.p, r.n, r.spec.a))
        .collect();
    if bad.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("warning: more than 5% of replications failed in: {}", bad.join("; "));
        ExitCode::from(5)
    }
}

fn write_results(results: &[ExperimentResult], format: Format, out: Option<&Path>) -> Result<()> {
    match format {
        Format::Csv => {
            with_output(out, |w| write_table(results, w))?;
            if let Some(path) = out {
                let plot = glrt::simlab::plot_path(path);
                write_plot_data(results, BufWriter::new(File::create(plot)?))?;
            }
            Ok(())
        }
        Format::Json => {
            let text = to_json(&results)?;
            with_output(out, |w| Ok(writeln!(w, "{text}")?))
        }
        Format::Text => {
            with_output(out, |w| {
                for r in results {
                    for m in &r.methods {
                        writeln!(
                            w,
                            "{} {} p={} n={} a={} {:<12} rate {:.4} (se {:.4}) failures {}",
                            r.spec.family, r.spec.error, r.spec.p, r.n, r.spec.a, m.method, m.rate, m.stderr, m.failures
                        )?;
                    }
                }
                Ok(())
            })
        }
    }
}

fn emit_report(report: &AnalysisReport, format: Format, out: Option<&Path>) -> Result<ExitCode> {
    with_output(out, |w| {
        match format {
            Format::Json => writeln!(w, "{}", to_json(report)?)?,
            Format::Text => write!(w, "{}", report.summary())?,
            Format::Csv => {
                writeln!(w, "method,variant,statistic,p_value,reject,q_hat,bandwidth,n_used,dropped_rows")?;
                for r in &report.reports {
                    let rep = &r.report;
                    writeln!(
                        w,
                        "{},{:?},{},{},{},{},{},{},{}",
                        r.method,
                        rep.variant,
                        rep.decision_statistic(),
                        rep.p_value,
                        rep.reject,
                        rep.q_hat,
                        rep.bandwidth,
                        rep.n_used,
                        rep.dropped_rows
                    )?;
                }
            }
        }
        Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn with_output<F>(out: Option<&Path>, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            body(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn to_json<T: serde::Serialize + ?Sized>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("cannot serialize output: {e}")))
}

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use medtest_core::data::{load_dataset, DatasetPaths, LambdaSearch, ModelConfig, TestMethod, Variant};
use medtest_core::mediation::{run, Diagnostics, TestResult};
use medtest_core::simulation::{run_monte_carlo_methods, SimulationPlan, Table, TableFormat};
use medtest_core::Error;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "medtest", version, about = "Testing high-dimensional mediation effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mediation test on CSV inputs.
    Test(TestArgs),
    /// Run Monte Carlo scenarios from a TOML file.
    Simulate(SimulateArgs),
    /// Merge result CSVs into one table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Bonf,
    Chisq,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    Restricted,
}

#[derive(Clone, Copy, ValueEnum)]
enum SearchArg {
    Escalate,
    Refine,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Text,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Text => TableFormat::Text,
        }
    }
}

#[derive(clap::Args)]
struct TestArgs {
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    m: PathBuf,
    /// Optional covariates.
    #[arg(long)]
    c: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, value_enum, default_value = "bonf")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "full")]
    variant: VariantArg,
    #[arg(long, default_value_t = 1.0)]
    lambda_scale: f64,
    /// `refine` also shrinks a feasible base lambda.
    #[arg(long, value_enum, default_value = "refine")]
    lambda_search: SearchArg,
    #[arg(long, default_value_t = 1.0)]
    mu_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    lasso_scale: f64,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replications per scenario; overrides the file.
    #[arg(long)]
    reps: Option<i64>,
    /// Base seed; overrides the file. Defaults to 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Directory of result CSVs, merged in file-name order.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Input(format!("cannot write to stdout: {e}")))
        }
    }
}

#[derive(Serialize)]
struct TestReport<'a> {
    schema_version: u32,
    method: TestMethod,
    variant: Variant,
    alpha: f64,
    tau: f64,
    gamma_hat: Vec<f64>,
    gamma_pilot: Vec<f64>,
    v_hat: Vec<Vec<f64>>,
    t_stats: Vec<f64>,
    statistic: f64,
    threshold: f64,
    p_value: f64,
    reject: bool,
    diagnostics: &'a Diagnostics,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn report_json(result: &TestResult, config: &ModelConfig) -> String {
    let report = TestReport {
        schema_version: SCHEMA_VERSION,
        method: config.method,
        variant: config.variant,
        alpha: config.alpha,
        tau: config.tau,
        gamma_hat: result.estimate.gamma_hat.iter().copied().collect(),
        gamma_pilot: result.estimate.gamma_pilot.iter().copied().collect(),
        v_hat: rows(&result.variance.v_hat),
        t_stats: result.outcome.t_stats.iter().copied().collect(),
        statistic: result.outcome.statistic,
        threshold: result.outcome.threshold,
        p_value: result.outcome.p_value,
        reject: result.outcome.reject,
        diagnostics: &result.diagnostics,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("finite report serializes");
    text.push('\n');
    text
}

fn cmd_test(args: TestArgs) -> Result<(), Failure> {
    let config = ModelConfig {
        alpha: args.alpha,
        tau: args.tau,
        method: match args.method {
            MethodArg::Bonf => TestMethod::Bonferroni,
            MethodArg::Chisq => TestMethod::ChiSquare,
        },
        variant: match args.variant {
            VariantArg::Full => Variant::Full,
            VariantArg::Restricted => Variant::SupportRestricted,
        },
        lambda_scale: args.lambda_scale,
        lambda_search: match args.lambda_search {
            SearchArg::Escalate => LambdaSearch::Escalate,
            SearchArg::Refine => LambdaSearch::Refine,
        },
        mu_scale: args.mu_scale,
        lasso_scale: args.lasso_scale,
        seed: None,
    };
    config.validate()?;
    let dataset = load_dataset(&DatasetPaths {
        y: args.y,
        a: args.a,
        m: args.m,
        c: args.c,
    })?;
    let result = run(&dataset, &config)?;
    for w in &result.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    write_output(args.out.as_deref(), &report_json(&result, &config))
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", args.config.display())))?;
    let plan = SimulationPlan::from_toml(&text)?;
    let reps = match args.reps {
        Some(r) if r < 1 => return Err(Failure::Input("reps must be at least 1".into())),
        Some(r) => r as usize,
        None => plan.reps.unwrap_or(500),
    };
    let seed = args.seed.or(plan.seed).unwrap_or(0);
    if args.threads == Some(0) {
        return Err(Failure::Input("threads must be at least 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Solver(format!("cannot start worker pool: {e}")))?;

    let total = plan.scenarios.len();
    let mut results = Vec::new();
    for (i, scenario) in plan.scenarios.iter().enumerate() {
        let batch = pool.install(|| run_monte_carlo_methods(scenario, &plan.methods, reps, seed, &plan.config))?;
        let summary: Vec<String> = batch
            .iter()
            .map(|r| format!("{}={:.3}", r.method.label(), r.rate))
            .collect();
        let failures = batch.iter().map(|r| r.failures).max().unwrap_or(0);
        eprintln!(
            "[{}/{}] theta_m={} beta_a={} cov={} q={} n={} p={} c1={} c2={}: {} ({} failures, {:.1}s)",
            i + 1,
            total,
            scenario.theta_m_kind.label(),
            scenario.beta_a_kind.label(),
            scenario.cov_kind.label(),
            scenario.q,
            scenario.n,
            scenario.p,
            scenario.c1,
            scenario.c2,
            summary.join(" "),
            failures,
            batch[0].wall_time.as_secs_f64()
        );
        results.extend(batch);
    }
    let table = Table::from_results(&results);
    write_output(args.out.as_deref(), &table.render(args.format.into()))
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let entries = fs::read_dir(&args.input)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", args.input.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Input(format!("no result CSVs in {}", args.input.display())));
    }
    let mut merged = Table::default();
    for path in &files {
        let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
        let table = Table::parse_csv(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        for w in merged.merge(&table) {
            eprintln!("warning: {}: {w}", path.display());
        }
    }
    merged.sort();
    write_output(args.out.as_deref(), &merged.render(args.format.into()))
}

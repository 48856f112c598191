//! `stratfact`: batch front end for stratified 2^K factorial analysis.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or unmet
//! precondition, 3 numerical singularity. Failures print one JSON object on
//! stderr.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use stratfact_core::dataset::ingest_csv;
use stratfact_core::design::assign_treatments;
use stratfact_core::estimators::{self, EffectEstimate, Method};
use stratfact_core::inference::{wald_intervals, wald_region};
use stratfact_core::simulation::{
    generate_scenario, run_monte_carlo, write_draws, MonteCarloConfig, ScenarioConfig,
};
use stratfact_core::{AssignmentPlan, Error, FactorialDesign, ObservedDataset, Schema};

const THREADS_VAR: &str = "STRATFACT_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "stratfact",
    version,
    about = "Design and analysis of stratified 2^K factorial experiments"
)]
struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a stratified complete randomization from per-stratum arm counts.
    Assign(AssignArgs),
    /// Estimate factorial effects with intervals and a joint region.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo study on one of the built-in scenarios.
    Simulate(SimulateArgs),
    /// Wald region for a subset of effects, optionally testing points.
    Region(RegionArgs),
}

#[derive(Args, Debug)]
struct AssignArgs {
    /// CSV with columns stratum_id, n, n_arm1..n_armQ.
    #[arg(long)]
    strata: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Observed data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Number of factors.
    #[arg(long)]
    k: usize,
    /// Covariate columns; every column other than stratum, arm and outcome when omitted.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long, default_value = "stratum")]
    stratum_col: String,
    #[arg(long, default_value = "arm")]
    arm_col: String,
    #[arg(long, default_value = "y")]
    outcome_col: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Estimators to run, comma separated or repeated.
    #[arg(long, value_delimiter = ',', default_value = "unadj")]
    method: Vec<Method>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RegionArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "unadj")]
    method: Method,
    /// One-based effects spanned by the region; all effects when omitted.
    #[arg(long, value_delimiter = ',')]
    effects: Option<Vec<usize>>,
    /// Point to test for membership, comma separated; may be repeated.
    #[arg(long, allow_hyphen_values = true)]
    point: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario 1 to 4.
    #[arg(long)]
    case: u8,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    /// Seed of the population draw.
    #[arg(long)]
    seed: u64,
    /// Master seed of the replications; defaults to `--seed`.
    #[arg(long)]
    mc_seed: Option<u64>,
    /// Number of strata.
    #[arg(long)]
    m: Option<usize>,
    /// Stratum size.
    #[arg(long)]
    nm: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Methods compared against unadj; all four when omitted.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<Method>>,
    /// One-based effects of the joint region; the main effects when omitted.
    #[arg(long, value_delimiter = ',')]
    region_effects: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-replication estimates as CSV.
    #[arg(long)]
    emit_draws: Option<PathBuf>,
    /// One observed dataset drawn from the population, as analyzable CSV.
    #[arg(long)]
    emit_sample: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Singular { .. } => 3,
            Error::Io(_) => 1,
            Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 1,
            _ => 2,
        };
        Failure {
            kind: e.kind(),
            message: e.to_string(),
            code,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure {
            kind: "io",
            message: e.to_string(),
            code: 1,
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        kind: "validation",
        message: message.into(),
        code: 2,
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| Failure {
        kind: "io",
        message: format!("cannot open {}: {e}", path.display()),
        code: 1,
    })
}

fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure {
            kind: "io",
            message: format!("cannot create {}: {e}", p.display()),
            code: 1,
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json(path: Option<&Path>, value: &Value) -> CliResult<()> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn vcov_rows(est: &EffectEstimate) -> Vec<Vec<f64>> {
    let f = est.effects();
    (0..f)
        .map(|i| (0..f).map(|j| est.vcov[(i, j)]).collect())
        .collect()
}

fn run_assign(args: &AssignArgs) -> CliResult<()> {
    let plan = AssignmentPlan::from_csv(open(&args.strata)?, args.seed)?;
    let rows = assign_treatments(&plan)?;
    let mut w = csv::Writer::from_writer(sink(args.out.as_deref())?);
    w.write_record(["unit_id", "stratum_id", "arm"])
        .map_err(Error::from)?;
    for r in rows {
        w.write_record([
            (r.unit + 1).to_string(),
            plan.strata[r.stratum].id.clone(),
            (r.arm + 1).to_string(),
        ])
        .map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn load(args: &DataArgs) -> CliResult<(FactorialDesign, ObservedDataset)> {
    check_alpha(args.alpha)?;
    let design = FactorialDesign::new(args.k)?;
    let schema = Schema {
        stratum: args.stratum_col.clone(),
        arm: args.arm_col.clone(),
        outcome: args.outcome_col.clone(),
        covariates: args.covariates.clone(),
        ..Schema::default()
    };
    let data = ingest_csv(open(&args.data)?, &schema, &design)?;
    Ok((design, data))
}

fn data_config(args: &DataArgs, data: &ObservedDataset) -> Value {
    json!({
        "data": args.data.display().to_string(),
        "K": args.k,
        "alpha": args.alpha,
        "stratum_col": args.stratum_col,
        "arm_col": args.arm_col,
        "outcome_col": args.outcome_col,
        "covariates": data.covariate_names(),
        "units": data.units(),
        "strata": data.strata(),
    })
}

/// The per-method block of an analysis.
fn result_block(est: &EffectEstimate, design: &FactorialDesign, alpha: f64) -> CliResult<Value> {
    let intervals = wald_intervals(est, alpha)?;
    let region = match wald_region(est, alpha, None) {
        Ok(r) => json!({
            "effects": r.effects,
            "threshold": r.threshold,
            "precision": r.precision,
            "area": r.area,
            "log_volume": r.log_volume,
        }),
        // rank-deficient Vhat: intervals remain usable, the region does not
        Err(e @ Error::Singular { .. }) => json!({ "unavailable": e.to_string() }),
        Err(e) => return Err(e.into()),
    };
    Ok(json!({
        "method": est.method,
        "K": design.factors(),
        "F": design.effects(),
        "labels": est.labels,
        "tau_hat": est.tau_hat.as_slice(),
        "vcov": vcov_rows(est),
        "intervals": intervals,
        "region": region,
        "diagnostics": est.diagnostics,
    }))
}

fn run_analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let (design, data) = load(&args.data)?;
    let mut methods = Vec::new();
    for m in &args.method {
        if !methods.contains(m) {
            methods.push(*m);
        }
    }
    let results = methods
        .iter()
        .map(|&m| {
            result_block(
                &estimators::estimate(m, &data, &design)?,
                &design,
                args.data.alpha,
            )
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut config = data_config(&args.data, &data);
    config["command"] = json!("analyze");
    config["methods"] = json!(methods);
    write_json(
        args.out.as_deref(),
        &json!({ "config": config, "results": results }),
    )
}

fn parse_point(raw: &str) -> CliResult<Vec<f64>> {
    raw.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| invalid(format!("point coordinate `{v}` is not a number")))
        })
        .collect()
}

fn run_region(args: &RegionArgs) -> CliResult<()> {
    let (design, data) = load(&args.data)?;
    let selected: Option<Vec<usize>> = match &args.effects {
        Some(fs) => Some(
            fs.iter()
                .map(|&f| {
                    if f == 0 || f > design.effects() {
                        Err(invalid(format!(
                            "effect {f} outside 1..={}",
                            design.effects()
                        )))
                    } else {
                        Ok(f - 1)
                    }
                })
                .collect::<CliResult<_>>()?,
        ),
        None => None,
    };
    let est = estimators::estimate(args.method, &data, &design)?;
    let region = wald_region(&est, args.data.alpha, selected.as_deref())?;
    let mut points = Vec::new();
    for raw in &args.point {
        let mu = parse_point(raw)?;
        if mu.len() != region.center.len() {
            return Err(invalid(format!(
                "point `{raw}` has {} coordinates, the region has {}",
                mu.len(),
                region.center.len()
            )));
        }
        points.push(json!({
            "point": mu,
            "quadratic_form": region.quadratic_form(&mu),
            "contains": region.contains(&mu),
        }));
    }
    let labels: Vec<&String> = region.effects.iter().map(|&f| &est.labels[f - 1]).collect();
    let mut config = data_config(&args.data, &data);
    config["command"] = json!("region");
    config["method"] = json!(args.method);
    config["effects"] = json!(region.effects);
    write_json(
        args.out.as_deref(),
        &json!({
            "config": config,
            "method": args.method,
            "labels": labels,
            "region": region,
            "points": points,
        }),
    )
}

fn write_sample(path: &Path, data: &ObservedDataset) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["stratum".to_string(), "arm".into(), "y".into()];
    header.extend(data.covariate_names().iter().cloned());
    w.write_record(&header).map_err(Error::from)?;
    for i in 0..data.units() {
        let mut row = vec![
            data.stratum_ids()[data.stratum_of(i)].clone(),
            (data.arm_of(i) + 1).to_string(),
            data.outcome(i).to_string(),
        ];
        row.extend(data.covariates(i).iter().map(f64::to_string));
        w.write_record(&row).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateConfig<'a> {
    command: &'static str,
    case: u8,
    seed: u64,
    mc_seed: u64,
    strata: usize,
    stratum_size: usize,
    reps: usize,
    alpha: f64,
    methods: &'a [Method],
    region_effects: Vec<usize>,
}

fn run_simulate(args: &SimulateArgs, verbose: bool) -> CliResult<()> {
    check_alpha(args.alpha)?;
    let scenario = ScenarioConfig::new(args.case, args.seed)?.with_size(args.m, args.nm);
    let design = FactorialDesign::new(2)?;
    if verbose {
        eprintln!(
            "generating case {} population: {} strata of {}",
            scenario.case, scenario.strata, scenario.stratum_size
        );
    }
    let pop = generate_scenario(&scenario)?;
    let mc_seed = args.mc_seed.unwrap_or(args.seed);
    let requested = args.method.clone().unwrap_or_else(|| Method::ALL.to_vec());
    let mut cfg = MonteCarloConfig::new(requested, args.reps, mc_seed);
    cfg.alpha = args.alpha;
    cfg.region_effects = args.region_effects.clone();
    if verbose {
        eprintln!("running {} replications", args.reps);
    }
    let run = run_monte_carlo(&pop, &design, &cfg)?;
    if let Some(path) = &args.emit_draws {
        write_draws(
            &run,
            &design.effect_labels(),
            BufWriter::new(File::create(path)?),
        )?;
    }
    if let Some(path) = &args.emit_sample {
        write_sample(path, &pop.draw_observed(&design, mc_seed)?)?;
    }
    let config = SimulateConfig {
        command: "simulate",
        case: scenario.case,
        seed: args.seed,
        mc_seed,
        strata: scenario.strata,
        stratum_size: scenario.stratum_size,
        reps: args.reps,
        alpha: args.alpha,
        methods: &run.methods,
        region_effects: run.metrics.region_effects.clone(),
    };
    write_json(
        args.out.as_deref(),
        &json!({
            "config": config,
            "labels": design.effect_labels(),
            "population": pop.metadata,
            "metrics": run.metrics,
        }),
    )
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        invalid(format!(
            "{THREADS_VAR} must be a non-negative integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| invalid(format!("cannot configure thread pool: {e}")))
}

fn run(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Assign(a) => run_assign(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Simulate(a) => run_simulate(a, cli.verbose),
        Command::Region(a) => run_region(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let body =
                json!({ "error": { "kind": f.kind, "message": f.message, "exit_code": f.code } });
            eprintln!("{body}");
            ExitCode::from(f.code)
        }
    }
}

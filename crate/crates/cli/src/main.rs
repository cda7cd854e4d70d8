//! `fairmas`: validate scenarios, measure fairness, and search configurations.
//!
//! Reports go to standard output as canonical JSON; diagnostics go to
//! standard error. Exit codes: 0 ok or fair, 1 validation or flag errors,
//! 2 parse errors, 3 metric not satisfied, 4 enumeration cap exceeded.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use fairmas_core::engine::{Dynamics, EngineError, DEFAULT_ENUM_CAP};
use fairmas_core::metrics::{self, EvalConfig, MetricError, MetricKind, Method, DEFAULT_TOLERANCE};
use fairmas_core::model::{validate_system, SystemSpec};
use fairmas_core::optimizer::{
    self, ConfigSpace, EvolutionParams, Objective, OptimizeError, ParamKind, DEFAULT_GRID_CAP,
};
use fairmas_core::report::ReportDocument;
use fairmas_core::scenario::{
    build_traffic, canonical_json, describe, parse_document, save_system, Car, ScenarioError, TrafficParams,
};

const ENUM_CAP_VAR: &str = "FAIRMAS_ENUM_CAP";

#[derive(Debug, Parser)]
#[command(name = "fairmas", version, about = "Fairness measures for multi-agent systems")]
struct Cli {
    /// Accept scenario documents with unknown keys.
    #[arg(long, global = true)]
    lenient: bool,
    /// Worker threads for sampling and search (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Include wall-clock time in reports (makes them non-reproducible).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario file and list its violations.
    Validate { path: PathBuf },
    /// Evaluate a fairness measure.
    Metric {
        path: PathBuf,
        #[command(flatten)]
        metric: MetricArgs,
    },
    /// Write the counterfactual system (protected attribute flipped).
    Counterfactual {
        path: PathBuf,
        #[arg(long)]
        protected: String,
        /// Output file (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a scenario from a registered family.
    Gen {
        #[arg(long, default_value = "traffic")]
        family: String,
        #[command(flatten)]
        traffic: TrafficArgs,
        /// Output file (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate every run: count, probability mass, exact expected rewards.
    Enumerate {
        path: PathBuf,
        #[arg(long)]
        horizon: usize,
    },
    /// Summarize a scenario and estimate its run count.
    Describe {
        path: PathBuf,
        #[arg(long, default_value_t = 1)]
        horizon: usize,
    },
    /// Search configurations for the lowest objective value.
    Optimize {
        /// Scenario file; searches over its start state.
        path: Option<PathBuf>,
        /// Registered family to search instead of a file.
        #[arg(long, conflicts_with = "path")]
        family: Option<String>,
        /// Family parameters to search, comma separated (name or name=lo:hi).
        #[arg(long, value_delimiter = ',')]
        params: Vec<String>,
        #[arg(long, value_enum, default_value_t = Algorithm::Grid)]
        algorithm: Algorithm,
        /// Points per real parameter (grid).
        #[arg(long, default_value_t = 11)]
        resolution: usize,
        /// Largest grid allowed.
        #[arg(long, default_value_t = DEFAULT_GRID_CAP)]
        max_grid: u64,
        /// Evaluation budget (random, evolutionary).
        #[arg(long, default_value_t = 100)]
        budget: usize,
        #[arg(long, default_value_t = 5)]
        population: usize,
        #[arg(long, default_value_t = 10)]
        offspring: usize,
        #[arg(long, default_value_t = 0.1)]
        mutation_scale: f64,
        /// Seed of the search itself (random, evolutionary).
        #[arg(long, default_value_t = 0)]
        search_seed: u64,
        /// Weight of total expected reward subtracted from the objective.
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Minimize the signed measure instead of its absolute value.
        #[arg(long)]
        signed: bool,
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        traffic: TrafficArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricName {
    Dempar,
    Countfair,
    Condsp,
}

impl From<MetricName> for MetricKind {
    fn from(m: MetricName) -> Self {
        match m {
            MetricName::Dempar => MetricKind::DemPar,
            MetricName::Countfair => MetricKind::CountFair,
            MetricName::Condsp => MetricKind::CondSp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodName {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algorithm {
    Grid,
    Random,
    Evolutionary,
}

#[derive(Debug, Args)]
struct MetricArgs {
    #[arg(long, value_enum, default_value_t = MetricName::Dempar)]
    metric: MetricName,
    /// Protected attribute name (default: the first protected attribute).
    #[arg(long)]
    protected: Option<String>,
    /// Legitimate factors for condsp, comma separated.
    #[arg(long, value_delimiter = ',')]
    legit_factors: Option<Vec<String>>,
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long, value_enum, default_value_t = MethodName::Exact)]
    method: MethodName,
    /// Monte Carlo sample count (default 10000).
    #[arg(long)]
    samples: Option<usize>,
    /// Monte Carlo seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct TrafficArgs {
    #[arg(long)]
    corridor_length: Option<usize>,
    /// Cars, comma separated: human|ai with optional :high|:low.
    #[arg(long, value_delimiter = ',')]
    cars: Option<Vec<Car>>,
    #[arg(long)]
    fast_route_gain: Option<f64>,
    #[arg(long)]
    human_gain: Option<f64>,
    #[arg(long)]
    slow_route_gain: Option<f64>,
    #[arg(long)]
    dedicated_lane: bool,
    #[arg(long, allow_negative_numbers = true)]
    arrival_reward: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    step_cost: Option<f64>,
    #[arg(long)]
    ai_fast_prob: Option<f64>,
    #[arg(long)]
    human_fast_prob: Option<f64>,
    #[arg(long)]
    fast_prob_override: Option<f64>,
    #[arg(long)]
    low_speed_factor: Option<f64>,
}

impl TrafficArgs {
    fn params(&self) -> TrafficParams {
        let mut p = TrafficParams::default();
        if let Some(v) = self.corridor_length {
            p.corridor_length = v;
        }
        if let Some(v) = &self.cars {
            p.cars = v.clone();
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { p.$f = v; } )* };
        }
        set!(
            fast_route_gain,
            human_gain,
            slow_route_gain,
            arrival_reward,
            step_cost,
            ai_fast_prob,
            human_fast_prob,
            low_speed_factor
        );
        p.dedicated_lane = self.dedicated_lane;
        p.fast_prob_override = self.fast_prob_override;
        p
    }

    fn is_default(&self) -> bool {
        self.params() == TrafficParams::default()
    }
}

/// An error with its exit code.
#[derive(Debug)]
struct Failure {
    exit: u8,
    code: String,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            exit: 1,
            code: "INVALID_FLAGS".into(),
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            exit: 1,
            code: "IO_ERROR".into(),
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Self {
            exit: if e.is_parse_error() { 2 } else { 1 },
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let exit = if matches!(e, EngineError::EnumerationCapExceeded { .. }) { 4 } else { 1 };
        Self {
            exit,
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Engine(inner) => inner.into(),
            other => Self {
                exit: 1,
                code: other.code().into(),
                message: other.to_string(),
            },
        }
    }
}

impl From<OptimizeError> for Failure {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Metric(inner) => inner.into(),
            other => Self {
                exit: 1,
                code: other.code().into(),
                message: other.to_string(),
            },
        }
    }
}

type Outcome = Result<(ReportDocument, u8), Failure>;

struct Input {
    bytes: Vec<u8>,
    spec: SystemSpec,
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(path, e))
}

fn text(path: &Path, bytes: &[u8]) -> Result<String, Failure> {
    String::from_utf8(bytes.to_vec()).map_err(|e| Failure {
        exit: 2,
        code: "PARSE_ERROR".into(),
        message: format!("{}: not UTF-8: {e}", path.display()),
    })
}

/// Reads, parses, and validates a scenario file.
fn load(path: &Path, strict: bool) -> Result<Input, Failure> {
    let bytes = read(path)?;
    let spec = fairmas_core::scenario::load_system(&text(path, &bytes)?, strict)?;
    Ok(Input { bytes, spec })
}

fn enum_cap() -> Result<u64, Failure> {
    match std::env::var(ENUM_CAP_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{ENUM_CAP_VAR} must be a non-negative integer, got {v:?}"))),
        Err(_) => Ok(DEFAULT_ENUM_CAP),
    }
}

fn attribute(spec: &SystemSpec, name: &str) -> Result<usize, Failure> {
    spec.attribute_index(name).ok_or_else(|| Failure {
        exit: 1,
        code: "UNKNOWN_ATTRIBUTE".into(),
        message: format!("no attribute named {name:?}"),
    })
}

fn default_protected(spec: &SystemSpec) -> String {
    let first = spec.protected.iter().next().copied().unwrap_or(0);
    spec.attribute_names[first].clone()
}

impl MetricArgs {
    fn check(&self) -> Result<(), Failure> {
        if self.legit_factors.is_some() && self.metric != MetricName::Condsp {
            return Err(Failure::usage("--legit-factors is only valid with --metric condsp"));
        }
        if self.method != MethodName::Mc && (self.samples.is_some() || self.seed.is_some()) {
            return Err(Failure::usage("--samples and --seed are only valid with --method mc"));
        }
        Ok(())
    }

    fn eval(&self) -> Result<EvalConfig, Failure> {
        self.check()?;
        let cfg = match self.method {
            MethodName::Exact => EvalConfig::exact(self.horizon),
            MethodName::Mc => EvalConfig::monte_carlo(self.horizon, self.samples.unwrap_or(10_000), self.seed.unwrap_or(0)),
        };
        Ok(cfg.with_tolerance(self.tolerance).with_enum_cap(enum_cap()?))
    }

    fn legit(&self) -> &[String] {
        self.legit_factors.as_deref().unwrap_or(&[])
    }

    fn parameters(&self, protected: &str, cfg: &EvalConfig) -> Value {
        let mut v = json!({
            "metric": MetricKind::from(self.metric).as_str(),
            "protected": protected,
            "legit_factors": self.legit(),
            "horizon": cfg.horizon,
            "tolerance": cfg.tolerance,
            "enum_cap": cfg.enum_cap,
            "method": "EXACT",
        });
        if let Method::MonteCarlo { samples, seed } = cfg.method {
            v["method"] = json!("MC");
            v["samples"] = json!(samples);
            v["seed"] = json!(seed);
        }
        v
    }
}

fn cmd_validate(argv: Vec<String>, path: &Path, strict: bool) -> Outcome {
    let bytes = read(path)?;
    let spec = parse_document(&text(path, &bytes)?, strict)?.to_spec()?;
    let violations = validate_system(&spec);
    let exit = if violations.is_empty() { 0 } else { 1 };
    for v in &violations {
        eprintln!("{v}");
    }
    let doc = ReportDocument::new(
        argv,
        json!({ "strict": strict }),
        json!({ "valid": violations.is_empty(), "violations": violations }),
    )
    .with_input(&bytes);
    Ok((doc, exit))
}

fn cmd_metric(argv: Vec<String>, path: &Path, strict: bool, args: &MetricArgs) -> Outcome {
    args.check()?;
    let input = load(path, strict)?;
    let spec = &input.spec;
    let cfg = args.eval()?;
    let protected = args.protected.clone().unwrap_or_else(|| default_protected(spec));
    let pr = attribute(spec, &protected)?;
    let lf = args
        .legit()
        .iter()
        .map(|n| attribute(spec, n))
        .collect::<Result<Vec<_>, _>>()?;
    let report = metrics::evaluate(spec, args.metric.into(), pr, &lf, &cfg)?;
    let exit = if report.satisfied { 0 } else { 3 };
    let doc = ReportDocument::new(argv, args.parameters(&protected, &cfg), json!(report)).with_input(&input.bytes);
    Ok((doc, exit))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Writes a scenario document. Returns no report when the document itself
/// went to standard output.
fn cmd_counterfactual(
    argv: Vec<String>,
    path: &Path,
    strict: bool,
    protected: &str,
    out: Option<&Path>,
) -> Result<Option<(ReportDocument, u8)>, Failure> {
    let input = load(path, strict)?;
    let pr = attribute(&input.spec, protected)?;
    let flipped = metrics::counterfactual_system(&input.spec, pr)?;
    let text = save_system(&flipped);
    write_or_print(out, &text)?;
    Ok(out.map(|p| {
        let doc = ReportDocument::new(
            argv,
            json!({ "protected": protected }),
            json!({ "output": p.display().to_string(), "output_digest": fairmas_core::report::digest_hex(text.as_bytes()) }),
        )
        .with_input(&input.bytes);
        (doc, 0)
    }))
}

fn family_params(family: &str, traffic: &TrafficArgs) -> Result<TrafficParams, Failure> {
    if family != "traffic" {
        return Err(Failure::usage(format!(
            "unknown family {family:?} (known: {})",
            optimizer::FAMILIES.join(", ")
        )));
    }
    Ok(traffic.params())
}

fn cmd_gen(
    argv: Vec<String>,
    family: &str,
    traffic: &TrafficArgs,
    out: Option<&Path>,
) -> Result<Option<(ReportDocument, u8)>, Failure> {
    let params = family_params(family, traffic)?;
    let spec = build_traffic(&params)?;
    let text = save_system(&spec);
    write_or_print(out, &text)?;
    Ok(out.map(|p| {
        let doc = ReportDocument::new(
            argv,
            json!({ "family": family, "traffic": params }),
            json!({ "output": p.display().to_string(), "output_digest": fairmas_core::report::digest_hex(text.as_bytes()) }),
        );
        (doc, 0)
    }))
}

fn cmd_enumerate(argv: Vec<String>, path: &Path, strict: bool, horizon: usize) -> Outcome {
    let input = load(path, strict)?;
    let cap = enum_cap()?;
    let summary = Dynamics::new(&input.spec)?.summarize_runs(horizon, cap)?;
    if (summary.probability_mass - 1.0).abs() > 1e-9 {
        return Err(Failure {
            exit: 1,
            code: "PROBABILITY_MASS".into(),
            message: format!("run probabilities sum to {}", summary.probability_mass),
        });
    }
    let doc = ReportDocument::new(argv, json!({ "horizon": horizon, "enum_cap": cap }), json!(summary)).with_input(&input.bytes);
    Ok((doc, 0))
}

fn cmd_describe(argv: Vec<String>, path: &Path, strict: bool, horizon: usize) -> Outcome {
    let input = load(path, strict)?;
    let summary = describe(&input.spec, horizon)?;
    let doc = ReportDocument::new(argv, json!({ "horizon": horizon }), json!(summary)).with_input(&input.bytes);
    Ok((doc, 0))
}

/// `name` or `name=lo:hi`.
fn parse_param(raw: &str) -> Result<(String, Option<ParamKind>), Failure> {
    let Some((name, range)) = raw.split_once('=') else {
        return Ok((raw.trim().to_string(), None));
    };
    let name = name.trim().to_string();
    let default = optimizer::traffic_param_kind(&name)
        .ok_or_else(|| Failure::usage(format!("unknown traffic parameter {name:?}")))?;
    let (lo, hi) = range
        .split_once(':')
        .ok_or_else(|| Failure::usage(format!("{raw}: range must be lo:hi")))?;
    let bad = || Failure::usage(format!("{raw}: bad range"));
    let kind = match default {
        ParamKind::Boolean => return Err(Failure::usage(format!("{name} is boolean and takes no range"))),
        ParamKind::Integer { .. } => ParamKind::Integer {
            lo: lo.trim().parse().map_err(|_| bad())?,
            hi: hi.trim().parse().map_err(|_| bad())?,
        },
        ParamKind::Real { .. } => ParamKind::Real {
            lo: lo.trim().parse().map_err(|_| bad())?,
            hi: hi.trim().parse().map_err(|_| bad())?,
        },
    };
    Ok((name, Some(kind)))
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    argv: Vec<String>,
    strict: bool,
    path: Option<&Path>,
    family: Option<&str>,
    params: &[String],
    algorithm: Algorithm,
    search: SearchArgs,
    metric: &MetricArgs,
    traffic: &TrafficArgs,
) -> Outcome {
    metric.check()?;
    let cfg = metric.eval()?;
    let (space, bytes, protected, parameters): (ConfigSpace, Option<Vec<u8>>, String, Value) = match (path, family) {
        (Some(path), None) => {
            if !params.is_empty() && params.iter().any(|p| p != "start") {
                return Err(Failure::usage("a scenario file only exposes the parameter `start`"));
            }
            if !traffic.is_default() {
                return Err(Failure::usage("traffic flags require --family traffic"));
            }
            let input = load(path, strict)?;
            let protected = metric.protected.clone().unwrap_or_else(|| default_protected(&input.spec));
            attribute(&input.spec, &protected)?;
            let space = optimizer::start_state_space(input.spec)?;
            (space, Some(input.bytes), protected, json!({ "source": "file" }))
        }
        (None, Some(family)) => {
            let base = family_params(family, traffic)?;
            let parsed = params.iter().map(|p| parse_param(p)).collect::<Result<Vec<_>, _>>()?;
            let space = optimizer::traffic_space(base.clone(), &parsed)?;
            let protected = metric.protected.clone().unwrap_or_else(|| "human_driven".into());
            (space, None, protected, json!({ "source": "family", "family": family, "base": base }))
        }
        _ => return Err(Failure::usage("give either a scenario file or --family")),
    };
    let objective = Objective {
        metric: metric.metric.into(),
        protected: protected.clone(),
        legit_factors: metric.legit().to_vec(),
        eval: cfg,
        lambda: search.lambda,
        signed: search.signed,
    };
    let result = match algorithm {
        Algorithm::Grid => optimizer::grid_search(&space, &objective, search.resolution, search.max_grid)?,
        Algorithm::Random => optimizer::random_search(&space, &objective, search.budget, search.seed)?,
        Algorithm::Evolutionary => optimizer::evolutionary_search(
            &space,
            &objective,
            EvolutionParams {
                budget: search.budget,
                population: search.population,
                offspring: search.offspring,
                mutation_scale: search.mutation_scale,
            },
            search.seed,
        )?,
    };
    let algorithm_name = format!("{algorithm:?}").to_lowercase();
    let parameters = json!({
        "space": parameters,
        "searched": space.params(),
        "objective": metric.parameters(&protected, &cfg),
        "lambda": search.lambda,
        "signed": search.signed,
        "algorithm": algorithm_name,
        "search": match algorithm {
            Algorithm::Grid => json!({ "resolution": search.resolution, "max_grid": search.max_grid }),
            Algorithm::Random => json!({ "budget": search.budget, "seed": search.seed }),
            Algorithm::Evolutionary => json!({
                "budget": search.budget,
                "population": search.population,
                "offspring": search.offspring,
                "mutation_scale": search.mutation_scale,
                "seed": search.seed,
            }),
        },
    });
    let mut doc = ReportDocument::new(argv, parameters, json!(result));
    if let Some(bytes) = bytes {
        doc = doc.with_input(&bytes);
    }
    Ok((doc, 0))
}

struct SearchArgs {
    resolution: usize,
    max_grid: u64,
    budget: usize,
    population: usize,
    offspring: usize,
    mutation_scale: f64,
    seed: u64,
    lambda: f64,
    signed: bool,
}

fn run(cli: Cli, argv: Vec<String>) -> Result<Option<(ReportDocument, u8)>, Failure> {
    let strict = !cli.lenient;
    match &cli.command {
        Command::Validate { path } => cmd_validate(argv, path, strict).map(Some),
        Command::Metric { path, metric } => cmd_metric(argv, path, strict, metric).map(Some),
        Command::Counterfactual { path, protected, out } => {
            cmd_counterfactual(argv, path, strict, protected, out.as_deref())
        }
        Command::Gen { family, traffic, out } => cmd_gen(argv, family, traffic, out.as_deref()),
        Command::Enumerate { path, horizon } => cmd_enumerate(argv, path, strict, *horizon).map(Some),
        Command::Describe { path, horizon } => cmd_describe(argv, path, strict, *horizon).map(Some),
        Command::Optimize {
            path,
            family,
            params,
            algorithm,
            resolution,
            max_grid,
            budget,
            population,
            offspring,
            mutation_scale,
            search_seed,
            lambda,
            signed,
            metric,
            traffic,
        } => {
            let search = SearchArgs {
                resolution: *resolution,
                max_grid: *max_grid,
                budget: *budget,
                population: *population,
                offspring: *offspring,
                mutation_scale: *mutation_scale,
                seed: *search_seed,
                lambda: *lambda,
                signed: *signed,
            };
            cmd_optimize(
                argv,
                strict,
                path.as_deref(),
                family.as_deref(),
                params,
                *algorithm,
                search,
                metric,
                traffic,
            )
            .map(Some)
        }
    }
}

/// The command line as echoed in reports, without flags that only affect
/// how the work is executed (so reports stay identical across worker counts).
fn echoed_args(args: impl Iterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip_value = false;
    for arg in args {
        if skip_value {
            skip_value = false;
        } else if arg == "--threads" {
            skip_value = true;
        } else if !(arg.starts_with("--threads=") || arg == "--timing") {
            out.push(arg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[INVALID_FLAGS]: --threads: {e}");
            return ExitCode::from(1);
        }
    }
    let argv = echoed_args(std::env::args().skip(1));
    let timing = cli.timing;
    let started = Instant::now();
    match run(cli, argv) {
        Ok(Some((mut doc, exit))) => {
            if timing {
                doc = doc.with_wall_time(started.elapsed().as_millis() as u64);
            }
            print!("{}", canonical_json(&doc));
            ExitCode::from(exit)
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.code, f.message);
            ExitCode::from(f.exit)
        }
    }
}

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use redsim::bounds::{expected_jumps_bound, mg1_params, renewal_function_mc, sync_fraction_bound_at};
use redsim::experiments::{export_coupled_trace, run_grid, stability_scan, GridSpec, Preset, RunOptions, ScanMode};
use redsim::rng::{derive_seed, rng_from_seed};
use redsim::sim::MetricsSummary;
use redsim::{
    find_k_epsilon, latency_upper_bound, renewal_function, run_coupled, run_simulation, sufficient_condition,
    sync_fraction_bound, waiting_time_upper_bound, CoupledOptions, Error, Fixed, InitialState, ScenarioConfig,
    SimMetrics, XSpec,
};
use serde::Serialize;
use serde_json::json;

/// Simulator and bounds engine for cancel-on-completion redundancy-d
/// scheduling with scaled Bernoulli service requirements.
#[derive(Parser)]
#[command(name = "redsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and print metrics as JSON.
    Simulate(SimulateArgs),
    /// Run a parameter grid and write CSV.
    Grid(GridArgs),
    /// Run the coupled original/auxiliary/M/G/1 systems; exit 2 on a dominance violation.
    Coupled(CoupledArgs),
    /// Print the analytical bounds of a scenario as JSON.
    Bounds(BoundsArgs),
    /// Classify arrival rates as stable or unstable and estimate the capacity.
    Scan(ScanArgs),
    /// Evaluate the renewal function m(t).
    Renewal(RenewalArgs),
}

/// Scenario selection: a TOML file and/or individual overrides.
#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of servers N.
    #[arg(long)]
    n: Option<usize>,
    /// Replicas per job d.
    #[arg(long)]
    d: Option<usize>,
    /// Scale K.
    #[arg(long)]
    k: Option<f64>,
    /// Absolute arrival rate.
    #[arg(long, conflicts_with = "lambda_over_k")]
    lambda: Option<f64>,
    /// Arrival rate as a multiple of K.
    #[arg(long)]
    lambda_over_k: Option<f64>,
    /// Distribution of X: deterministic1, exponential1 or uniform02.
    #[arg(long)]
    x: Option<XSpec>,
    /// Simulated time horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Initial period excluded from statistics.
    #[arg(long)]
    warmup: Option<f64>,
    /// Seed; repeat for several.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Comma-separated initial workloads.
    #[arg(long, value_delimiter = ',')]
    initial: Option<Vec<f64>>,
}

impl ScenarioArgs {
    fn resolve(&self, fallback: Option<ScenarioConfig>) -> redsim::Result<ScenarioConfig> {
        let mut cfg = match (&self.config, fallback) {
            (Some(path), _) => ScenarioConfig::from_path(path)?,
            (None, Some(cfg)) => cfg,
            (None, None) => {
                let (Some(n), Some(d), Some(k)) = (self.n, self.d, self.k) else {
                    return Err(Error::Config("give --config or all of --n, --d, --k".into()));
                };
                let mut cfg = ScenarioConfig::new(n, d, k, f64::NAN);
                cfg.lambda = None;
                cfg
            }
        };
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(d) = self.d {
            cfg.d = d;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(l) = self.lambda {
            cfg.set_lambda(l);
        }
        if let Some(r) = self.lambda_over_k {
            cfg.lambda = None;
            cfg.lambda_over_k = Some(r);
        }
        if let Some(x) = &self.x {
            cfg.x = x.clone();
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(w) = self.warmup {
            cfg.warmup = Some(w);
        }
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if let Some(v) = &self.initial {
            cfg.initial_state = InitialState::Explicit(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Worker threads for multiple seeds (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct GridArgs {
    /// Grid TOML file.
    #[arg(long, required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in grid: fig2, fig3, fig4 or fig5.
    #[arg(long, conflicts_with = "config")]
    preset: Option<Preset>,
    /// Output CSV; stdout when absent and the grid names none.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Omit the timestamp line.
    #[arg(long)]
    deterministic: bool,
    /// Override the base horizon.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    warmup: Option<f64>,
    /// Override the seed list; repeat for several.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct CoupledArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Start from a preset scenario (fig2 is the surplus-trace setting).
    #[arg(long)]
    preset: Option<Preset>,
    /// Write the per-event trace CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Starting surplus for the excursion bound instead of the mean post-jump surplus.
    #[arg(long)]
    surplus: Option<f64>,
    /// Also search the smallest K reaching a synchronicity fraction of 1 − epsilon.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated arrival rates to test.
    #[arg(long, value_delimiter = ',', required_unless_present = "bisect")]
    lambdas: Option<Vec<f64>>,
    /// Bisection bracket LO,HI (stable, unstable).
    #[arg(long, value_delimiter = ',', conflicts_with = "lambdas")]
    bisect: Option<Vec<f64>>,
    /// Relative bracket width at which bisection stops.
    #[arg(long, default_value_t = 0.02)]
    tol: f64,
    #[arg(long, default_value_t = 12)]
    max_steps: usize,
    /// Verdict CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct RenewalArgs {
    /// Distribution of X.
    #[arg(long, default_value = "deterministic1")]
    x: XSpec,
    /// Time argument t >= 0.
    #[arg(long)]
    t: f64,
    /// Also estimate by simulating this many renewal paths.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Dominance { .. } | Error::Logic(_) => 2,
        Error::Io { .. } => 3,
        Error::Csv(c) if c.is_io_error() => 3,
        _ => 1,
    }
}

fn print_json<T: Serialize>(value: &T) -> redsim::Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::io("<stdout>", e.into()))?;
    writeln!(out).map_err(|e| Error::io("<stdout>", e))
}

fn create(path: &Path) -> redsim::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct SeedRun {
    seed: u64,
    #[serde(flatten)]
    metrics: MetricsSummary,
}

fn simulate(args: SimulateArgs) -> redsim::Result<u8> {
    let cfg = args.scenario.resolve(None)?;
    let pool = rayon_pool(args.workers)?;
    let runs: Vec<redsim::Result<SimMetrics>> = pool.install(|| {
        use rayon::prelude::*;
        cfg.seeds.par_iter().map(|&s| run_simulation::<f64>(&cfg, s)).collect()
    });
    let mut pooled = SimMetrics::default();
    let mut per_seed = Vec::new();
    for (&seed, run) in cfg.seeds.iter().zip(runs) {
        let m = run?;
        pooled.merge(&m);
        per_seed.push(SeedRun {
            seed,
            metrics: m.summary(),
        });
    }
    print_json(&json!({ "config": cfg, "runs": per_seed, "pooled": pooled.summary() }))?;
    Ok(0)
}

fn rayon_pool(workers: usize) -> redsim::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

fn grid(args: GridArgs) -> redsim::Result<u8> {
    let mut spec = match (&args.config, args.preset) {
        (Some(path), _) => GridSpec::from_path(path)?,
        (None, Some(p)) => p.grid(),
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(h) = args.horizon {
        spec.base.horizon = h;
    }
    if let Some(w) = args.warmup {
        spec.base.warmup = Some(w);
    }
    if !args.seeds.is_empty() {
        spec.base.seeds = args.seeds.clone();
    }
    if let Some(out) = args.out {
        spec.output = Some(out);
    }
    eprintln!(
        "grid: {} cells x {} seeds = {} runs",
        spec.cell_count(),
        spec.base.seeds.len(),
        spec.cell_count() * spec.base.seeds.len()
    );
    let options = RunOptions {
        workers: args.workers,
        deterministic: args.deterministic,
    };
    let result = run_grid(&spec, &options)?;
    if spec.output.is_none() {
        result.write_csv(io::stdout().lock(), args.deterministic)?;
    }
    let errors = result.errors().count();
    if errors > 0 {
        eprintln!("grid: {errors} cell(s) failed; see the error column");
    }
    Ok(0)
}

fn coupled(args: CoupledArgs) -> redsim::Result<u8> {
    let cfg = args.scenario.resolve(args.preset.map(Preset::scenario))?;
    let seed = cfg.seeds[0];
    let run = match &args.out {
        Some(path) => export_coupled_trace(&cfg, seed, cfg.horizon, path)?,
        None => run_coupled::<Fixed>(
            &cfg,
            seed,
            CoupledOptions {
                stop_on_violation: false,
                ..Default::default()
            },
        )?,
    };
    let first = run
        .first_violation
        .as_ref()
        .map(|v| json!({ "event": v.event_index, "kind": v.kind.to_string(), "state": v.dump }));
    print_json(&json!({
        "seed": seed,
        "events": run.events,
        "max_violations": run.max_violations,
        "gap_violations": run.gap_violations,
        "surplus_violations": run.surplus_violations,
        "first_violation": first,
        "passed": run.passed(),
        "original": run.original.summary(),
        "auxiliary": run.auxiliary.summary(),
    }))?;
    Ok(if run.passed() { 0 } else { 2 })
}

fn bounds(args: BoundsArgs) -> redsim::Result<u8> {
    let cfg = args.scenario.resolve(None)?;
    let stability = sufficient_condition(&cfg)?;
    let sync = match args.surplus {
        Some(s) => sync_fraction_bound_at(&cfg, s)?,
        None => sync_fraction_bound(&cfg)?,
    };
    let waiting = waiting_time_upper_bound(&cfg).ok();
    let latency = latency_upper_bound(&cfg).ok();
    let jumps = expected_jumps_bound(&cfg, sync.surplus).ok();
    let k_epsilon = match args.epsilon {
        Some(eps) => {
            let rule: Box<dyn Fn(f64) -> f64> = match cfg.lambda_over_k {
                Some(r) => Box::new(move |k| r * k),
                None => {
                    let l = cfg.lambda();
                    Box::new(move |_| l)
                }
            };
            Some(find_k_epsilon(&cfg, eps, rule)?)
        }
        None => None,
    };
    print_json(&json!({
        "config": cfg,
        "stability": stability,
        "mg1": mg1_params(&cfg)?,
        "waiting_time_upper_bound": waiting,
        "latency": latency,
        "expected_jumps_upper": jumps,
        "sync": sync,
        "k_epsilon": k_epsilon,
    }))?;
    Ok(0)
}

fn scan(args: ScanArgs) -> redsim::Result<u8> {
    let cfg = args.scenario.resolve(None)?;
    let mode = match (args.lambdas, args.bisect) {
        (Some(l), _) => ScanMode::Grid(l),
        (None, Some(b)) if b.len() == 2 => ScanMode::Bisection {
            lo: b[0],
            hi: b[1],
            rel_tol: args.tol,
            max_steps: args.max_steps,
        },
        (None, Some(b)) => {
            return Err(Error::Config(format!("--bisect needs LO,HI, got {} values", b.len())));
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    let report = stability_scan(&cfg, &mode, args.workers)?;
    match &args.out {
        Some(path) => report.write_csv(create(path)?)?,
        None => report.write_csv(io::stdout().lock())?,
    }
    if report.all_inconclusive {
        eprintln!("scan: every verdict was inconclusive; no capacity estimate");
    }
    let summary = json!({
        "capacity_estimate": report.capacity_estimate,
        "bracket": report.bracket,
        "analytical_capacity": report.analytical_capacity,
        "all_inconclusive": report.all_inconclusive,
    });
    eprintln!("{}", serde_json::to_string(&summary).expect("plain values serialize"));
    Ok(0)
}

fn renewal(args: RenewalArgs) -> redsim::Result<u8> {
    let closed = match renewal_function(&args.x, args.t) {
        Ok(v) => Some(v),
        Err(Error::UnsupportedClosedForm(_)) => None,
        Err(e) => return Err(e),
    };
    let mc = match args.paths {
        Some(p) => {
            let mut rng = rng_from_seed(derive_seed(args.seed, 0));
            Some(renewal_function_mc(&args.x, args.t, p, &mut rng)?)
        }
        None => None,
    };
    print_json(&json!({
        "x": args.x.name(),
        "t": args.t,
        "value": closed,
        "monte_carlo": mc,
    }))?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            // usage errors are configuration errors; 2 is reserved for violations
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Grid(a) => grid(a),
        Command::Coupled(a) => coupled(a),
        Command::Bounds(a) => bounds(a),
        Command::Scan(a) => scan(a),
        Command::Renewal(a) => renewal(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

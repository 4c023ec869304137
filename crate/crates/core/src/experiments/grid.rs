use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{t_interval, thread_pool};
use crate::bounds::{latency_upper_bound, sync_fraction_bound, waiting_time_upper_bound};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sim::{run_simulation, SimMetrics};

/// Parameter sets of the published figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Surplus processes: λ = 50, N = 8, d = 2, K = 100.
    Fig2,
    /// Synchronicity fraction versus K for several N, λ/K ∈ {0.5, 0.9}.
    Fig3,
    /// Mean waiting time versus K for several N, λ/K ∈ {0.5, 0.9}.
    Fig4,
    /// Mean latency minus waiting time versus K for several N, λ/K = 0.5.
    Fig5,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            "fig4" => Ok(Preset::Fig4),
            "fig5" => Ok(Preset::Fig5),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

const PRESET_N: [usize; 3] = [2, 4, 8];
const PRESET_K: [f64; 5] = [10.0, 20.0, 50.0, 100.0, 200.0];

impl Preset {
    /// Single scenario behind the preset; sweeps start from it.
    pub fn scenario(self) -> ScenarioConfig {
        match self {
            Preset::Fig2 => ScenarioConfig::new(8, 2, 100.0, 50.0).horizon(1e4),
            _ => ScenarioConfig::with_load_ratio(2, 2, 10.0, 0.5)
                .horizon(2e4)
                .seeds(1..=4),
        }
    }

    pub fn grid(self) -> GridSpec {
        let sweep = match self {
            Preset::Fig2 => Sweep::default(),
            Preset::Fig3 | Preset::Fig4 => Sweep {
                n: Some(PRESET_N.to_vec()),
                k: Some(PRESET_K.to_vec()),
                lambda_over_k: Some(vec![0.5, 0.9]),
            },
            Preset::Fig5 => Sweep {
                n: Some(PRESET_N.to_vec()),
                k: Some(PRESET_K.to_vec()),
                lambda_over_k: Some(vec![0.5]),
            },
        };
        GridSpec {
            base: self.scenario(),
            sweep,
            output: None,
            preset: Some(self),
        }
    }
}

/// Values swept over; an absent list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub n: Option<Vec<usize>>,
    #[serde(default)]
    pub k: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda_over_k: Option<Vec<f64>>,
}

/// A base scenario crossed with sweep lists. Cells enumerate the cartesian
/// product with `N` outermost and `λ/K` innermost.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub base: ScenarioConfig,
    pub sweep: Sweep,
    pub output: Option<PathBuf>,
    pub preset: Option<Preset>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default)]
    preset: Option<Preset>,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    base: Option<ScenarioConfig>,
    #[serde(default)]
    sweep: Option<Sweep>,
}

impl GridSpec {
    /// Parses a grid file. A `preset` supplies defaults that `base` and the
    /// individual `sweep` lists override.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: GridFile = toml::from_str(text)?;
        let mut spec = match (file.preset, file.base) {
            (Some(p), base) => {
                let mut spec = p.grid();
                if let Some(base) = base {
                    spec.base = base;
                }
                spec
            }
            (None, Some(base)) => GridSpec {
                base,
                sweep: Sweep::default(),
                output: None,
                preset: None,
            },
            (None, None) => return Err(Error::Config("a grid needs a preset or a [base] scenario".into())),
        };
        if let Some(sweep) = file.sweep {
            if sweep.n.is_some() {
                spec.sweep.n = sweep.n;
            }
            if sweep.k.is_some() {
                spec.sweep.k = sweep.k;
            }
            if sweep.lambda_over_k.is_some() {
                spec.sweep.lambda_over_k = sweep.lambda_over_k;
            }
        }
        spec.output = file.output;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn cell_count(&self) -> usize {
        let len = |v: &Option<Vec<_>>| v.as_ref().map_or(1, Vec::len);
        self.sweep.n.as_ref().map_or(1, Vec::len) * len(&self.sweep.k) * len(&self.sweep.lambda_over_k)
    }

    /// Scenario of every cell in cell-index order.
    pub fn cells(&self) -> Vec<ScenarioConfig> {
        let ns = self.sweep.n.clone().unwrap_or_else(|| vec![self.base.n]);
        let ks = self.sweep.k.clone().unwrap_or_else(|| vec![self.base.k]);
        let ratios: Vec<Option<f64>> = match &self.sweep.lambda_over_k {
            Some(r) => r.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut cells = Vec::with_capacity(self.cell_count());
        for &n in &ns {
            for &k in &ks {
                for &ratio in &ratios {
                    let mut cfg = self.base.clone();
                    cfg.n = n;
                    cfg.k = k;
                    if let Some(r) = ratio {
                        cfg.lambda = None;
                        cfg.lambda_over_k = Some(r);
                    }
                    cells.push(cfg);
                }
            }
        }
        cells
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |v: &Option<Vec<f64>>| v.as_ref().is_some_and(Vec::is_empty);
        if self.sweep.n.as_ref().is_some_and(Vec::is_empty) || empty(&self.sweep.k) || empty(&self.sweep.lambda_over_k)
        {
            return Err(Error::Config("sweep lists must not be empty".into()));
        }
        if self.base.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    /// One simulation run.
    Seed,
    /// Seed average with 95% interval half-widths.
    Aggregate,
    /// The cell could not be run.
    Error,
}

/// One CSV row. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell: usize,
    pub row_kind: RowKind,
    pub seed: Option<u64>,
    pub n: usize,
    pub d: usize,
    pub k: f64,
    pub lambda: f64,
    pub lambda_over_k: f64,
    pub x: String,
    pub horizon: f64,
    pub warmup: f64,
    pub sync_fraction: Option<f64>,
    pub sync_fraction_ci: Option<f64>,
    pub mean_w: Option<f64>,
    pub mean_w_ci: Option<f64>,
    pub mean_t: Option<f64>,
    pub mean_t_ci: Option<f64>,
    pub mean_t_minus_w: Option<f64>,
    pub mean_t_minus_w_ci: Option<f64>,
    pub mean_max_workload: Option<f64>,
    pub final_max_workload: Option<f64>,
    pub jobs_a: Option<u64>,
    pub jobs_b: Option<u64>,
    pub jobs_b1: Option<u64>,
    pub jobs_c: Option<u64>,
    pub jobs_total: Option<u64>,
    pub waiting_time_upper_bound: Option<f64>,
    pub latency_upper_bound: Option<f64>,
    pub sync_fraction_lower: Option<f64>,
    pub error: Option<String>,
}

pub const CSV_COLUMNS: [&str; 30] = [
    "cell",
    "row_kind",
    "seed",
    "n",
    "d",
    "k",
    "lambda",
    "lambda_over_k",
    "x",
    "horizon",
    "warmup",
    "sync_fraction",
    "sync_fraction_ci",
    "mean_w",
    "mean_w_ci",
    "mean_t",
    "mean_t_ci",
    "mean_t_minus_w",
    "mean_t_minus_w_ci",
    "mean_max_workload",
    "final_max_workload",
    "jobs_a",
    "jobs_b",
    "jobs_b1",
    "jobs_c",
    "jobs_total",
    "waiting_time_upper_bound",
    "latency_upper_bound",
    "sync_fraction_lower",
    "error",
];

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl GridRow {
    fn skeleton(cell: usize, kind: RowKind, seed: Option<u64>, cfg: &ScenarioConfig) -> Self {
        GridRow {
            cell,
            row_kind: kind,
            seed,
            n: cfg.n,
            d: cfg.d,
            k: cfg.k,
            lambda: cfg.lambda(),
            lambda_over_k: cfg.lambda() / cfg.k,
            x: cfg.x.name().to_string(),
            horizon: cfg.horizon,
            warmup: cfg.warmup_time(),
            sync_fraction: None,
            sync_fraction_ci: None,
            mean_w: None,
            mean_w_ci: None,
            mean_t: None,
            mean_t_ci: None,
            mean_t_minus_w: None,
            mean_t_minus_w_ci: None,
            mean_max_workload: None,
            final_max_workload: None,
            jobs_a: None,
            jobs_b: None,
            jobs_b1: None,
            jobs_c: None,
            jobs_total: None,
            waiting_time_upper_bound: None,
            latency_upper_bound: None,
            sync_fraction_lower: None,
            error: None,
        }
    }

    fn with_bounds(mut self, bounds: &CellBounds) -> Self {
        self.waiting_time_upper_bound = bounds.waiting;
        self.latency_upper_bound = bounds.latency;
        self.sync_fraction_lower = bounds.sync_lower;
        self
    }

    fn from_metrics(cell: usize, seed: u64, cfg: &ScenarioConfig, m: &SimMetrics, bounds: &CellBounds) -> Self {
        let mut row = Self::skeleton(cell, RowKind::Seed, Some(seed), cfg).with_bounds(bounds);
        row.sync_fraction = finite(m.sync_fraction());
        row.mean_w = finite(m.mean_waiting());
        row.mean_t = finite(m.mean_latency());
        row.mean_t_minus_w = finite(m.mean_latency_minus_waiting());
        row.mean_max_workload = finite(m.mean_max_workload());
        row.final_max_workload = finite(m.final_max);
        row.jobs_a = Some(m.jobs.a);
        row.jobs_b = Some(m.jobs.b);
        row.jobs_b1 = Some(m.jobs.b1);
        row.jobs_c = Some(m.jobs.c);
        row.jobs_total = Some(m.jobs.total());
        row
    }

    fn aggregate(cell: usize, cfg: &ScenarioConfig, seeds: &[GridRow], bounds: &CellBounds) -> Self {
        let mut row = Self::skeleton(cell, RowKind::Aggregate, None, cfg).with_bounds(bounds);
        let column = |f: fn(&GridRow) -> Option<f64>| -> (Option<f64>, Option<f64>) {
            let values: Vec<f64> = seeds.iter().filter_map(f).collect();
            match t_interval(&values) {
                Some(iv) if values.len() == seeds.len() => (Some(iv.mean), iv.half_width),
                _ => (None, None),
            }
        };
        (row.sync_fraction, row.sync_fraction_ci) = column(|r| r.sync_fraction);
        (row.mean_w, row.mean_w_ci) = column(|r| r.mean_w);
        (row.mean_t, row.mean_t_ci) = column(|r| r.mean_t);
        (row.mean_t_minus_w, row.mean_t_minus_w_ci) = column(|r| r.mean_t_minus_w);
        row.mean_max_workload = column(|r| r.mean_max_workload).0;
        row.final_max_workload = column(|r| r.final_max_workload).0;
        let total = |f: fn(&GridRow) -> Option<u64>| seeds.iter().map(f).sum::<Option<u64>>();
        row.jobs_a = total(|r| r.jobs_a);
        row.jobs_b = total(|r| r.jobs_b);
        row.jobs_b1 = total(|r| r.jobs_b1);
        row.jobs_c = total(|r| r.jobs_c);
        row.jobs_total = total(|r| r.jobs_total);
        row
    }
}

/// Analytical columns of one cell; absent where a bound does not apply.
struct CellBounds {
    waiting: Option<f64>,
    latency: Option<f64>,
    sync_lower: Option<f64>,
}

impl CellBounds {
    fn of(cfg: &ScenarioConfig) -> Self {
        let latency = latency_upper_bound(cfg).ok();
        CellBounds {
            waiting: waiting_time_upper_bound(cfg).ok(),
            latency: latency.map(|l| l.latency),
            sync_lower: sync_fraction_bound(cfg).ok().and_then(|r| r.sync_fraction_lower),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    /// Omit the timestamp line so that reruns are byte-identical.
    pub deterministic: bool,
}

/// Rows of a finished grid, sorted by cell, seed rows before the aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
}

impl GridResult {
    /// Writes the CSV. Unless `deterministic`, the first line is a
    /// `#`-prefixed generation timestamp.
    pub fn write_csv<W: Write>(&self, mut out: W, deterministic: bool) -> Result<()> {
        if !deterministic {
            let secs = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            writeln!(out, "# generated at unix time {secs}").map_err(|e| Error::io("<csv>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(CSV_COLUMNS)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<GridRow>, _>>()?;
        Ok(GridResult { rows })
    }

    /// Seed-aggregated rows.
    pub fn aggregates(&self) -> impl Iterator<Item = &GridRow> {
        self.rows.iter().filter(|r| r.row_kind == RowKind::Aggregate)
    }

    pub fn errors(&self) -> impl Iterator<Item = &GridRow> {
        self.rows.iter().filter(|r| r.row_kind == RowKind::Error)
    }
}

/// Runs every (cell, seed) pair on `options.workers` threads. Cell `c` with
/// seed `s` simulates with sub-seed `derive_seed(s, c)`. Invalid cells yield
/// an error row and do not stop the grid. If the grid names an output file
/// it is created before any simulation starts and filled at the end.
pub fn run_grid(grid: &GridSpec, options: &RunOptions) -> Result<GridResult> {
    grid.validate()?;
    let file = match &grid.output {
        Some(path) => Some((path, File::create(path).map_err(|e| Error::io(path, e))?)),
        None => None,
    };
    let cells = grid.cells();
    let seeds = grid.base.seeds.clone();
    let tasks: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();

    let pool = thread_pool(options.workers)?;
    let runs: Vec<Result<SimMetrics>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, s)| {
                cells[c].validate()?;
                run_simulation::<f64>(&cells[c], derive_seed(s, c as u64))
            })
            .collect()
    });

    let mut rows = Vec::new();
    for (c, cfg) in cells.iter().enumerate() {
        let bounds = CellBounds::of(cfg);
        let mut cell_rows = Vec::with_capacity(seeds.len());
        let mut failure = None;
        for (i, &seed) in seeds.iter().enumerate() {
            match &runs[c * seeds.len() + i] {
                Ok(m) => cell_rows.push(GridRow::from_metrics(c, seed, cfg, m, &bounds)),
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(message) = failure {
            let mut row = GridRow::skeleton(c, RowKind::Error, None, cfg);
            row.error = Some(message);
            rows.push(row);
            continue;
        }
        let agg = GridRow::aggregate(c, cfg, &cell_rows, &bounds);
        rows.extend(cell_rows);
        rows.push(agg);
    }
    let result = GridResult { rows };
    if let Some((path, f)) = file {
        result
            .write_csv(std::io::BufWriter::new(f), options.deterministic)
            .map_err(|e| match e {
                Error::Io { source, .. } => Error::io(path, source),
                other => other,
            })?;
    }
    Ok(result)
}

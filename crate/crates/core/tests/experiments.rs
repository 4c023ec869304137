use std::path::Path;

use redsim::experiments::{
    export_coupled_trace, run_grid, stability_scan, GridResult, GridSpec, Preset, RowKind, RunOptions, ScanMode, Sweep,
    Verdict, CSV_COLUMNS, TRACE_COLUMNS,
};
use redsim::{Error, ScenarioConfig};

fn small_grid() -> GridSpec {
    GridSpec {
        base: ScenarioConfig::with_load_ratio(2, 2, 5.0, 0.5)
            .horizon(500.0)
            .seeds(1..=3),
        sweep: Sweep {
            n: Some(vec![2, 3]),
            k: Some(vec![5.0]),
            lambda_over_k: Some(vec![0.5, 0.8]),
        },
        output: None,
        preset: None,
    }
}

fn csv_bytes(result: &GridResult, deterministic: bool) -> Vec<u8> {
    let mut out = Vec::new();
    result.write_csv(&mut out, deterministic).unwrap();
    out
}

#[test]
fn grid_output_is_byte_identical_across_runs_and_worker_counts() {
    let grid = small_grid();
    let a = run_grid(
        &grid,
        &RunOptions {
            workers: 1,
            deterministic: true,
        },
    )
    .unwrap();
    let b = run_grid(
        &grid,
        &RunOptions {
            workers: 3,
            deterministic: true,
        },
    )
    .unwrap();
    assert_eq!(csv_bytes(&a, true), csv_bytes(&b, true));
    assert_eq!(a.rows.len(), 4 * (3 + 1));

    let text = String::from_utf8(csv_bytes(&a, true)).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
    let stamped = String::from_utf8(csv_bytes(&a, false)).unwrap();
    assert!(stamped.starts_with("# generated at unix time "));
    assert_eq!(
        stamped.lines().skip(1).collect::<Vec<_>>(),
        text.lines().collect::<Vec<_>>()
    );
}

#[test]
fn grid_csv_round_trips_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.csv");
    let grid = GridSpec {
        output: Some(path.clone()),
        ..small_grid()
    };
    let result = run_grid(
        &grid,
        &RunOptions {
            workers: 1,
            deterministic: false,
        },
    )
    .unwrap();
    assert_eq!(GridResult::read_csv(&path).unwrap(), result);
}

#[test]
fn n_equal_d_cells_are_always_synchronized() {
    let result = run_grid(&small_grid(), &RunOptions::default()).unwrap();
    for row in result.rows.iter().filter(|r| r.n == 2) {
        assert_eq!(row.sync_fraction, Some(1.0));
    }
    for row in result.rows.iter().filter(|r| r.n == 3 && r.row_kind == RowKind::Seed) {
        assert!(row.sync_fraction.unwrap() < 1.0);
        let jobs = [row.jobs_a, row.jobs_b, row.jobs_b1, row.jobs_c].map(Option::unwrap);
        assert_eq!(jobs.iter().sum::<u64>(), row.jobs_total.unwrap());
    }
}

#[test]
fn invalid_cell_becomes_an_error_row() {
    let mut grid = small_grid();
    grid.sweep.n = Some(vec![1, 2]);
    let result = run_grid(&grid, &RunOptions::default()).unwrap();
    let errors: Vec<_> = result.errors().collect();
    assert_eq!(errors.len(), 2);
    assert!(errors
        .iter()
        .all(|r| r.n == 1 && r.error.is_some() && r.mean_w.is_none()));
    assert_eq!(result.aggregates().count(), 2);
}

#[test]
fn unwritable_output_fails_before_simulating() {
    let grid = GridSpec {
        output: Some(Path::new("/nonexistent-dir/out.csv").to_path_buf()),
        ..small_grid()
    };
    assert!(matches!(run_grid(&grid, &RunOptions::default()), Err(Error::Io { .. })));
}

#[test]
fn grid_files_layer_over_presets() {
    let spec = GridSpec::from_toml_str(
        r#"
        preset = "fig3"
        output = "out.csv"
        [sweep]
        k = [10.0, 20.0]
        "#,
    )
    .unwrap();
    assert_eq!(spec.preset, Some(Preset::Fig3));
    assert_eq!(spec.cell_count(), 3 * 2 * 2);
    let cells = spec.cells();
    assert_eq!((cells[0].n, cells[0].k, cells[0].lambda()), (2, 10.0, 5.0));
    assert_eq!((cells[1].n, cells[1].k, cells[1].lambda()), (2, 10.0, 9.0));
    assert_eq!((cells[11].n, cells[11].k, cells[11].lambda()), (8, 20.0, 18.0));

    assert_eq!(Preset::Fig5.grid().cell_count(), 15);
    assert_eq!(Preset::Fig2.grid().cell_count(), 1);
    assert!(GridSpec::from_toml_str("output = \"x.csv\"").is_err());
    assert!(GridSpec::from_toml_str("preset = \"fig9\"").is_err());
}

#[test]
fn waiting_time_respects_its_upper_bound() {
    let grid = GridSpec {
        base: ScenarioConfig::with_load_ratio(2, 2, 10.0, 0.5)
            .horizon(2e4)
            .seeds(1..=8),
        sweep: Sweep {
            n: Some(vec![2, 4]),
            ..Sweep::default()
        },
        output: None,
        preset: None,
    };
    let result = run_grid(&grid, &RunOptions::default()).unwrap();
    for row in result.aggregates() {
        let (w, ci, bound) = (
            row.mean_w.unwrap(),
            row.mean_w_ci.unwrap(),
            row.waiting_time_upper_bound.unwrap(),
        );
        assert!(w <= bound + ci, "N={}: {w} ± {ci} vs {bound}", row.n);
        if row.n == 2 {
            assert!((w - bound).abs() <= ci, "N=2: {w} ± {ci} vs {bound}");
        }
    }
}

fn read_trace(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), TRACE_COLUMNS);
    r.records().map(Result::unwrap).collect()
}

#[test]
fn exported_trace_shows_auxiliary_dominance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let run = export_coupled_trace(&Preset::Fig2.scenario(), 7, 50.0, &path).unwrap();
    assert!(run.passed());
    let rows = read_trace(&path);
    assert_eq!(rows.len() as u64, run.events);
    assert!(rows.len() > 1000);
    for row in &rows {
        let surplus: f64 = row[3].parse().unwrap();
        let aux: f64 = row[4].parse().unwrap();
        let max: f64 = row[5].parse().unwrap();
        let mg1: f64 = row[6].parse().unwrap();
        assert!(aux >= surplus && max <= mg1);
        assert_eq!((&row[7], &row[8]), ("true", "true"));
    }
}

#[test]
fn trace_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    let run = export_coupled_trace(&Preset::Fig2.scenario(), 1, 0.0, &empty).unwrap();
    assert_eq!(run.events, 0);
    assert_eq!(std::fs::read_to_string(&empty).unwrap().lines().count(), 1);

    let synced = dir.path().join("synced.csv");
    let cfg = ScenarioConfig::new(3, 3, 10.0, 2.0);
    export_coupled_trace(&cfg, 2, 200.0, &synced).unwrap();
    let rows = read_trace(&synced);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| &r[3] == "0" && &r[4] == "0"));

    let bad = dir.path().join("missing").join("t.csv");
    assert!(matches!(
        export_coupled_trace(&cfg, 2, 10.0, &bad),
        Err(Error::Io { .. })
    ));
}

#[test]
fn scan_finds_capacity_of_n_equal_d() {
    let cfg = ScenarioConfig::new(2, 2, 50.0, 25.0).horizon(2e5);
    let report = stability_scan(&cfg, &ScanMode::Grid(vec![30.0, 40.0, 60.0, 70.0]), 0).unwrap();
    assert_eq!(report.analytical_capacity, 50.0);
    let cap = report.capacity_estimate.expect("a stable/unstable pair");
    assert!((cap - 50.0).abs() <= 0.15 * 50.0, "capacity {cap}");
    assert!(!report.all_inconclusive);

    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
}

#[test]
fn bisection_narrows_the_bracket() {
    let cfg = ScenarioConfig::new(2, 2, 20.0, 10.0).horizon(1e5);
    let mode = ScanMode::Bisection {
        lo: 10.0,
        hi: 26.0,
        rel_tol: 0.2,
        max_steps: 6,
    };
    let report = stability_scan(&cfg, &mode, 0).unwrap();
    let (lo, hi) = report.bracket.unwrap();
    assert!(lo < hi && hi - lo < 16.0);
    let cap = report.capacity_estimate.unwrap();
    assert!((cap - 20.0).abs() <= 0.15 * 20.0, "capacity {cap}");
    assert!(report
        .verdicts
        .windows(2)
        .all(|w| w[0].lambda_tested < w[1].lambda_tested));

    let bad = ScanMode::Bisection {
        lo: 5.0,
        hi: 8.0,
        rel_tol: 0.1,
        max_steps: 4,
    };
    assert!(matches!(stability_scan(&cfg, &bad, 0), Err(Error::Search(_))));
    assert!(matches!(
        stability_scan(&cfg, &ScanMode::Grid(vec![]), 0),
        Err(Error::Config(_))
    ));
    assert_eq!(
        stability_scan(&cfg, &ScanMode::Grid(vec![30.0]), 0).unwrap().verdicts[0].verdict,
        Verdict::Unstable
    );
}

//! Experiment drivers: parameter grids, stability scans and trace export.

mod grid;
mod stability;
mod trace;

pub use grid::{run_grid, GridResult, GridRow, GridSpec, Preset, RowKind, RunOptions, Sweep, CSV_COLUMNS};
pub use stability::{stability_scan, verdict, ScanMode, ScanReport, StabilityVerdict, Verdict, MIN_VERDICT_SAMPLES};
pub use trace::{export_coupled_trace, TRACE_COLUMNS};

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Sample mean with the half-width of its 95% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    /// `None` for fewer than two observations.
    pub half_width: Option<f64>,
}

impl Interval {
    pub fn contains(&self, value: f64) -> bool {
        self.half_width.is_some_and(|h| (self.mean - value).abs() <= h)
    }
}

/// 95% Student-t interval for the mean of `values`; `None` if empty.
pub fn t_interval(values: &[f64]) -> Option<Interval> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Some(Interval { mean, half_width: None });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    Some(Interval {
        mean,
        half_width: Some(t * (var / n as f64).sqrt()),
    })
}

fn thread_pool(workers: usize) -> crate::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| crate::Error::Config(format!("cannot start {workers} workers: {e}")))
}
